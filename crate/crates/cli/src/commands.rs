use std::fs;
use std::path::{Path, PathBuf};

use pugan::data::{
    list_images, load_image, load_paired, load_synthetic, make_fixture_set, save_false_color, save_gray, save_image,
    Split,
};
use pugan::metrics::{EvalItem, MetricReport};
use pugan::trainer::{pretrain_par as run_par, train_pugan, Checkpoint, PuganModels, RunOptions, Stage};
use pugan::{Error, ErrorKind, Result};

use crate::config::{CliConfig, ConfigFile, TrainOverrides};

pub fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Checkpoint => 4,
        ErrorKind::Runtime => 1,
    }
}

/// A checkpoint that cannot be read counts as a checkpoint error, not a
/// data error.
fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| match e {
        Error::Io { .. } => Error::Checkpoint(e.to_string()),
        other => other,
    })
}

pub fn pretrain_par(config: Option<&Path>, flags: &TrainOverrides) -> Result<()> {
    let cfg = CliConfig::for_training(Stage::Par, &ConfigFile::load(config)?, flags)?.train;
    let data = load_synthetic(&flags.data_dir, Some(cfg.image_size))?;
    log::info!("pretraining on {} samples at {}px", data.len(), cfg.image_size);
    let run = run_par(&data, &cfg, RunOptions { run_dir: Some(&flags.out_dir), ..Default::default() })?;
    log::info!(
        "par loss {:.4} -> {:.4}; checkpoints in {}",
        run.initial_loss.total,
        run.final_loss.total,
        flags.out_dir.join("checkpoints").display()
    );
    Ok(())
}

pub fn train(config: Option<&Path>, flags: &TrainOverrides, par_ckpt: &Path) -> Result<()> {
    let cfg = CliConfig::for_training(Stage::Pugan, &ConfigFile::load(config)?, flags)?.train;
    let par = load_checkpoint(par_ckpt)?;
    par.require_stage(Stage::Par)?;
    let data = load_paired(&flags.data_dir, Split::Train, cfg.image_size)?;
    log::info!("training on {} pairs at {}px", data.len(), cfg.image_size);
    train_pugan(&data, &par, &cfg, RunOptions { run_dir: Some(&flags.out_dir), ..Default::default() })?;
    log::info!("checkpoints in {}", flags.out_dir.join("checkpoints").display());
    Ok(())
}

fn inputs(input: &Path) -> Result<Vec<(String, PathBuf)>> {
    if input.is_dir() {
        return Ok(list_images(input)?.into_iter().collect());
    }
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Data(format!("cannot take a file name from {}", input.display())))?;
    Ok(vec![(stem.to_string(), input.to_path_buf())])
}

pub fn enhance(ckpt: &Path, input: &Path, output: &Path, intermediates: bool) -> Result<()> {
    let ck = load_checkpoint(ckpt)?;
    let models = PuganModels::from_checkpoint(&ck)?;
    let size = ck.config.image_size;
    let items = inputs(input)?;
    if items.is_empty() {
        return Err(Error::Data(format!("no images found in {}", input.display())));
    }
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    for (stem, path) in &items {
        let image = load_image(path, Some(size))?;
        let (enhanced, par) = models.enhance(&image)?;
        save_image(&enhanced, &output.join(format!("{stem}.png")))?;
        if intermediates {
            save_image(&par.j_prime, &output.join(format!("{stem}_jprime.png")))?;
            save_false_color(par.t.tensor(), &output.join(format!("{stem}_t.png")))?;
            save_gray(par.d1.tensor(), &output.join(format!("{stem}_d1.png")))?;
        }
    }
    log::info!("enhanced {} image(s) into {}", items.len(), output.display());
    Ok(())
}

pub fn eval(pred: &Path, gt: Option<&Path>, report: &Path, metrics: Option<&str>, config: Option<&Path>) -> Result<()> {
    let cli = CliConfig::for_eval(&ConfigFile::load(config)?, metrics, gt.is_some())?;
    let preds = list_images(pred)?;
    let refs = gt.map(list_images).transpose()?;
    if let Some(refs) = &refs {
        let orphans: Vec<String> = preds
            .keys()
            .filter(|k| !refs.contains_key(*k))
            .chain(refs.keys().filter(|k| !preds.contains_key(*k)))
            .cloned()
            .collect();
        if !orphans.is_empty() {
            return Err(Error::Unpaired(orphans));
        }
    }
    let mut loaded = Vec::with_capacity(preds.len());
    for (stem, path) in &preds {
        let p = load_image(path, None)?;
        let r = match &refs {
            Some(refs) => {
                let r = load_image(&refs[stem], None)?;
                if (r.height(), r.width()) != (p.height(), p.width()) {
                    return Err(Error::Data(format!(
                        "`{stem}`: prediction is {}x{} but ground truth is {}x{}",
                        p.width(),
                        p.height(),
                        r.width(),
                        r.height()
                    )));
                }
                Some(r)
            }
            None => None,
        };
        loaded.push((stem.clone(), p, r));
    }
    let items: Vec<EvalItem<'_>> = loaded
        .iter()
        .map(|(id, p, r)| EvalItem { id, prediction: p, reference: r.as_ref() })
        .collect();
    let result = MetricReport::compute(&items, &cli.metrics, &cli.train.metrics)?;
    result.write(report)?;
    for (name, value) in result.means() {
        println!("{name}\t{value:.6}");
    }
    Ok(())
}

pub fn fixtures(out: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    let set = make_fixture_set(count, size, seed)?;
    set.write(out)?;
    set.to_paired()?.write(out, Split::Train)?;
    log::info!("wrote {count} fixtures of {size}px to {}", out.display());
    Ok(())
}
