//! Two-stage training: parameter-estimator pretraining, then alternating
//! generator / discriminator updates with the estimator frozen.

mod checkpoint;
mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_manifest, replace_manifest, Checkpoint, Manifest, TensorEntry, MAGIC, SCHEMA_VERSION};
pub use config::{lr_at, ModelConfig, Stage, TrainConfig};

use crate::data::{batch_plan, prefetch, prefetch_workers, PairedDataset, SyntheticDataset};
use crate::discriminators::{ContentDiscriminator, StyleDiscriminator};
use crate::error::{Error, Result};
use crate::losses::{discriminator_loss, total_generator_loss, LossWeights, PerceptualExtractor};
use crate::nn::{scalar, Mode, ParameterStore};
use crate::par_subnet::{
    par_loss_terms, ParOutputs, ParSubnet, ATTENUATION_PREFIX, DEPTH_PREFIX, TRANSMISSION_PREFIX,
};
use crate::physics::{DepthMap, Image};
use crate::tsie::{DqConfig, Generator};

pub const PAR_GROUP: &str = "par/";
pub const GENERATOR_GROUP: &str = "generator/";
pub const D1_GROUP: &str = "d1/";
pub const D2_GROUP: &str = "d2/";

/// Independent seed for component `k` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k.wrapping_mul(0xBF58_476D_1CE4_E5B9)) ^ k
}

const SEED_PAR: u64 = 0;
const SEED_GENERATOR: u64 = 1;
const SEED_D1: u64 = 2;
const SEED_D2: u64 = 3;
const SEED_EXTRACTOR: u64 = 4;
const SEED_SHUFFLE: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParPhase {
    Attenuation,
    Depth,
}

impl fmt::Display for ParPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParPhase::Attenuation => "attenuation",
            ParPhase::Depth => "depth",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParLogRow {
    pub epoch: usize,
    pub step: usize,
    pub phase: ParPhase,
    pub par_loss: f64,
    pub beta_term: f64,
    pub depth_term: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuganLogRow {
    pub epoch: usize,
    pub step: usize,
    pub g_loss: f64,
    pub d1_loss: f64,
    pub d2_loss: f64,
    pub l1: f64,
    pub perceptual: f64,
    pub lr: f64,
}

/// Progress hooks. Every method has an empty default.
pub trait TrainObserver {
    fn on_par_step(&mut self, _row: &ParLogRow) {}
    fn on_par_phase_end(&mut self, _phase: ParPhase, _par: &ParSubnet) {}
    fn on_pugan_step(&mut self, _row: &PuganLogRow) {}
    fn on_checkpoint(&mut self, _path: &Path) {}
}

struct Silent;

impl TrainObserver for Silent {}

/// Optional extras for a training run.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Where to write the config snapshot, checkpoints and `log.csv`.
    pub run_dir: Option<&'a Path>,
    /// Starting weights for parameter-estimator pretraining.
    pub init: Option<&'a Checkpoint>,
    pub observer: Option<&'a mut dyn TrainObserver>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: Option<Stage>,
    pub checkpoints: Vec<String>,
    pub latest: Option<String>,
}

/// `run/{config.snapshot, checkpoints/epoch_N.ckpt, log.csv, manifest.json}`.
pub struct RunDir {
    root: PathBuf,
    log: csv::Writer<fs::File>,
    manifest: RunManifest,
}

impl RunDir {
    pub const CONFIG: &'static str = "config.snapshot";
    pub const LOG: &'static str = "log.csv";
    pub const MANIFEST: &'static str = "manifest.json";
    pub const CHECKPOINTS: &'static str = "checkpoints";

    pub fn create(root: &Path, cfg: &TrainConfig) -> Result<Self> {
        let ckpts = root.join(Self::CHECKPOINTS);
        fs::create_dir_all(&ckpts).map_err(|e| Error::io(&ckpts, e))?;
        let snapshot = serde_json::to_string_pretty(cfg).map_err(|e| Error::Config(e.to_string()))?;
        let cfg_path = root.join(Self::CONFIG);
        fs::write(&cfg_path, snapshot).map_err(|e| Error::io(&cfg_path, e))?;
        let log_path = root.join(Self::LOG);
        let log = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(&log_path).map_err(|e| Error::Data(format!("{}: {e}", log_path.display())))?;
        let dir = Self { root: root.to_path_buf(), log, manifest: RunManifest { stage: Some(cfg.stage), ..Default::default() } };
        dir.write_manifest()?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn write_header(&mut self, header: &[&str]) -> Result<()> {
        self.log.write_record(header).map_err(|e| Error::Data(e.to_string()))?;
        self.log.flush().map_err(|e| Error::io(self.root.join(Self::LOG), e))
    }

    fn log_row<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.log.serialize(row).map_err(|e| Error::Data(e.to_string()))?;
        self.log.flush().map_err(|e| Error::io(self.root.join(Self::LOG), e))
    }

    pub fn checkpoint_path(&self, epoch: usize) -> PathBuf {
        self.root.join(Self::CHECKPOINTS).join(format!("epoch_{epoch}.ckpt"))
    }

    fn save(&mut self, ck: &Checkpoint, epoch: usize) -> Result<PathBuf> {
        let path = self.checkpoint_path(epoch);
        ck.save(&path)?;
        let rel = format!("{}/epoch_{epoch}.ckpt", Self::CHECKPOINTS);
        self.manifest.checkpoints.push(rel.clone());
        self.manifest.latest = Some(rel);
        self.write_manifest()?;
        Ok(path)
    }

    fn write_manifest(&self) -> Result<()> {
        let path = self.root.join(Self::MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Path of the most recent checkpoint recorded in a run directory.
pub fn latest_checkpoint(run_dir: &Path) -> Result<PathBuf> {
    let path = run_dir.join(RunDir::MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let latest = manifest
        .latest
        .ok_or_else(|| Error::Checkpoint(format!("{} lists no checkpoint", path.display())))?;
    Ok(run_dir.join(latest))
}

fn adam(vars: Vec<Var>, lr: f64, cfg: &TrainConfig) -> Result<AdamW> {
    let (beta1, beta2) = cfg.adam_betas;
    let params = ParamsAdamW { lr, beta1, beta2, eps: 1e-8, weight_decay: 0.0 };
    Ok(AdamW::new(vars, params)?)
}

fn prefixed(store: &ParameterStore, prefixes: &[&str]) -> Vec<Var> {
    prefixes.iter().flat_map(|p| store.trainable_with_prefix(p)).collect()
}

fn group_snapshot(store: &ParameterStore, prefix: &str) -> Result<Vec<(String, Vec<f32>)>> {
    Ok(store.snapshot()?.into_iter().filter(|(k, _)| k.starts_with(prefix)).map(|(k, (_, v))| (k, v)).collect())
}

/// Checkpoint holding only the parameter estimator.
pub fn par_checkpoint(par: &ParSubnet, cfg: &TrainConfig, epoch: usize, step: usize) -> Result<Checkpoint> {
    let mut cfg = cfg.clone();
    cfg.model.par = *par.config();
    let mut ck = Checkpoint::new(Stage::Par, epoch, step, cfg);
    ck.add_store(PAR_GROUP, par.store())?;
    Ok(ck)
}

/// Rebuilds the parameter estimator stored in `ck` (either stage).
pub fn load_par(ck: &Checkpoint) -> Result<ParSubnet> {
    if !ck.has_group(PAR_GROUP) {
        return Err(Error::Checkpoint("checkpoint has no parameter-estimator weights".into()));
    }
    let par = ParSubnet::new(ck.config.model.par, DType::F32, 0)?;
    ck.restore_store(PAR_GROUP, par.store())?;
    Ok(par)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParLossSummary {
    pub total: f64,
    pub attenuation: f64,
    pub depth: f64,
}

/// Dataset-average parameter-estimation loss, in order, batch by batch.
pub fn evaluate_par_loss(par: &ParSubnet, data: &SyntheticDataset, batch_size: usize, mode: Mode) -> Result<ParLossSummary> {
    let n = data.len();
    if n == 0 {
        return Err(Error::Data("dataset is empty".into()));
    }
    let mut acc = ParLossSummary { total: 0.0, attenuation: 0.0, depth: 0.0 };
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (img, d, beta_gt) = data.batch(chunk)?;
        let out = par.forward(&img, mode)?;
        let terms = par_loss_terms(&out.d1, &out.d2, &d, &out.beta, &beta_gt)?;
        let w = chunk.len() as f64 / n as f64;
        acc.attenuation += w * scalar(&terms.attenuation)?;
        acc.depth += w * scalar(&terms.depth)?;
    }
    acc.total = acc.attenuation + acc.depth;
    Ok(acc)
}

pub struct ParRun {
    pub par: ParSubnet,
    pub checkpoint: Checkpoint,
    pub log: Vec<ParLogRow>,
    /// Dataset loss before training, batch statistics.
    pub initial_loss: ParLossSummary,
    /// Dataset loss after both phases, batch statistics.
    pub final_loss: ParLossSummary,
}

/// Pretrains the parameter estimator in two phases of `cfg.epochs` each:
/// first the attenuation estimator alone on the attenuation term, then,
/// with it frozen, the depth and transmission estimators on the depth terms.
/// The learning rate stays at `cfg.lr` throughout.
pub fn pretrain_par(data: &SyntheticDataset, cfg: &TrainConfig, opts: RunOptions<'_>) -> Result<ParRun> {
    cfg.validate()?;
    cfg.require_stage(Stage::Par)?;
    if data.is_empty() {
        return Err(Error::Data("synthetic dataset is empty".into()));
    }
    let mut silent = Silent;
    let observer: &mut dyn TrainObserver = match opts.observer {
        Some(o) => o,
        None => &mut silent,
    };
    let par = ParSubnet::new(cfg.model.par, DType::F32, derive_seed(cfg.seed, SEED_PAR))?;
    if let Some(init) = opts.init {
        init.require_stage(Stage::Par)?;
        init.restore_store(PAR_GROUP, par.store())?;
    }
    let mut run = opts.run_dir.map(|d| RunDir::create(d, cfg)).transpose()?;
    if let Some(r) = run.as_mut() {
        r.write_header(&["epoch", "step", "phase", "par_loss", "beta_term", "depth_term", "lr"])?;
    }

    let initial_loss = evaluate_par_loss(&par, data, cfg.batch_size, Mode::BatchStats)?;
    let workers = prefetch_workers();
    let mut log = Vec::new();
    let mut step = 0;
    let mut frozen = Vec::new();
    let mut last: Option<Checkpoint> = None;

    for (p, phase) in [ParPhase::Attenuation, ParPhase::Depth].into_iter().enumerate() {
        let vars = match phase {
            ParPhase::Attenuation => prefixed(par.store(), &[ATTENUATION_PREFIX]),
            ParPhase::Depth => prefixed(par.store(), &[DEPTH_PREFIX, TRANSMISSION_PREFIX]),
        };
        let mut opt = adam(vars, cfg.lr, cfg)?;
        for e in 0..cfg.epochs {
            let epoch = p * cfg.epochs + e + 1;
            let plan = batch_plan(data.len(), cfg.batch_size, derive_seed(cfg.seed, SEED_SHUFFLE + epoch as u64));
            prefetch(&plan, workers, |idx| data.batch(idx), |_, (img, d, beta_gt)| {
                step += 1;
                let terms = match phase {
                    ParPhase::Attenuation => {
                        let out = par.forward(&img, Mode::BatchStats)?;
                        let terms = par_loss_terms(&out.d1, &out.d2, &d, &out.beta, &beta_gt)?;
                        opt.backward_step(&terms.attenuation)?;
                        terms
                    }
                    ParPhase::Depth => {
                        let beta = par.estimate_attenuation(&img)?.detach();
                        let out = par.forward_with_attenuation(&img, beta, Mode::Train)?;
                        let terms = par_loss_terms(&out.d1, &out.d2, &d, &out.beta, &beta_gt)?;
                        opt.backward_step(&terms.depth)?;
                        terms
                    }
                };
                let (beta_term, depth_term) = (scalar(&terms.attenuation)?, scalar(&terms.depth)?);
                let row = ParLogRow {
                    epoch,
                    step,
                    phase,
                    par_loss: beta_term + depth_term,
                    beta_term,
                    depth_term,
                    lr: cfg.lr,
                };
                if !row.par_loss.is_finite() {
                    return Err(Error::InvalidValue(format!("par loss diverged at step {step}")));
                }
                observer.on_par_step(&row);
                if let Some(r) = run.as_mut() {
                    r.log_row(&row)?;
                }
                log.push(row);
                Ok(())
            })?;
            if let Some(r) = log.last() {
                log::info!("par epoch {epoch}/{} ({phase:?}): beta {:.4} depth {:.4}", 2 * cfg.epochs, r.beta_term, r.depth_term);
            }
            let ck = par_checkpoint(&par, cfg, epoch, step)?;
            if let Some(r) = run.as_mut() {
                let path = r.save(&ck, epoch)?;
                observer.on_checkpoint(&path);
            }
            last = Some(ck);
        }
        if phase == ParPhase::Attenuation {
            frozen = group_snapshot(par.store(), ATTENUATION_PREFIX)?;
        }
        observer.on_par_phase_end(phase, &par);
    }
    if group_snapshot(par.store(), ATTENUATION_PREFIX)? != frozen {
        return Err(Error::InvalidValue("attenuation estimator changed while frozen".into()));
    }
    let final_loss = evaluate_par_loss(&par, data, cfg.batch_size, Mode::BatchStats)?;
    let checkpoint = last.expect("at least one epoch");
    Ok(ParRun { par, checkpoint, log, initial_loss, final_loss })
}

/// Every learned module of the full model.
#[derive(Debug, Clone)]
pub struct PuganModels {
    pub par: ParSubnet,
    pub generator: Generator,
    pub d1: StyleDiscriminator,
    pub d2: ContentDiscriminator,
}

impl PuganModels {
    pub fn new(model: &ModelConfig, dq: DqConfig, dtype: DType, seed: u64) -> Result<Self> {
        model.validate()?;
        Ok(Self {
            par: ParSubnet::new(model.par, dtype, derive_seed(seed, SEED_PAR))?,
            generator: Generator::new(model.tsie, dq, dtype, derive_seed(seed, SEED_GENERATOR))?,
            d1: StyleDiscriminator::new(model.discriminator, dtype, derive_seed(seed, SEED_D1))?,
            d2: ContentDiscriminator::new(model.discriminator, dtype, derive_seed(seed, SEED_D2))?,
        })
    }

    /// Loads a full-model checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.require_stage(Stage::Pugan)?;
        let models = Self::new(&ck.config.model, ck.config.dq()?, DType::F32, ck.config.seed)?;
        models.restore(ck)?;
        Ok(models)
    }

    fn groups(&self) -> [(&'static str, &ParameterStore); 4] {
        [
            (PAR_GROUP, self.par.store()),
            (GENERATOR_GROUP, self.generator.store()),
            (D1_GROUP, self.d1.store()),
            (D2_GROUP, self.d2.store()),
        ]
    }

    fn restore(&self, ck: &Checkpoint) -> Result<()> {
        for (prefix, store) in self.groups() {
            ck.restore_store(prefix, store)?;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig, epoch: usize, step: usize) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(Stage::Pugan, epoch, step, cfg.clone());
        for (prefix, store) in self.groups() {
            ck.add_store(prefix, store)?;
        }
        Ok(ck)
    }

    /// Inference path: the estimator and the generator both use running statistics.
    pub fn enhance(&self, image: &Image) -> Result<(Image, ParOutputs)> {
        self.enhance_with(image, Mode::Eval)
    }

    /// Enhancement with an explicit normalisation mode for the generator.
    /// Running statistics are never updated.
    pub fn enhance_with(&self, image: &Image, mode: Mode) -> Result<(Image, ParOutputs)> {
        let mode = if mode == Mode::Train { Mode::BatchStats } else { mode };
        let par = self.par.forward(image, Mode::Eval)?.detach();
        let e = self.generator.forward(image, &par, mode)?;
        Ok((e, par))
    }
}

/// Losses of one alternating step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub g_loss: f64,
    pub d1_loss: f64,
    pub d2_loss: f64,
    pub l1: f64,
    pub perceptual: f64,
}

/// Owns the models and one optimizer per updated module.
pub struct PuganTrainer {
    models: PuganModels,
    extractor: PerceptualExtractor,
    weights: LossWeights,
    opt_g: AdamW,
    opt_d1: AdamW,
    opt_d2: AdamW,
}

impl PuganTrainer {
    pub fn new(models: PuganModels, cfg: &TrainConfig) -> Result<Self> {
        let dtype = models.generator.store().dtype();
        let opt_g = adam(models.generator.store().trainable(), cfg.lr, cfg)?;
        let opt_d1 = adam(models.d1.store().trainable(), cfg.lr, cfg)?;
        let opt_d2 = adam(models.d2.store().trainable(), cfg.lr, cfg)?;
        Ok(Self {
            extractor: PerceptualExtractor::new(dtype, derive_seed(cfg.seed, SEED_EXTRACTOR))?,
            weights: cfg.loss_weights,
            models,
            opt_g,
            opt_d1,
            opt_d2,
        })
    }

    pub fn models(&self) -> &PuganModels {
        &self.models
    }

    pub fn into_models(self) -> PuganModels {
        self.models
    }

    pub fn extractor(&self) -> &PerceptualExtractor {
        &self.extractor
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.opt_g.set_learning_rate(lr);
        self.opt_d1.set_learning_rate(lr);
        self.opt_d2.set_learning_rate(lr);
    }

    /// Depth of `image` from the frozen estimator, differentiable in `image`.
    fn depth_of(&self, image: &Image) -> Result<DepthMap> {
        self.models.par.depth_estimator().forward(image, Mode::Eval)
    }

    /// One D1 update on real references against detached fakes.
    pub fn style_step(&mut self, real: &Image, fake: &Image) -> Result<f64> {
        let d = &self.models.d1;
        let loss = discriminator_loss(&d.score(real, Mode::Train)?, &d.score(&fake.detach(), Mode::Train)?)?;
        self.opt_d1.backward_step(&loss)?;
        scalar(&loss)
    }

    /// One D2 update on (image, depth) pairs against detached fakes.
    pub fn content_step(&mut self, real: (&Image, &DepthMap), fake: (&Image, &DepthMap)) -> Result<f64> {
        let d = &self.models.d2;
        let real_scores = d.score(real.0, &real.1.detach(), Mode::Train)?;
        let fake_scores = d.score(&fake.0.detach(), &fake.1.detach(), Mode::Train)?;
        let loss = discriminator_loss(&real_scores, &fake_scores)?;
        self.opt_d2.backward_step(&loss)?;
        scalar(&loss)
    }

    /// Generator step, then one D1 step and one D2 step on the same batch.
    pub fn step(&mut self, degraded: &Image, reference: &Image) -> Result<StepStats> {
        let m = &self.models;
        let par = m.par.forward(degraded, Mode::Eval)?.detach();
        let e = m.generator.forward(degraded, &par, Mode::Train)?;
        let d_e = self.depth_of(&e)?;
        // discriminators judge with batch statistics but keep their running averages
        let s1 = m.d1.score(&e, Mode::BatchStats)?;
        let s2 = m.d2.score(&e, &d_e, Mode::BatchStats)?;
        let g = total_generator_loss(&e, reference, &s1, &s2, &self.weights, &self.extractor)?;
        self.opt_g.backward_step(&g.total)?;

        let d_y = self.depth_of(reference)?;
        let d1_loss = self.style_step(reference, &e)?;
        let d2_loss = self.content_step((reference, &d_y), (&e, &d_e))?;
        Ok(StepStats {
            g_loss: scalar(&g.total)?,
            d1_loss,
            d2_loss,
            l1: scalar(&g.l1)?,
            perceptual: scalar(&g.perceptual)?,
        })
    }
}

pub struct PuganRun {
    pub models: PuganModels,
    pub checkpoint: Checkpoint,
    pub log: Vec<PuganLogRow>,
}

/// Adversarial training with the parameter estimator taken from `par_ckpt`
/// and kept frozen. A full-model checkpoint also warm-starts the generator
/// and both discriminators.
pub fn train_pugan(data: &PairedDataset, par_ckpt: &Checkpoint, cfg: &TrainConfig, opts: RunOptions<'_>) -> Result<PuganRun> {
    cfg.validate()?;
    cfg.require_stage(Stage::Pugan)?;
    if data.is_empty() {
        return Err(Error::Data("paired dataset is empty".into()));
    }
    let mut silent = Silent;
    let observer: &mut dyn TrainObserver = match opts.observer {
        Some(o) => o,
        None => &mut silent,
    };
    let mut cfg = cfg.clone();
    cfg.model.par = par_ckpt.config.model.par;
    let models = PuganModels::new(&cfg.model, cfg.dq()?, DType::F32, cfg.seed)?;
    match par_ckpt.stage {
        Stage::Par => {
            if !par_ckpt.has_group(PAR_GROUP) {
                return Err(Error::Checkpoint("checkpoint has no parameter-estimator weights".into()));
            }
            par_ckpt.restore_store(PAR_GROUP, models.par.store())?
        }
        Stage::Pugan => models.restore(par_ckpt)?,
    }
    let frozen = models.par.store().snapshot()?;
    let mut run = opts.run_dir.map(|d| RunDir::create(d, &cfg)).transpose()?;
    if let Some(r) = run.as_mut() {
        r.write_header(&["epoch", "step", "g_loss", "d1_loss", "d2_loss", "l1", "perceptual", "lr"])?;
    }

    let mut trainer = PuganTrainer::new(models, &cfg)?;
    let workers = prefetch_workers();
    let mut log = Vec::new();
    let mut step = 0;
    for e in 0..cfg.epochs {
        let epoch = e + 1;
        let lr = lr_at(e, &cfg);
        trainer.set_learning_rate(lr);
        let plan = batch_plan(data.len(), cfg.batch_size, derive_seed(cfg.seed, SEED_SHUFFLE + epoch as u64));
        prefetch(&plan, workers, |idx| data.batch(idx), |_, (degraded, reference)| {
            step += 1;
            let s = trainer.step(&degraded, &reference)?;
            let row = PuganLogRow {
                epoch,
                step,
                g_loss: s.g_loss,
                d1_loss: s.d1_loss,
                d2_loss: s.d2_loss,
                l1: s.l1,
                perceptual: s.perceptual,
                lr,
            };
            if ![row.g_loss, row.d1_loss, row.d2_loss].iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidValue(format!("training diverged at step {step}")));
            }
            observer.on_pugan_step(&row);
            if let Some(r) = run.as_mut() {
                r.log_row(&row)?;
            }
            log.push(row);
            Ok(())
        })?;
        if let Some(r) = log.last() {
            log::info!("epoch {epoch}/{}: g {:.4} d1 {:.4} d2 {:.4} l1 {:.4} lr {lr:e}", cfg.epochs, r.g_loss, r.d1_loss, r.d2_loss, r.l1);
        }
        if let Some(r) = run.as_mut() {
            let path = r.save(&trainer.models().to_checkpoint(&cfg, epoch, step)?, epoch)?;
            observer.on_checkpoint(&path);
        }
    }
    if trainer.models().par.store().snapshot()? != frozen {
        return Err(Error::InvalidValue("parameter estimator changed while frozen".into()));
    }
    let models = trainer.into_models();
    let checkpoint = models.to_checkpoint(&cfg, cfg.epochs, step)?;
    Ok(PuganRun { models, checkpoint, log })
}
