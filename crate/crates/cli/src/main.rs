use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

/// Physical-model-guided GAN for underwater image enhancement.
#[derive(Debug, Parser)]
#[command(name = "pugan", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pretrain the parameter estimator on a synthetic set with depth and
    /// attenuation labels.
    PretrainPar(TrainFlags),
    /// Adversarial training of the generator against both discriminators.
    Train {
        #[command(flatten)]
        flags: TrainFlags,
        /// Checkpoint written by `pretrain-par`.
        #[arg(long)]
        par_ckpt: PathBuf,
    },
    /// Enhance one image or every image in a directory.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        /// Image file or directory of images.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also write the colour-corrected image, the transmission map
        /// (false colour) and the depth map.
        #[arg(long)]
        save_intermediates: bool,
    },
    /// Score predictions with full-reference and non-reference metrics.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth directory; required by psnr and mse.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Output report, `.csv` or `.json`.
        #[arg(long)]
        report: PathBuf,
        /// Comma-separated subset of psnr,mse,uiqm,uciqe.
        #[arg(long)]
        metrics: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a synthetic fixture set usable by both training commands.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct TrainFlags {
    #[arg(long)]
    data: PathBuf,
    /// Run directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Square side the inputs are resized to; a multiple of 32.
    #[arg(long)]
    image_size: Option<usize>,
    /// TOML config file; explicit flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl TrainFlags {
    fn overrides(&self) -> config::TrainOverrides {
        config::TrainOverrides {
            data_dir: self.data.clone(),
            out_dir: self.out.clone(),
            epochs: self.epochs,
            batch_size: self.batch,
            lr: self.lr,
            seed: self.seed,
            image_size: self.image_size,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::PretrainPar(f) => commands::pretrain_par(f.config.as_deref(), &f.overrides()),
        Command::Train { flags, par_ckpt } => commands::train(flags.config.as_deref(), &flags.overrides(), par_ckpt),
        Command::Enhance { ckpt, input, output, save_intermediates } => {
            commands::enhance(ckpt, input, output, *save_intermediates)
        }
        Command::Eval { pred, gt, report, metrics, config } => {
            commands::eval(pred, gt.as_deref(), report, metrics.as_deref(), config.as_deref())
        }
        Command::Fixtures { out, count, size, seed } => commands::fixtures(out, *count, *size, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
