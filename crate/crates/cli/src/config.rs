//! Config file schema and the merge of file values, flags and defaults.
//!
//! Precedence, lowest first: stage defaults, config file, command-line flags.

use std::path::{Path, PathBuf};

use pugan::discriminators::DiscriminatorConfig;
use pugan::metrics::{parse_metric_list, Metric, MetricsConfig};
use pugan::par_subnet::ParConfig;
use pugan::trainer::{Stage, TrainConfig};
use pugan::tsie::TsieConfig;
use pugan::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub loss: LossSection,
    pub metrics: MetricsSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub image_size: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub par: Option<ParConfig>,
    pub tsie: Option<TsieConfig>,
    pub discriminator: Option<DiscriminatorConfig>,
    pub dq_alpha: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub lr_decay_every: Option<usize>,
    pub lr_decay_factor: Option<f64>,
    pub adam_betas: Option<(f64, f64)>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda3: Option<f64>,
    pub lambda4: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub uiqm_block: Option<usize>,
    /// Comma-separated metric names, as for `--metrics`.
    pub list: Option<String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn metrics_config(&self) -> MetricsConfig {
        let mut m = MetricsConfig::default();
        if let Some(b) = self.metrics.uiqm_block {
            m.uiqm_block = b;
        }
        m
    }
}

/// Training flags that may override the config file.
#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub image_size: Option<usize>,
}

/// Fully merged and validated settings of one command.
#[derive(Debug, Clone)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub metrics: Vec<Metric>,
}

fn set<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl CliConfig {
    pub fn for_training(stage: Stage, file: &ConfigFile, flags: &TrainOverrides) -> Result<Self> {
        let mut cfg = TrainConfig::defaults_for(stage);
        set(&mut cfg.image_size, file.data.image_size);
        set(&mut cfg.model.par, file.model.par);
        set(&mut cfg.model.tsie, file.model.tsie);
        set(&mut cfg.model.discriminator, file.model.discriminator);
        set(&mut cfg.dq_alpha, file.model.dq_alpha);
        let t = &file.train;
        set(&mut cfg.epochs, t.epochs);
        set(&mut cfg.batch_size, t.batch_size);
        set(&mut cfg.lr, t.lr);
        set(&mut cfg.lr_decay_every, t.lr_decay_every);
        set(&mut cfg.lr_decay_factor, t.lr_decay_factor);
        set(&mut cfg.adam_betas, t.adam_betas);
        set(&mut cfg.seed, t.seed);
        let l = &file.loss;
        set(&mut cfg.loss_weights.lambda1, l.lambda1);
        set(&mut cfg.loss_weights.lambda2, l.lambda2);
        set(&mut cfg.loss_weights.lambda3, l.lambda3);
        set(&mut cfg.loss_weights.lambda4, l.lambda4);
        cfg.metrics = file.metrics_config();

        set(&mut cfg.epochs, flags.epochs);
        set(&mut cfg.batch_size, flags.batch_size);
        set(&mut cfg.lr, flags.lr);
        set(&mut cfg.seed, flags.seed);
        set(&mut cfg.image_size, flags.image_size);
        cfg.data_dir = Some(flags.data_dir.clone());
        cfg.out_dir = Some(flags.out_dir.clone());
        cfg.validate()?;
        Ok(Self { train: cfg, metrics: Vec::new() })
    }

    /// Metric selection for `eval`: the flag wins over the file; without
    /// either, every metric the available inputs allow.
    pub fn for_eval(file: &ConfigFile, flag: Option<&str>, have_reference: bool) -> Result<Self> {
        let metrics = match flag.or(file.metrics.list.as_deref()) {
            Some(list) => parse_metric_list(list)?,
            None if have_reference => vec![Metric::Psnr, Metric::Mse, Metric::Uiqm, Metric::Uciqe],
            None => vec![Metric::Uiqm, Metric::Uciqe],
        };
        if !have_reference {
            if let Some(m) = metrics.iter().find(|m| m.needs_reference()) {
                return Err(Error::Config(format!("metric `{}` needs --gt", m.column())));
            }
        }
        let mut train = TrainConfig::pugan_defaults();
        train.metrics = file.metrics_config();
        train.metrics.validate()?;
        Ok(Self { train, metrics })
    }
}
