//! Training objectives for the enhancement stage.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::discriminators::PatchScores;
use crate::error::{ensure_same_shape, Error, Result};
use crate::nn::{Conv2d, ParameterStore};
use crate::physics::Image;

/// Weights of the four generator loss terms, in order: style adversarial,
/// content adversarial, L1, perceptual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 1.0, lambda3: 10.0, lambda4: 5.0 }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, lambda4: f64) -> Result<Self> {
        let w = Self { lambda1, lambda2, lambda3, lambda4 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.lambda4];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {all:?}")));
        }
        if all.iter().all(|l| *l == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Mean absolute error over every pixel, channel and batch element.
pub fn global_similarity_loss(e: &Image, y: &Image) -> Result<Tensor> {
    ensure_same_shape("global_similarity_loss", e.tensor(), y.tensor())?;
    Ok((e.tensor() - y.tensor())?.abs()?.mean_all()?)
}

/// Fixed, randomly initialised three-layer convolutional feature extractor.
/// Its weights never train, so it acts as a deterministic feature metric.
#[derive(Debug, Clone)]
pub struct PerceptualExtractor {
    store: ParameterStore,
    convs: Vec<Conv2d>,
}

pub const PERCEPTUAL_WIDTHS: [usize; 3] = [16, 32, 32];

impl PerceptualExtractor {
    pub fn new(dtype: DType, seed: u64) -> Result<Self> {
        let mut store = ParameterStore::new(dtype);
        let mut init = store.initializer(seed);
        let mut convs = Vec::with_capacity(3);
        let mut prev = 3;
        for (i, &w) in PERCEPTUAL_WIDTHS.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            convs.push(Conv2d::new(&mut init.sub(&format!("conv{}", i + 1)), prev, w, 3, stride, true)?);
            prev = w;
        }
        Ok(Self { store, convs })
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    /// Feature maps after each layer.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(self.convs.len());
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?;
            out.push(h.clone());
        }
        Ok(out)
    }

    /// Mean absolute feature difference, averaged over the three layers.
    pub fn loss(&self, e: &Image, y: &Image) -> Result<Tensor> {
        ensure_same_shape("perceptual_loss", e.tensor(), y.tensor())?;
        let fe = self.features(e.tensor())?;
        let fy = self.features(y.tensor())?;
        let mut total: Option<Tensor> = None;
        for (a, b) in fe.iter().zip(&fy) {
            let term = (a - b)?.abs()?.mean_all()?;
            total = Some(match total {
                Some(t) => (t + term)?,
                None => term,
            });
        }
        let total = total.expect("extractor has layers");
        Ok((total / fe.len() as f64)?)
    }
}

/// Discriminator and generator sides of one adversarial pair.
#[derive(Debug, Clone)]
pub struct AdversarialLosses {
    pub d_loss: Tensor,
    pub g_loss: Tensor,
}

fn patch_means(scores: &PatchScores, what: &str) -> Result<Tensor> {
    let s = scores.mean()?;
    let (lo, hi) = crate::physics::value_range(&s)?;
    if lo <= 0.0 || hi >= 1.0 {
        return Err(Error::InvalidValue(format!(
            "{what} scores must lie in (0, 1), found [{lo}, {hi}]"
        )));
    }
    Ok(s)
}

/// `-[log s_real + log(1 - s_fake)]`, averaged over the batch.
pub fn discriminator_loss(real: &PatchScores, fake: &PatchScores) -> Result<Tensor> {
    let sr = patch_means(real, "real")?;
    let sf = patch_means(fake, "fake")?;
    let per_image = (sr.log()? + sf.affine(-1.0, 1.0)?.log()?)?.neg()?;
    Ok(per_image.mean_all()?)
}

/// Non-saturating generator loss `-log s_fake`, averaged over the batch.
pub fn generator_adversarial_loss(fake: &PatchScores) -> Result<Tensor> {
    Ok(patch_means(fake, "fake")?.log()?.neg()?.mean_all()?)
}

pub fn adversarial_losses(real: &PatchScores, fake: &PatchScores) -> Result<AdversarialLosses> {
    Ok(AdversarialLosses {
        d_loss: discriminator_loss(real, fake)?,
        g_loss: generator_adversarial_loss(fake)?,
    })
}

/// Generator objective and its unweighted parts.
#[derive(Debug, Clone)]
pub struct GeneratorLoss {
    pub total: Tensor,
    pub style: Tensor,
    pub content: Tensor,
    pub l1: Tensor,
    pub perceptual: Tensor,
}

pub fn total_generator_loss(
    e: &Image,
    y: &Image,
    d1_fake: &PatchScores,
    d2_fake: &PatchScores,
    weights: &LossWeights,
    extractor: &PerceptualExtractor,
) -> Result<GeneratorLoss> {
    weights.validate()?;
    let style = generator_adversarial_loss(d1_fake)?;
    let content = generator_adversarial_loss(d2_fake)?;
    let l1 = global_similarity_loss(e, y)?;
    let perceptual = extractor.loss(e, y)?;
    let total = ((((&style * weights.lambda1)? + (&content * weights.lambda2)?)?
        + (&l1 * weights.lambda3)?)?
        + (&perceptual * weights.lambda4)?)?;
    Ok(GeneratorLoss { total, style, content, l1, perceptual })
}
