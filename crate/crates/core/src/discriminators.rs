//! Markovian patch discriminators.
//!
//! Four 3x3 stride-2 convolutions shrink the input by 16 in each direction,
//! so a 256x256 image is scored on a 16x16 grid of overlapping patches. The
//! style discriminator sees the image alone; the content discriminator also
//! receives a depth map as a fourth channel. With 3x3 kernels and stride 2
//! at every layer each output cell sees a 31x31 input window.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, Activation, BatchNorm2d, Conv2d, Mode, ParameterStore};
use crate::physics::{DepthMap, Image};

pub const DOWNSCALE: usize = 16;

/// Patch probabilities are kept this far inside `(0, 1)` so that a
/// saturated single-precision sigmoid cannot produce an exact 0 or 1.
pub const SCORE_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub widths: [usize; 4],
    /// Negative slope of the hidden activations; 0 gives plain ReLU.
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { widths: [64, 128, 256, 1], leaky_slope: 0.2 }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) || self.widths[3] != 1 {
            return Err(Error::Config(
                "discriminator widths must be positive and end in 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::Config(format!("leaky slope must be in [0, 1), got {}", self.leaky_slope)));
        }
        Ok(())
    }

    fn activation(&self) -> Activation {
        if self.leaky_slope == 0.0 {
            Activation::Relu
        } else {
            Activation::LeakyRelu(self.leaky_slope)
        }
    }
}

/// Per-patch real/fake probabilities, shape `(batch, 1, H/16, W/16)`.
#[derive(Debug, Clone)]
pub struct PatchScores {
    map: Tensor,
}

impl PatchScores {
    pub fn map(&self) -> &Tensor {
        &self.map
    }

    /// Per-image average over the patch grid, shape `(batch,)`.
    pub fn mean(&self) -> Result<Tensor> {
        Ok(self.map.flatten_from(1)?.mean(D::Minus1)?)
    }

    /// Builds scores from raw probabilities, checking the `(0, 1)` contract.
    pub fn from_probabilities(map: Tensor) -> Result<Self> {
        if map.rank() != 4 || map.dims()[1] != 1 {
            return Err(Error::Shape(format!("score map must be (batch, 1, h, w), got {:?}", map.dims())));
        }
        let (lo, hi) = crate::physics::value_range(&map)?;
        if lo <= 0.0 || hi >= 1.0 {
            return Err(Error::InvalidValue(format!("patch scores must be in (0, 1), found [{lo}, {hi}]")));
        }
        Ok(Self { map })
    }
}

#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    in_channels: usize,
    store: ParameterStore,
    convs: Vec<Conv2d>,
    norms: Vec<BatchNorm2d>,
    act: Activation,
}

impl PatchDiscriminator {
    pub fn new(in_channels: usize, config: DiscriminatorConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new(dtype);
        let mut init = store.initializer(seed);
        let mut convs = Vec::with_capacity(4);
        let mut norms = Vec::with_capacity(3);
        let mut prev = in_channels;
        for (i, &w) in config.widths.iter().enumerate() {
            let mut layer = init.sub(&format!("layer{}", i + 1));
            convs.push(Conv2d::new(&mut layer.sub("conv"), prev, w, 3, 2, true)?);
            if i < 3 {
                norms.push(BatchNorm2d::new(&mut layer.sub("bn"), w)?);
            }
            prev = w;
        }
        Ok(Self { in_channels, store, convs, norms, act: config.activation() })
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<PatchScores> {
        let c = x.dims().get(1).copied().unwrap_or(0);
        if x.rank() != 4 || c != self.in_channels {
            return Err(Error::Shape(format!(
                "discriminator expects {} input channels, got shape {:?}",
                self.in_channels,
                x.dims()
            )));
        }
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?;
            if let Some(bn) = self.norms.get(i) {
                h = self.act.apply(&bn.forward(&h, mode)?)?;
            }
        }
        let p = sigmoid(&h)?.clamp(SCORE_MARGIN, 1.0 - SCORE_MARGIN)?;
        Ok(PatchScores { map: p })
    }
}

fn check_divisible(h: usize, w: usize) -> Result<()> {
    if h % DOWNSCALE != 0 || w % DOWNSCALE != 0 {
        return Err(Error::Shape(format!("discriminator input {h}x{w} must be divisible by {DOWNSCALE}")));
    }
    Ok(())
}

/// Style discriminator: judges the image alone.
#[derive(Debug, Clone)]
pub struct StyleDiscriminator(PatchDiscriminator);

impl StyleDiscriminator {
    pub fn new(config: DiscriminatorConfig, dtype: DType, seed: u64) -> Result<Self> {
        Ok(Self(PatchDiscriminator::new(3, config, dtype, seed)?))
    }

    pub fn inner(&self) -> &PatchDiscriminator {
        &self.0
    }

    pub fn store(&self) -> &ParameterStore {
        self.0.store()
    }

    pub fn score(&self, x: &Image, mode: Mode) -> Result<PatchScores> {
        check_divisible(x.height(), x.width())?;
        self.0.forward(x.tensor(), mode)
    }
}

/// Content discriminator: judges the image together with its depth map.
#[derive(Debug, Clone)]
pub struct ContentDiscriminator(PatchDiscriminator);

impl ContentDiscriminator {
    pub fn new(config: DiscriminatorConfig, dtype: DType, seed: u64) -> Result<Self> {
        Ok(Self(PatchDiscriminator::new(4, config, dtype, seed)?))
    }

    pub fn inner(&self) -> &PatchDiscriminator {
        &self.0
    }

    pub fn store(&self) -> &ParameterStore {
        self.0.store()
    }

    pub fn score(&self, x: &Image, depth: &DepthMap, mode: Mode) -> Result<PatchScores> {
        let (xd, dd) = (x.tensor().dims(), depth.tensor().dims());
        if xd[0] != dd[0] || xd[2..] != dd[2..] {
            return Err(Error::Shape(format!("image {xd:?} and depth {dd:?} disagree")));
        }
        check_divisible(x.height(), x.width())?;
        let input = Tensor::cat(&[x.tensor(), depth.tensor()], 1)?;
        self.0.forward(&input, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn image(b: usize, s: usize, seed: u64) -> Image {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f32> = (0..b * 3 * s * s).map(|_| rng.random()).collect();
        Image::new(Tensor::from_vec(v, (b, 3, s, s), &Device::Cpu).unwrap()).unwrap()
    }

    #[test]
    fn output_grid_is_one_sixteenth() {
        let d = StyleDiscriminator::new(DiscriminatorConfig::default(), DType::F32, 0).unwrap();
        let s = d.score(&image(1, 64, 0), Mode::Eval).unwrap();
        assert_eq!(s.map().dims(), &[1, 1, 4, 4]);
        let (lo, hi) = crate::physics::value_range(s.map()).unwrap();
        assert!(lo > 0.0 && hi < 1.0);
        assert_eq!(s.mean().unwrap().dims(), &[1]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let d1 = StyleDiscriminator::new(DiscriminatorConfig::default(), DType::F32, 0).unwrap();
        assert!(d1.score(&image(1, 24, 0), Mode::Eval).is_err());
        let bad = Tensor::zeros((1, 5, 16, 16), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(d1.inner().forward(&bad, Mode::Eval), Err(Error::Shape(_))));
        let d2 = ContentDiscriminator::new(DiscriminatorConfig::default(), DType::F32, 1).unwrap();
        let depth = DepthMap::new(Tensor::zeros((1, 1, 32, 32), DType::F32, &Device::Cpu).unwrap()).unwrap();
        assert!(matches!(d2.score(&image(1, 16, 0), &depth, Mode::Eval), Err(Error::Shape(_))));
    }

    #[test]
    fn depth_channel_matters() {
        let d2 = ContentDiscriminator::new(DiscriminatorConfig::default(), DType::F32, 1).unwrap();
        let img = image(1, 32, 3);
        let ramp = Tensor::arange(0f32, 1024.0, &Device::Cpu).unwrap().affine(1.0 / 1024.0, 0.0).unwrap();
        let depth = DepthMap::new(ramp.reshape((1, 1, 32, 32)).unwrap()).unwrap();
        let flipped = DepthMap::new(depth.tensor().affine(-1.0, 1.0).unwrap()).unwrap();
        let a = d2.score(&img, &depth, Mode::Eval).unwrap();
        let b = d2.score(&img, &flipped, Mode::Eval).unwrap();
        let delta = (a.map() - b.map()).unwrap().abs().unwrap().mean_all().unwrap();
        assert!(delta.to_scalar::<f32>().unwrap() > 0.0);
    }

    #[test]
    fn discriminators_are_independent() {
        let d1 = StyleDiscriminator::new(DiscriminatorConfig::default(), DType::F32, 0).unwrap();
        let d2 = ContentDiscriminator::new(DiscriminatorConfig::default(), DType::F32, 0).unwrap();
        let w1 = d1.store().get("layer1.conv.weight").unwrap().as_tensor().dims().to_vec();
        let w2 = d2.store().get("layer1.conv.weight").unwrap().as_tensor().dims().to_vec();
        assert_eq!(w1, vec![64, 3, 3, 3]);
        assert_eq!(w2, vec![64, 4, 3, 3]);
    }

    #[test]
    fn score_contract_is_checked() {
        let ok = Tensor::full(0.5f32, (1, 1, 2, 2), &Device::Cpu).unwrap();
        assert!(PatchScores::from_probabilities(ok).is_ok());
        let bad = Tensor::ones((1, 1, 2, 2), DType::F32, &Device::Cpu).unwrap();
        assert!(PatchScores::from_probabilities(bad).is_err());
    }
}
