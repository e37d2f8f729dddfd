//! Parameter estimation network: learns the attenuation coefficients, a
//! depth map and a transmission map, then inverts the imaging model to get
//! a colour-enhanced image.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_shape, Error, Result};
use crate::nn::{
    adaptive_avg_pool2d, max_pool2x, sigmoid, softplus, Conv2d, ConvBnAct, Init, Linear, Mode, ParameterStore,
    ResidualBlock,
};
use crate::physics::{
    depth_from_transmission, invert_color_enhanced, Attenuation, DepthMap, Image, TransmissionMap,
};

/// Grid the attenuation features are pooled onto before the linear head.
const POOLED_GRID: usize = 4;

/// Smallest attenuation the head can emit; keeps `softplus` underflow in
/// single precision from producing a zero coefficient.
const MIN_ATTENUATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParConfig {
    pub attenuation_width: usize,
    pub attenuation_hidden: usize,
    pub depth_width: usize,
    pub transmission_width: usize,
}

impl Default for ParConfig {
    fn default() -> Self {
        Self { attenuation_width: 16, attenuation_hidden: 64, depth_width: 32, transmission_width: 32 }
    }
}

impl ParConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.attenuation_width,
            self.attenuation_hidden,
            self.depth_width,
            self.transmission_width,
        ];
        if widths.contains(&0) {
            return Err(Error::Config("par-subnet widths must be positive".into()));
        }
        Ok(())
    }
}

/// One colour channel's branch: conv, conv, max-pool, ReLU, pooled to a
/// fixed grid, then linear, ReLU, linear, softplus.
#[derive(Debug, Clone)]
struct AttenuationBranch {
    conv1: Conv2d,
    conv2: Conv2d,
    fc1: Linear,
    fc2: Linear,
}

impl AttenuationBranch {
    fn new(init: &mut Init<'_>, cfg: &ParConfig) -> Result<Self> {
        let w = cfg.attenuation_width;
        Ok(Self {
            conv1: Conv2d::same3(&mut init.sub("conv1"), 1, w, true)?,
            conv2: Conv2d::same3(&mut init.sub("conv2"), w, w, true)?,
            fc1: Linear::new(&mut init.sub("fc1"), w * POOLED_GRID * POOLED_GRID, cfg.attenuation_hidden)?,
            fc2: Linear::new(&mut init.sub("fc2"), cfg.attenuation_hidden, 1)?,
        })
    }

    fn forward(&self, channel: &Tensor) -> Result<Tensor> {
        let x = self.conv2.forward(&self.conv1.forward(channel)?)?;
        let x = max_pool2x(&x)?.relu()?;
        let x = adaptive_avg_pool2d(&x, POOLED_GRID)?.flatten_from(1)?;
        let x = self.fc1.forward(&x)?.relu()?;
        Ok((softplus(&self.fc2.forward(&x)?)? + MIN_ATTENUATION)?)
    }
}

#[derive(Debug, Clone)]
pub struct AttenuationEstimator {
    branches: [AttenuationBranch; 3],
}

impl AttenuationEstimator {
    fn new(init: &mut Init<'_>, cfg: &ParConfig) -> Result<Self> {
        Ok(Self {
            branches: [
                AttenuationBranch::new(&mut init.sub("r"), cfg)?,
                AttenuationBranch::new(&mut init.sub("g"), cfg)?,
                AttenuationBranch::new(&mut init.sub("b"), cfg)?,
            ],
        })
    }

    pub fn forward(&self, image: &Image) -> Result<Attenuation> {
        let x = image.tensor();
        let per_channel = self
            .branches
            .iter()
            .enumerate()
            .map(|(c, branch)| branch.forward(&x.narrow(1, c, 1)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Attenuation::from_positive(Tensor::cat(&per_channel, 1)?))
    }
}

#[derive(Debug, Clone)]
pub struct DepthEstimator {
    stem: ConvBnAct,
    rbd: ResidualBlock,
    neck: ConvBnAct,
    head: Conv2d,
}

impl DepthEstimator {
    fn new(init: &mut Init<'_>, width: usize) -> Result<Self> {
        Ok(Self {
            stem: ConvBnAct::cbr(&mut init.sub("stem"), 3, width)?,
            rbd: ResidualBlock::new(&mut init.sub("rbd"), width, width)?,
            neck: ConvBnAct::cbr(&mut init.sub("neck"), width, width)?,
            head: Conv2d::same3(&mut init.sub("head"), width, 1, true)?,
        })
    }

    /// Accepts any 3-channel tensor; the discriminator path feeds generator
    /// outputs through here.
    pub fn forward_tensor(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let x = self.stem.forward(x, mode)?;
        let x = self.rbd.forward(&x, mode)?;
        let x = self.neck.forward(&x, mode)?;
        sigmoid(&self.head.forward(&x)?)
    }

    pub fn forward(&self, image: &Image, mode: Mode) -> Result<DepthMap> {
        Ok(DepthMap::from_bounded(self.forward_tensor(image.tensor(), mode)?))
    }
}

#[derive(Debug, Clone)]
pub struct TransmissionEstimator {
    body: ConvBnAct,
    head: Conv2d,
}

impl TransmissionEstimator {
    fn new(init: &mut Init<'_>, width: usize) -> Result<Self> {
        Ok(Self {
            body: ConvBnAct::cbr(&mut init.sub("body"), 3, width)?,
            head: Conv2d::same3(&mut init.sub("head"), width, 3, true)?,
        })
    }

    pub fn forward(&self, depth: &DepthMap, beta: &Attenuation, mode: Mode) -> Result<TransmissionMap> {
        let d = depth.tensor();
        let b = beta.batch();
        if d.dims()[0] != b {
            return Err(Error::Shape(format!(
                "depth batch {} vs attenuation batch {b}",
                d.dims()[0]
            )));
        }
        let product = d.broadcast_mul(&beta.tensor().reshape((b, 3, 1, 1))?)?;
        let t = sigmoid(&self.head.forward(&self.body.forward(&product, mode)?)?)?;
        Ok(TransmissionMap::from_bounded(t))
    }
}

/// Everything the parameter estimator produces for one batch.
#[derive(Debug, Clone)]
pub struct ParOutputs {
    pub beta: Attenuation,
    pub d1: DepthMap,
    pub t: TransmissionMap,
    pub d2: DepthMap,
    pub j_prime: Image,
}

impl ParOutputs {
    pub fn detach(&self) -> ParOutputs {
        ParOutputs {
            beta: self.beta.detach(),
            d1: self.d1.detach(),
            t: self.t.detach(),
            d2: self.d2.detach(),
            j_prime: self.j_prime.detach(),
        }
    }
}

/// Parameter prefixes of the three estimators inside the store.
pub const ATTENUATION_PREFIX: &str = "attenuation.";
pub const DEPTH_PREFIX: &str = "depth.";
pub const TRANSMISSION_PREFIX: &str = "transmission.";

#[derive(Debug, Clone)]
pub struct ParSubnet {
    config: ParConfig,
    store: ParameterStore,
    attenuation: AttenuationEstimator,
    depth: DepthEstimator,
    transmission: TransmissionEstimator,
}

impl ParSubnet {
    pub fn new(config: ParConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new(dtype);
        let mut init = store.initializer(seed);
        let attenuation = AttenuationEstimator::new(&mut init.sub("attenuation"), &config)?;
        let depth = DepthEstimator::new(&mut init.sub("depth"), config.depth_width)?;
        let transmission = TransmissionEstimator::new(&mut init.sub("transmission"), config.transmission_width)?;
        Ok(Self { config, store, attenuation, depth, transmission })
    }

    pub fn config(&self) -> &ParConfig {
        &self.config
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn depth_estimator(&self) -> &DepthEstimator {
        &self.depth
    }

    pub fn estimate_attenuation(&self, image: &Image) -> Result<Attenuation> {
        self.attenuation.forward(image)
    }

    pub fn estimate_depth(&self, image: &Image, mode: Mode) -> Result<DepthMap> {
        self.depth.forward(image, mode)
    }

    pub fn estimate_transmission(
        &self,
        depth: &DepthMap,
        beta: &Attenuation,
        mode: Mode,
    ) -> Result<TransmissionMap> {
        self.transmission.forward(depth, beta, mode)
    }

    /// Runs all three estimators and the two physical conversions.
    pub fn forward(&self, image: &Image, mode: Mode) -> Result<ParOutputs> {
        let beta = self.estimate_attenuation(image)?;
        let d1 = self.estimate_depth(image, mode)?;
        self.finish(image, beta, d1, mode)
    }

    /// Like [`forward`](Self::forward) but with a caller-supplied attenuation,
    /// used while the attenuation estimator is frozen.
    pub fn forward_with_attenuation(&self, image: &Image, beta: Attenuation, mode: Mode) -> Result<ParOutputs> {
        let d1 = self.estimate_depth(image, mode)?;
        self.finish(image, beta, d1, mode)
    }

    fn finish(&self, image: &Image, beta: Attenuation, d1: DepthMap, mode: Mode) -> Result<ParOutputs> {
        let t = self.estimate_transmission(&d1, &beta, mode)?;
        let d2 = depth_from_transmission(&t, &beta)?;
        let j_prime = invert_color_enhanced(image, &t)?;
        Ok(ParOutputs { beta, d1, t, d2, j_prime })
    }
}

/// The two halves of the parameter-estimation loss.
#[derive(Debug, Clone)]
pub struct ParLossTerms {
    /// `mean|d - d1| + mean|d - d2|`, batch averaged.
    pub depth: Tensor,
    /// `(1/3) sum_c |beta_gt - beta|`, batch averaged.
    pub attenuation: Tensor,
}

impl ParLossTerms {
    pub fn total(&self) -> Result<Tensor> {
        Ok((&self.depth + &self.attenuation)?)
    }
}

pub fn par_loss_terms(
    d1: &DepthMap,
    d2: &DepthMap,
    d_gt: &DepthMap,
    beta: &Attenuation,
    beta_gt: &Attenuation,
) -> Result<ParLossTerms> {
    ensure_same_shape("par_loss (d1 vs d)", d1.tensor(), d_gt.tensor())?;
    ensure_same_shape("par_loss (d2 vs d)", d2.tensor(), d_gt.tensor())?;
    ensure_same_shape("par_loss (beta vs beta_gt)", beta.tensor(), beta_gt.tensor())?;
    let gt = d_gt.tensor();
    let per_pixel = |d: &DepthMap| -> Result<Tensor> {
        // mean over (channel, H, W) per sample, then over the batch
        Ok((gt - d.tensor())?.abs()?.flatten_from(1)?.mean(D::Minus1)?.mean_all()?)
    };
    let depth = (per_pixel(d1)? + per_pixel(d2)?)?;
    let attenuation = (beta_gt.tensor() - beta.tensor())?.abs()?.mean(D::Minus1)?.mean_all()?;
    Ok(ParLossTerms { depth, attenuation })
}

/// Scalar parameter-estimation loss: depth terms plus the attenuation term.
pub fn par_loss(
    d1: &DepthMap,
    d2: &DepthMap,
    d_gt: &DepthMap,
    beta: &Attenuation,
    beta_gt: &Attenuation,
) -> Result<Tensor> {
    par_loss_terms(d1, d2, d_gt, beta, beta_gt)?.total()
}
