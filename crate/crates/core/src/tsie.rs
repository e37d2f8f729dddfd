//! Two-stream interaction enhancement network.
//!
//! The raw image `I` and the colour-enhanced image `J'` go through separate
//! five-level encoders. At every level a degradation-quantization (DQ) unit
//! compares the two streams and looks at the transmission map, turning both
//! into per-position weights that reinforce the `I` features before they
//! reach the decoder.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_shape, Error, Result};
use crate::nn::{max_pool2x, sigmoid, upsample2x, Conv2d, ConvBnAct, Init, Mode, ParameterStore, ResidualBlock};
use crate::par_subnet::ParOutputs;
use crate::physics::{Image, TransmissionMap};

pub const LEVELS: usize = 5;
pub const DEFAULT_WIDTHS: [usize; LEVELS] = [32, 64, 128, 256, 512];

/// Keeps the per-channel min-max normalisation finite on flat channels.
const NORM_EPS: f64 = 1e-6;

/// Degradation-quantization threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqConfig {
    pub alpha: f64,
}

impl DqConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("dq alpha must be in (0, 1), got {alpha}")));
        }
        Ok(Self { alpha })
    }
}

impl Default for DqConfig {
    fn default() -> Self {
        Self { alpha: 0.7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsieConfig {
    pub widths: [usize; LEVELS],
}

impl Default for TsieConfig {
    fn default() -> Self {
        Self { widths: DEFAULT_WIDTHS }
    }
}

impl TsieConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        Ok(())
    }
}

/// Five encoder feature maps; level `k` (1-based) is at `1/2^k` resolution.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Tensor>) -> Result<Self> {
        if levels.len() != LEVELS {
            return Err(Error::Shape(format!("pyramid needs {LEVELS} levels, got {}", levels.len())));
        }
        for (k, pair) in levels.windows(2).enumerate() {
            let (_, _, h0, w0) = pair[0].dims4()?;
            let (_, _, h1, w1) = pair[1].dims4()?;
            if h0 != 2 * h1 || w0 != 2 * w1 {
                return Err(Error::Shape(format!(
                    "pyramid level {} is {h1}x{w1}, expected half of {h0}x{w0}",
                    k + 2
                )));
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    /// Level `k`, 1-based.
    pub fn level(&self, k: usize) -> &Tensor {
        &self.levels[k - 1]
    }
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    conv: Conv2d,
    res: ResidualBlock,
}

impl EncoderBlock {
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = max_pool2x(&self.conv.forward(x)?)?.relu()?;
        self.res.forward(&y, mode)
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    blocks: Vec<EncoderBlock>,
}

impl Encoder {
    fn new(init: &mut Init<'_>, widths: &[usize; LEVELS]) -> Result<Self> {
        let mut blocks = Vec::with_capacity(LEVELS);
        let mut in_ch = 3;
        for (k, &w) in widths.iter().enumerate() {
            let mut level = init.sub(&format!("level{}", k + 1));
            blocks.push(EncoderBlock {
                conv: Conv2d::same3(&mut level.sub("conv"), in_ch, w, true)?,
                res: ResidualBlock::new(&mut level.sub("res"), w, w)?,
            });
            in_ch = w;
        }
        Ok(Self { blocks })
    }

    pub fn forward(&self, image: &Image, mode: Mode) -> Result<FeaturePyramid> {
        let (h, w) = (image.height(), image.width());
        let stride = 1 << LEVELS;
        if h % stride != 0 || w % stride != 0 {
            return Err(Error::Shape(format!(
                "encoder input {h}x{w} must be divisible by {stride}"
            )));
        }
        let mut x = image.tensor().clone();
        let mut levels = Vec::with_capacity(LEVELS);
        for block in &self.blocks {
            x = block.forward(&x, mode)?;
            levels.push(x.clone());
        }
        FeaturePyramid::new(levels)
    }
}

/// Which encoder stream to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Fed with the raw image `I`.
    Top,
    /// Fed with the colour-enhanced image `J'`.
    Middle,
}

/// `f * step(f - alpha)` with the step treated as a constant mask.
pub fn threshold_mask(f: &Tensor, alpha: f64) -> Result<Tensor> {
    let mask = f.ge(alpha)?.to_dtype(f.dtype())?.detach();
    Ok((f * mask)?)
}

/// Rescales every `(sample, channel)` plane into `[0, 1]`. Flat planes map to 0.
pub fn normalize_per_channel(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let flat = x.reshape((b, c, h * w))?;
    let lo = flat.min_keepdim(D::Minus1)?;
    let hi = flat.max_keepdim(D::Minus1)?;
    let span = ((hi - &lo)? + NORM_EPS)?;
    Ok(flat.broadcast_sub(&lo)?.broadcast_div(&span)?.reshape((b, c, h, w))?)
}

/// Transmission-based degradation mask for encoder level `level` (1..=5).
///
/// The channel-mean transmission is max-pooled `level` times so it matches
/// the level's resolution; `g = 1 - pooled` is kept only where `g >= alpha`.
/// Output has a single channel and broadcasts over feature channels.
pub fn dq_transmission_mask(t: &TransmissionMap, level: usize, alpha: f64) -> Result<Tensor> {
    if !(1..=LEVELS).contains(&level) {
        return Err(Error::InvalidValue(format!("level must be in 1..={LEVELS}, got {level}")));
    }
    let mut pooled = t.tensor().mean_keepdim(1)?;
    for _ in 0..level {
        pooled = max_pool2x(&pooled)?;
    }
    threshold_mask(&pooled.affine(-1.0, 1.0)?, alpha)
}

/// Residual reinforcement `e + e * w`.
pub fn dq_apply(e_t: &Tensor, w: &Tensor) -> Result<Tensor> {
    ensure_same_shape("dq_apply (features vs weights)", e_t, w)?;
    Ok((e_t + (e_t * w)?)?)
}

/// Learned part of one DQ level.
#[derive(Debug, Clone)]
pub struct DqUnit {
    difference: ConvBnAct,
    weight_body: ConvBnAct,
    weight_head: Conv2d,
}

impl DqUnit {
    fn new(init: &mut Init<'_>, width: usize) -> Result<Self> {
        Ok(Self {
            difference: ConvBnAct::cbr(&mut init.sub("difference"), width, width)?,
            weight_body: ConvBnAct::cbr(&mut init.sub("weight_body"), width, width)?,
            weight_head: Conv2d::same3(&mut init.sub("weight_head"), width, width, true)?,
        })
    }

    /// Thresholded feature difference between the two streams.
    pub fn difference_mask(&self, e_t: &Tensor, e_m: &Tensor, alpha: f64, mode: Mode) -> Result<Tensor> {
        ensure_same_shape("dq_difference_mask (top vs middle)", e_t, e_m)?;
        let f = self.difference.forward(&(e_t - e_m)?.abs()?, mode)?;
        threshold_mask(&normalize_per_channel(&f)?, alpha)
    }

    /// Combines both masks into sigmoid weights shaped like the features.
    pub fn weights(&self, dif: &Tensor, t_mask: &Tensor, mode: Mode) -> Result<Tensor> {
        let (b, _, h, w) = dif.dims4()?;
        let (tb, tc, th, tw) = t_mask.dims4()?;
        if (tb, th, tw) != (b, h, w) || (tc != 1 && tc != dif.dims()[1]) {
            return Err(Error::Shape(format!(
                "dq_weights: difference {:?} vs transmission mask {:?}",
                dif.dims(),
                t_mask.dims()
            )));
        }
        let x = dif.broadcast_add(t_mask)?;
        sigmoid(&self.weight_head.forward(&self.weight_body.forward(&x, mode)?)?)
    }
}

#[derive(Debug, Clone)]
struct DecoderStage {
    up: ConvBnAct,
    res: ResidualBlock,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    bottom: ResidualBlock,
    stages: Vec<DecoderStage>,
    out: Conv2d,
}

impl Decoder {
    fn new(init: &mut Init<'_>, widths: &[usize; LEVELS]) -> Result<Self> {
        let bottom = ResidualBlock::new(&mut init.sub("level5"), widths[4], widths[4])?;
        let mut stages = Vec::with_capacity(LEVELS - 1);
        // stages[0] produces level 4, stages[3] produces level 1
        for k in (1..LEVELS).rev() {
            let (w, below) = (widths[k - 1], widths[k]);
            let mut level = init.sub(&format!("level{k}"));
            stages.push(DecoderStage {
                up: ConvBnAct::cbr(&mut level.sub("up"), below, w)?,
                res: ResidualBlock::new(&mut level.sub("res"), 2 * w, w)?,
            });
        }
        let out = Conv2d::same3(&mut init.sub("out"), widths[0], 3, true)?;
        Ok(Self { bottom, stages, out })
    }

    /// Decodes reinforced encoder features back to an image at twice the
    /// resolution of level 1.
    pub fn forward(&self, enhanced: &FeaturePyramid, mode: Mode) -> Result<Image> {
        let mut de = self.bottom.forward(enhanced.level(LEVELS), mode)?;
        for (stage, k) in self.stages.iter().zip((1..LEVELS).rev()) {
            let up = stage.up.forward(&upsample2x(&de)?, mode)?;
            de = stage.res.forward(&Tensor::cat(&[&up, enhanced.level(k)], 1)?, mode)?;
        }
        let e = sigmoid(&self.out.forward(&upsample2x(&de)?)?)?;
        Ok(Image::from_bounded(e))
    }
}

/// How the generator forms the DQ inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DqMasks {
    Computed,
    /// Both masks replaced by zeros; the weights then come from a zero input.
    Zero,
}

#[derive(Debug, Clone)]
pub struct Generator {
    config: TsieConfig,
    dq: DqConfig,
    store: ParameterStore,
    top: Encoder,
    middle: Encoder,
    units: Vec<DqUnit>,
    decoder: Decoder,
}

impl Generator {
    pub fn new(config: TsieConfig, dq: DqConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new(dtype);
        let mut init = store.initializer(seed);
        let top = Encoder::new(&mut init.sub("top"), &config.widths)?;
        let middle = Encoder::new(&mut init.sub("middle"), &config.widths)?;
        let mut units = Vec::with_capacity(LEVELS);
        for (k, &w) in config.widths.iter().enumerate() {
            units.push(DqUnit::new(&mut init.sub(&format!("dq.level{}", k + 1)), w)?);
        }
        let decoder = Decoder::new(&mut init.sub("decoder"), &config.widths)?;
        Ok(Self { config, dq, store, top, middle, units, decoder })
    }

    pub fn config(&self) -> &TsieConfig {
        &self.config
    }

    pub fn dq_config(&self) -> DqConfig {
        self.dq
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn encode(&self, image: &Image, which: Stream, mode: Mode) -> Result<FeaturePyramid> {
        match which {
            Stream::Top => self.top.forward(image, mode),
            Stream::Middle => self.middle.forward(image, mode),
        }
    }

    /// DQ unit of level `k`, 1-based.
    pub fn dq_unit(&self, k: usize) -> &DqUnit {
        &self.units[k - 1]
    }

    pub fn decode(&self, enhanced: &FeaturePyramid, mode: Mode) -> Result<Image> {
        self.decoder.forward(enhanced, mode)
    }

    pub fn forward(&self, image: &Image, par: &ParOutputs, mode: Mode) -> Result<Image> {
        self.forward_with(image, par, mode, DqMasks::Computed)
    }

    pub fn forward_with(&self, image: &Image, par: &ParOutputs, mode: Mode, masks: DqMasks) -> Result<Image> {
        ensure_same_shape("generator (I vs J')", image.tensor(), par.j_prime.tensor())?;
        let alpha = self.dq.alpha;
        let e_top = self.encode(image, Stream::Top, mode)?;
        let e_mid = self.encode(&par.j_prime, Stream::Middle, mode)?;
        let mut enhanced = Vec::with_capacity(LEVELS);
        for k in 1..=LEVELS {
            let (et, em) = (e_top.level(k), e_mid.level(k));
            let unit = self.dq_unit(k);
            let (dif, t_mask) = match masks {
                DqMasks::Computed => (
                    unit.difference_mask(et, em, alpha, mode)?,
                    dq_transmission_mask(&par.t, k, alpha)?,
                ),
                DqMasks::Zero => {
                    let (b, _, h, w) = et.dims4()?;
                    (et.zeros_like()?, Tensor::zeros((b, 1, h, w), et.dtype(), et.device())?)
                }
            };
            let w = unit.weights(&dif, &t_mask, mode)?;
            enhanced.push(dq_apply(et, &w)?);
        }
        self.decode(&FeaturePyramid::new(enhanced)?, mode)
    }
}
