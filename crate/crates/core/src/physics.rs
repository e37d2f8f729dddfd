//! Underwater imaging model: synthesis of degraded images, conversion
//! between depth and transmission, and the colour-correcting inversion.
//!
//! All operations work on batched `(batch, channels, height, width)` tensors
//! and stay differentiable, so they can sit inside a training graph.

use candle_core::{DType, Device, Tensor};

use crate::error::{ensure_same_shape, Error, Result};

/// Floor applied to the transmission before dividing by it.
pub const TRANSMISSION_FLOOR: f64 = 0.1;

/// Transmission values are clamped into `[LOG_CLAMP, 1 - LOG_CLAMP]` before
/// taking their logarithm.
pub const LOG_CLAMP: f64 = 1e-4;

fn check_rank4(what: &str, t: &Tensor, channels: usize) -> Result<()> {
    match t.dims() {
        [_, c, h, w] if *c == channels && *h > 0 && *w > 0 => Ok(()),
        dims => Err(Error::Shape(format!(
            "{what} must be (batch, {channels}, height, width), got {dims:?}"
        ))),
    }
}

pub(crate) fn value_range(t: &Tensor) -> Result<(f64, f64)> {
    let flat = t.flatten_all()?.to_dtype(DType::F64)?;
    let min = flat.min(0)?.to_scalar::<f64>()?;
    let max = flat.max(0)?.to_scalar::<f64>()?;
    if min.is_nan() || max.is_nan() {
        return Err(Error::InvalidValue("tensor contains NaN".into()));
    }
    Ok((min, max))
}

fn check_unit_range(what: &str, t: &Tensor) -> Result<()> {
    let (min, max) = value_range(t)?;
    if min < 0.0 || max > 1.0 {
        return Err(Error::InvalidValue(format!(
            "{what} values must lie in [0, 1], found [{min}, {max}]"
        )));
    }
    Ok(())
}

/// RGB image batch with intensities in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Image(Tensor);

impl Image {
    pub fn new(t: Tensor) -> Result<Self> {
        check_rank4("image", &t, 3)?;
        check_unit_range("image", &t)?;
        Ok(Self(t))
    }

    /// Wraps a tensor produced by a bounded network head without re-reading it.
    pub(crate) fn from_bounded(t: Tensor) -> Self {
        Self(t)
    }

    /// An image filled with a single value, handy for tests and probes.
    pub fn constant(value: f64, batch: usize, height: usize, width: usize, dtype: DType) -> Result<Self> {
        let t = Tensor::full(value, (batch, 3, height, width), &Device::Cpu)?.to_dtype(dtype)?;
        Self::new(t)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.0.dims()[2]
    }

    pub fn width(&self) -> usize {
        self.0.dims()[3]
    }

    /// Single-element batch holding image `index`.
    pub fn select(&self, index: usize) -> Result<Image> {
        Ok(Self(self.0.narrow(0, index, 1)?))
    }

    pub fn detach(&self) -> Image {
        Self(self.0.detach())
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Image> {
        Ok(Self(self.0.to_dtype(dtype)?))
    }

    /// Concatenates single images (or batches) along the batch axis.
    pub fn stack(images: &[&Image]) -> Result<Image> {
        let parts: Vec<&Tensor> = images.iter().map(|i| i.tensor()).collect();
        Ok(Self(Tensor::cat(&parts, 0)?))
    }
}

/// Single-channel normalised scene depth.
#[derive(Debug, Clone)]
pub struct DepthMap(Tensor);

impl DepthMap {
    pub fn new(t: Tensor) -> Result<Self> {
        check_rank4("depth map", &t, 1)?;
        check_unit_range("depth map", &t)?;
        Ok(Self(t))
    }

    pub(crate) fn from_bounded(t: Tensor) -> Self {
        Self(t)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn select(&self, index: usize) -> Result<DepthMap> {
        Ok(Self(self.0.narrow(0, index, 1)?))
    }

    pub fn detach(&self) -> DepthMap {
        Self(self.0.detach())
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<DepthMap> {
        Ok(Self(self.0.to_dtype(dtype)?))
    }

    pub fn stack(maps: &[&DepthMap]) -> Result<DepthMap> {
        let parts: Vec<&Tensor> = maps.iter().map(|m| m.tensor()).collect();
        Ok(Self(Tensor::cat(&parts, 0)?))
    }
}

/// Per-channel fraction of light reaching the camera unscattered.
#[derive(Debug, Clone)]
pub struct TransmissionMap(Tensor);

impl TransmissionMap {
    /// Accepts values in the closed interval `[0, 1]`; zero depth maps to
    /// exactly 1.
    pub fn new(t: Tensor) -> Result<Self> {
        check_rank4("transmission map", &t, 3)?;
        check_unit_range("transmission map", &t)?;
        Ok(Self(t))
    }

    pub(crate) fn from_bounded(t: Tensor) -> Self {
        Self(t)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn detach(&self) -> TransmissionMap {
        Self(self.0.detach())
    }
}

/// Per-image RGB attenuation coefficients, shape `(batch, 3)`, all positive.
#[derive(Debug, Clone)]
pub struct Attenuation(Tensor);

impl Attenuation {
    pub fn new(t: Tensor) -> Result<Self> {
        match t.dims() {
            [_, 3] => {}
            dims => {
                return Err(Error::Shape(format!(
                    "attenuation must be (batch, 3), got {dims:?}"
                )))
            }
        }
        ensure_positive(&t)?;
        Ok(Self(t))
    }

    pub(crate) fn from_positive(t: Tensor) -> Self {
        Self(t)
    }

    /// The same coefficients for every element of a batch.
    pub fn uniform(rgb: [f64; 3], batch: usize, dtype: DType) -> Result<Self> {
        let row = Tensor::new(&rgb, &Device::Cpu)?.to_dtype(dtype)?;
        Self::new(row.unsqueeze(0)?.repeat((batch, 1))?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn batch(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn to_rows(&self) -> Result<Vec<[f64; 3]>> {
        let rows = self.0.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        Ok(rows.into_iter().map(|r| [r[0], r[1], r[2]]).collect())
    }

    pub fn detach(&self) -> Attenuation {
        Self(self.0.detach())
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Attenuation> {
        Ok(Self(self.0.to_dtype(dtype)?))
    }

    pub fn stack(items: &[&Attenuation]) -> Result<Attenuation> {
        let parts: Vec<&Tensor> = items.iter().map(|a| a.tensor()).collect();
        Ok(Self(Tensor::cat(&parts, 0)?))
    }

    /// `(batch, 3, 1, 1)` view for broadcasting against image tensors.
    fn as_planes(&self) -> Result<Tensor> {
        let b = self.batch();
        Ok(self.0.reshape((b, 3, 1, 1))?)
    }
}

fn ensure_positive(beta: &Tensor) -> Result<()> {
    let (min, _) = value_range(beta)?;
    if min <= 0.0 {
        return Err(Error::InvalidValue(format!(
            "attenuation coefficients must be > 0, found {min}"
        )));
    }
    Ok(())
}

/// Ambient veiling light, one value per colour channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundLight {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl BackgroundLight {
    pub fn new(r: f64, g: f64, b: f64) -> Result<Self> {
        for (name, v) in [("r", r), ("g", g), ("b", b)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidValue(format!(
                    "background light {name} component must be in [0, 1], got {v}"
                )));
            }
        }
        Ok(Self { r, g, b })
    }

    fn as_planes(&self, dtype: DType) -> Result<Tensor> {
        let t = Tensor::new(&[self.r, self.g, self.b], &Device::Cpu)?;
        Ok(t.to_dtype(dtype)?.reshape((1, 3, 1, 1))?)
    }
}

fn check_batch(what: &str, batch: usize, beta: &Attenuation) -> Result<()> {
    if beta.batch() != batch {
        return Err(Error::Shape(format!(
            "{what}: batch {batch} vs attenuation batch {}",
            beta.batch()
        )));
    }
    Ok(())
}

/// `I = J t + A (1 - t)`, clamped to `[0, 1]`.
pub fn synthesize_degraded(
    clean: &Image,
    transmission: &TransmissionMap,
    light: &BackgroundLight,
) -> Result<Image> {
    let (j, t) = (clean.tensor(), transmission.tensor());
    ensure_same_shape("synthesize_degraded (J vs t)", j, t)?;
    let a = light.as_planes(j.dtype())?;
    let veil = t.affine(-1.0, 1.0)?.broadcast_mul(&a)?;
    let out = ((j * t)? + veil)?.clamp(0.0, 1.0)?;
    Ok(Image(out))
}

/// `t^c = exp(-beta^c d)`, broadcasting the depth over the three channels.
pub fn transmission_from_depth(depth: &DepthMap, beta: &Attenuation) -> Result<TransmissionMap> {
    ensure_positive(beta.tensor())?;
    let d = depth.tensor();
    check_batch("transmission_from_depth", d.dims()[0], beta)?;
    let t = d.broadcast_mul(&beta.as_planes()?)?.neg()?.exp()?;
    Ok(TransmissionMap(t))
}

/// Recovers depth as `-ln(t^c) / beta^c`, averaged over the colour channels.
pub fn depth_from_transmission(
    transmission: &TransmissionMap,
    beta: &Attenuation,
) -> Result<DepthMap> {
    ensure_positive(beta.tensor())?;
    let t = transmission.tensor();
    check_batch("depth_from_transmission", t.dims()[0], beta)?;
    let per_channel = t
        .clamp(LOG_CLAMP, 1.0 - LOG_CLAMP)?
        .log()?
        .neg()?
        .broadcast_div(&beta.as_planes()?)?;
    Ok(DepthMap(per_channel.mean_keepdim(1)?))
}

/// Colour-corrected image `J' = I / max(t, 0.1)`, clamped to `[0, 1]`.
pub fn invert_color_enhanced(image: &Image, transmission: &TransmissionMap) -> Result<Image> {
    let (i, t) = (image.tensor(), transmission.tensor());
    ensure_same_shape("invert_color_enhanced (I vs t)", i, t)?;
    let floor = t.maximum(TRANSMISSION_FLOOR)?;
    Ok(Image((i / floor)?.clamp(0.0, 1.0)?))
}
