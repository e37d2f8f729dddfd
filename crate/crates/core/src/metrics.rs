//! Full-reference (MSE, PSNR) and no-reference (UIQM, UCIQE) image metrics.
//!
//! All metrics work on the 0-255 scale. UIQM follows the widely used
//! colourfulness/sharpness/contrast formulation with alpha-trimmed colour
//! statistics, Sobel edge maps scored by EME and a PLIP-style logAMEE
//! contrast term. UCIQE is computed in CIELab (sRGB input, D65 white).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_shape, Error, Result};
use crate::physics::Image;

/// Reported PSNR when the two images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const UIQM_C1: f64 = 0.0282;
pub const UIQM_C2: f64 = 0.2953;
pub const UIQM_C3: f64 = 3.5753;

pub const UCIQE_C1: f64 = 0.4680;
pub const UCIQE_C2: f64 = 0.2745;
pub const UCIQE_C3: f64 = 0.2576;

const UICM_TRIM: f64 = 0.1;
const UISM_LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Side of the square blocks used by the UISM and UIConM terms.
    pub uiqm_block: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { uiqm_block: 8 }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.uiqm_block == 0 {
            return Err(Error::Config("uiqm_block must be positive".into()));
        }
        Ok(())
    }
}

/// One image as three `h x w` planes on the 0-255 scale.
struct Planes {
    h: usize,
    w: usize,
    c: [Vec<f64>; 3],
}

impl Planes {
    fn at(&self, ch: usize, y: usize, x: usize) -> f64 {
        self.c[ch][y * self.w + x]
    }
}

fn planes(image: &Image) -> Result<Vec<Planes>> {
    let t = image.tensor().to_dtype(DType::F64)?;
    let (b, _, h, w) = t.dims4()?;
    let flat = t.flatten_all()?.to_vec1::<f64>()?;
    let n = h * w;
    Ok((0..b)
        .map(|i| {
            let base = i * 3 * n;
            let plane = |c: usize| flat[base + c * n..base + (c + 1) * n].iter().map(|v| v * 255.0).collect();
            Planes { h, w, c: [plane(0), plane(1), plane(2)] }
        })
        .collect())
}

fn mean_over_batch(image: &Image, f: impl Fn(&Planes) -> f64) -> Result<f64> {
    let ps = planes(image)?;
    Ok(ps.iter().map(f).sum::<f64>() / ps.len() as f64)
}

/// Mean squared error on the 0-255 scale.
pub fn mse(e: &Image, y: &Image) -> Result<f64> {
    ensure_same_shape("mse", e.tensor(), y.tensor())?;
    let a = e.tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let b = y.tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let sum: f64 = a.iter().zip(&b).map(|(p, q)| (255.0 * (p - q)).powi(2)).sum();
    Ok(sum / a.len() as f64)
}

/// `10 log10(255^2 / mse)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(e: &Image, y: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(e, y)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UiqmComponents {
    pub uicm: f64,
    pub uism: f64,
    pub uiconm: f64,
}

impl UiqmComponents {
    pub fn combined(&self) -> f64 {
        UIQM_C1 * self.uicm + UIQM_C2 * self.uism + UIQM_C3 * self.uiconm
    }
}

/// Mean of the values left after dropping the lowest `ceil(a K)` and the
/// highest `floor(a K)` samples.
fn trimmed_mean(values: &[f64], a: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    let lo = (a * k as f64).ceil() as usize;
    let hi = (a * k as f64).floor() as usize;
    let kept = &v[lo..k - hi];
    kept.iter().sum::<f64>() / kept.len() as f64
}

fn uicm(p: &Planes) -> f64 {
    let n = p.h * p.w;
    let rg: Vec<f64> = (0..n).map(|i| p.c[0][i] - p.c[1][i]).collect();
    let yb: Vec<f64> = (0..n).map(|i| 0.5 * (p.c[0][i] + p.c[1][i]) - p.c[2][i]).collect();
    let (mu_rg, mu_yb) = (trimmed_mean(&rg, UICM_TRIM), trimmed_mean(&yb, UICM_TRIM));
    let spread = |v: &[f64], mu: f64| v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / v.len() as f64;
    -0.0268 * (mu_rg * mu_rg + mu_yb * mu_yb).sqrt() + 0.1586 * (spread(&rg, mu_rg) + spread(&yb, mu_yb)).sqrt()
}

/// Index into `0..n` with half-sample symmetric reflection at the borders.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Sobel gradient magnitude of one plane, rescaled so its maximum is 255.
fn sobel_magnitude(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let px = |y: isize, x: isize| plane[reflect(y, h) * w + reflect(x, w)];
    // separable passes: derivative [-1, 0, 1] along one axis, smoothing [1, 2, 1] along the other
    let mut mag = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let smooth_x = |yy: isize| px(yy, x - 1) + 2.0 * px(yy, x) + px(yy, x + 1);
            let smooth_y = |xx: isize| px(y - 1, xx) + 2.0 * px(y, xx) + px(y + 1, xx);
            let gy = smooth_x(y + 1) - smooth_x(y - 1);
            let gx = smooth_y(x + 1) - smooth_y(x - 1);
            mag[y as usize * w + x as usize] = gx.hypot(gy);
        }
    }
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        mag.iter_mut().for_each(|m| *m *= 255.0 / peak);
    }
    mag
}

/// Full `block x block` tiles, truncating any remainder at the right and bottom.
fn tiles(h: usize, w: usize, block: usize) -> impl Iterator<Item = (usize, usize)> {
    let (ky, kx) = (h / block, w / block);
    (0..ky).flat_map(move |by| (0..kx).map(move |bx| (by * block, bx * block)))
}

fn block_extrema(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Measure of enhancement: `2 / (k1 k2) * sum ln(max / min)` over blocks,
/// with blocks containing a zero contributing nothing.
fn eme(plane: &[f64], h: usize, w: usize, block: usize) -> f64 {
    let count = (h / block) * (w / block);
    if count == 0 {
        return 0.0;
    }
    let total: f64 = tiles(h, w, block)
        .map(|(y0, x0)| {
            let (lo, hi) = block_extrema(
                (y0..y0 + block).flat_map(|y| (x0..x0 + block).map(move |x| plane[y * w + x])),
            );
            if lo == 0.0 || hi == 0.0 {
                0.0
            } else {
                (hi / lo).ln()
            }
        })
        .sum();
    2.0 / count as f64 * total
}

fn uism(p: &Planes, block: usize) -> f64 {
    (0..3)
        .map(|c| {
            let mag = sobel_magnitude(&p.c[c], p.h, p.w);
            let edges: Vec<f64> = mag.iter().zip(&p.c[c]).map(|(m, v)| m * v).collect();
            UISM_LUMA[c] * eme(&edges, p.h, p.w, block)
        })
        .sum()
}

/// logAMEE contrast over colour blocks: `-1 / (k1 k2) * sum r ln r` with
/// `r = (max - min) / (max + min)` taken over all three channels of a block.
fn uiconm(p: &Planes, block: usize) -> f64 {
    let count = (p.h / block) * (p.w / block);
    if count == 0 {
        return 0.0;
    }
    let total: f64 = tiles(p.h, p.w, block)
        .map(|(y0, x0)| {
            let (lo, hi) = block_extrema((0..3).flat_map(|c| {
                (y0..y0 + block).flat_map(move |y| (x0..x0 + block).map(move |x| p.at(c, y, x)))
            }));
            let (top, bot) = (hi - lo, hi + lo);
            if top == 0.0 || bot == 0.0 {
                0.0
            } else {
                (top / bot) * (top / bot).ln()
            }
        })
        .sum();
    -total / count as f64
}

pub fn uiqm_components(image: &Image, cfg: &MetricsConfig) -> Result<Vec<UiqmComponents>> {
    cfg.validate()?;
    Ok(planes(image)?
        .iter()
        .map(|p| UiqmComponents { uicm: uicm(p), uism: uism(p, cfg.uiqm_block), uiconm: uiconm(p, cfg.uiqm_block) })
        .collect())
}

/// UIQM, averaged over the batch.
pub fn uiqm(image: &Image, cfg: &MetricsConfig) -> Result<f64> {
    let parts = uiqm_components(image, cfg)?;
    Ok(parts.iter().map(UiqmComponents::combined).sum::<f64>() / parts.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UciqeComponents {
    pub chroma_std: f64,
    pub luminance_contrast: f64,
    pub saturation_mean: f64,
}

impl UciqeComponents {
    pub fn combined(&self) -> f64 {
        UCIQE_C1 * self.chroma_std + UCIQE_C2 * self.luminance_contrast + UCIQE_C3 * self.saturation_mean
    }
}

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA.powi(3) {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// CIELab of an sRGB triple in `[0, 1]`. The white point is the XYZ of
/// sRGB white so that achromatic inputs map to `a = b = 0`.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let xyz: [f64; 3] = std::array::from_fn(|i| SRGB_TO_XYZ[i].iter().zip(&lin).map(|(m, v)| m * v).sum());
    let white: [f64; 3] = std::array::from_fn(|i| SRGB_TO_XYZ[i].iter().sum());
    let f: [f64; 3] = std::array::from_fn(|i| lab_f(xyz[i] / white[i]));
    [116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])]
}

/// Linear-interpolated percentile, `q` in `[0, 1]`, of an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    match sorted.get(i + 1) {
        Some(next) => sorted[i] + frac * (next - sorted[i]),
        None => sorted[i],
    }
}

fn uciqe_one(p: &Planes) -> UciqeComponents {
    let n = p.h * p.w;
    let mut lum = Vec::with_capacity(n);
    let mut chroma = Vec::with_capacity(n);
    let mut sat = 0.0;
    for i in 0..n {
        let lab = srgb_to_lab([p.c[0][i] / 255.0, p.c[1][i] / 255.0, p.c[2][i] / 255.0]);
        let c = lab[1].hypot(lab[2]);
        let denom = c.hypot(lab[0]);
        if denom > 0.0 {
            sat += c / denom;
        }
        lum.push(lab[0] / 100.0);
        chroma.push(c / 100.0);
    }
    let mean_c = chroma.iter().sum::<f64>() / n as f64;
    let chroma_std = (chroma.iter().map(|c| (c - mean_c).powi(2)).sum::<f64>() / n as f64).sqrt();
    lum.sort_by(f64::total_cmp);
    UciqeComponents {
        chroma_std,
        luminance_contrast: percentile(&lum, 0.99) - percentile(&lum, 0.01),
        saturation_mean: sat / n as f64,
    }
}

pub fn uciqe_components(image: &Image) -> Result<Vec<UciqeComponents>> {
    Ok(planes(image)?.iter().map(uciqe_one).collect())
}

/// UCIQE, averaged over the batch.
pub fn uciqe(image: &Image) -> Result<f64> {
    mean_over_batch(image, |p| uciqe_one(p).combined())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Psnr,
    Mse,
    Uiqm,
    Uciqe,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Psnr, Metric::Mse, Metric::Uiqm, Metric::Uciqe];

    /// Column name used in reports.
    pub fn column(self) -> &'static str {
        match self {
            Metric::Psnr => "psnr_db",
            Metric::Mse => "mse",
            Metric::Uiqm => "uiqm",
            Metric::Uciqe => "uciqe",
        }
    }

    pub fn needs_reference(self) -> bool {
        matches!(self, Metric::Psnr | Metric::Mse)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Psnr => "psnr",
            Metric::Mse => "mse",
            Metric::Uiqm => "uiqm",
            Metric::Uciqe => "uciqe",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "psnr" => Ok(Metric::Psnr),
            "mse" => Ok(Metric::Mse),
            "uiqm" => Ok(Metric::Uiqm),
            "uciqe" => Ok(Metric::Uciqe),
            other => Err(Error::Config(format!("unknown metric `{other}` (expected psnr, mse, uiqm, uciqe)"))),
        }
    }
}

/// Parses a comma-separated metric list, keeping the canonical order.
pub fn parse_metric_list(s: &str) -> Result<Vec<Metric>> {
    let mut picked: Vec<Metric> = s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    picked.sort();
    picked.dedup();
    if picked.is_empty() {
        return Err(Error::Config("no metrics selected".into()));
    }
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub uiqm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub uciqe: Option<f64>,
}

impl MetricRow {
    fn empty(id: &str) -> Self {
        Self { id: id.to_string(), psnr_db: None, mse: None, uiqm: None, uciqe: None }
    }

    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Psnr => self.psnr_db,
            Metric::Mse => self.mse,
            Metric::Uiqm => self.uiqm,
            Metric::Uciqe => self.uciqe,
        }
    }

    fn set(&mut self, m: Metric, v: f64) {
        let slot = match m {
            Metric::Psnr => &mut self.psnr_db,
            Metric::Mse => &mut self.mse,
            Metric::Uiqm => &mut self.uiqm,
            Metric::Uciqe => &mut self.uciqe,
        };
        *slot = Some(v);
    }
}

/// Per-image rows plus their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: Vec<Metric>,
    pub rows: Vec<MetricRow>,
    pub mean: MetricRow,
}

/// One image to score, with its reference when full-reference metrics are wanted.
pub struct EvalItem<'a> {
    pub id: &'a str,
    pub prediction: &'a Image,
    pub reference: Option<&'a Image>,
}

impl MetricReport {
    pub fn compute(items: &[EvalItem<'_>], metrics: &[Metric], cfg: &MetricsConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rows = Vec::with_capacity(items.len());
        for item in items {
            let mut row = MetricRow::empty(item.id);
            for &m in metrics {
                let v = match m {
                    Metric::Psnr | Metric::Mse => {
                        let r = item.reference.ok_or_else(|| {
                            Error::Config(format!("metric `{m}` needs a reference image for `{}`", item.id))
                        })?;
                        let e = mse(item.prediction, r)?;
                        if m == Metric::Mse {
                            e
                        } else {
                            psnr_from_mse(e)
                        }
                    }
                    Metric::Uiqm => uiqm(item.prediction, cfg)?,
                    Metric::Uciqe => uciqe(item.prediction)?,
                };
                row.set(m, v);
            }
            rows.push(row);
        }
        let mut mean = MetricRow::empty("mean");
        if !rows.is_empty() {
            for &m in metrics {
                let total: f64 = rows.iter().filter_map(|r| r.get(m)).sum();
                mean.set(m, total / rows.len() as f64);
            }
        }
        Ok(Self { metrics: metrics.to_vec(), rows, mean })
    }

    fn table(&self) -> Vec<Vec<String>> {
        let mut out = vec![std::iter::once("id".to_string())
            .chain(self.metrics.iter().map(|m| m.column().to_string()))
            .collect()];
        for row in self.rows.iter().chain(std::iter::once(&self.mean)) {
            let mut line = vec![row.id.clone()];
            line.extend(self.metrics.iter().map(|&m| row.get(m).map(|v| format!("{v}")).unwrap_or_default()));
            out.push(line);
        }
        out
    }

    /// CSV with one row per image and a final `mean` row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        for line in self.table() {
            w.write_record(&line).map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Writes CSV or JSON depending on the file extension.
    pub fn write(&self, path: &Path) -> Result<()> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("csv") => self.write_csv(path),
            Some("json") => self.write_json(path),
            _ => Err(Error::Config(format!("report path {} must end in .csv or .json", path.display()))),
        }
    }

    /// Means keyed by metric column name.
    pub fn means(&self) -> BTreeMap<&'static str, f64> {
        self.metrics.iter().filter_map(|&m| self.mean.get(m).map(|v| (m.column(), v))).collect()
    }
}

#[cfg(test)]
#[path = "../tests/common/metric_oracle.rs"]
mod metric_oracle;
