//! Dataset ingestion and the synthetic fixture generator.
//!
//! Paired data lives in `trainA/` (degraded) and `trainB/` (reference), or
//! `testA/` and `testB/`, matched by filename stem. Synthetic data for the
//! parameter estimator lives in `images/`, `depth/` (16-bit grey PNG) and a
//! `beta.csv` with header `id,beta_r,beta_g,beta_b`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use candle_core::{DType, Device, Tensor};
use image::imageops::FilterType;
use image::{ImageBuffer, Luma, Rgb32FImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{
    synthesize_degraded, transmission_from_depth, Attenuation, BackgroundLight, DepthMap, Image,
};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Environment variable capping the number of batch-prefetch threads.
pub const NUM_WORKERS_ENV: &str = "PUGAN_NUM_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn dirs(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("trainA", "trainB"),
            Split::Test => ("testA", "testB"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PairedSample {
    pub id: String,
    pub degraded: Image,
    pub reference: Image,
}

#[derive(Debug, Clone, Default)]
pub struct PairedDataset {
    samples: Vec<PairedSample>,
}

impl PairedDataset {
    pub fn new(samples: Vec<PairedSample>) -> Result<Self> {
        check_unique(samples.iter().map(|s| s.id.as_str()))?;
        for s in &samples {
            if s.degraded.tensor().dims() != s.reference.tensor().dims() {
                return Err(Error::Data(format!("sample `{}`: degraded and reference sizes differ", s.id)));
            }
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[PairedSample] {
        &self.samples
    }

    /// Stacks the selected samples into `(degraded, reference)` batches.
    pub fn batch(&self, indices: &[usize]) -> Result<(Image, Image)> {
        let pick = |f: fn(&PairedSample) -> &Image| -> Result<Image> {
            let parts: Vec<&Image> = indices.iter().map(|&i| f(&self.samples[i])).collect();
            Image::stack(&parts)
        };
        Ok((pick(|s| &s.degraded)?, pick(|s| &s.reference)?))
    }

    /// Writes the pairs as PNGs under `root/{trainA,trainB}` (or test*).
    pub fn write(&self, root: &Path, split: Split) -> Result<()> {
        let (a, b) = split.dirs();
        for dir in [a, b] {
            fs::create_dir_all(root.join(dir)).map_err(|e| Error::io(root.join(dir), e))?;
        }
        for s in &self.samples {
            save_image(&s.degraded, &root.join(a).join(format!("{}.png", s.id)))?;
            save_image(&s.reference, &root.join(b).join(format!("{}.png", s.id)))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub id: String,
    pub degraded: Image,
    pub depth: DepthMap,
    pub beta: Attenuation,
    /// Clean scene, known only for generated fixtures.
    pub clean: Option<Image>,
    /// Background light used during synthesis, known only for fixtures.
    pub light: Option<BackgroundLight>,
}

#[derive(Debug, Clone, Default)]
pub struct SyntheticDataset {
    samples: Vec<SyntheticSample>,
}

impl SyntheticDataset {
    pub fn new(samples: Vec<SyntheticSample>) -> Result<Self> {
        check_unique(samples.iter().map(|s| s.id.as_str()))?;
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[SyntheticSample] {
        &self.samples
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Image, DepthMap, Attenuation)> {
        let sel: Vec<&SyntheticSample> = indices.iter().map(|&i| &self.samples[i]).collect();
        let images: Vec<&Image> = sel.iter().map(|s| &s.degraded).collect();
        let depths: Vec<&DepthMap> = sel.iter().map(|s| &s.depth).collect();
        let betas: Vec<&Attenuation> = sel.iter().map(|s| &s.beta).collect();
        Ok((Image::stack(&images)?, DepthMap::stack(&depths)?, Attenuation::stack(&betas)?))
    }

    /// Degraded image paired with its clean scene, for fixtures that have one.
    pub fn to_paired(&self) -> Result<PairedDataset> {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let clean = s
                    .clean
                    .clone()
                    .ok_or_else(|| Error::Data(format!("sample `{}` has no clean reference", s.id)))?;
                Ok(PairedSample { id: s.id.clone(), degraded: s.degraded.clone(), reference: clean })
            })
            .collect::<Result<Vec<_>>>()?;
        PairedDataset::new(samples)
    }

    /// Writes the `images/`, `depth/`, `beta.csv` layout.
    pub fn write(&self, root: &Path) -> Result<()> {
        for dir in ["images", "depth"] {
            fs::create_dir_all(root.join(dir)).map_err(|e| Error::io(root.join(dir), e))?;
        }
        let csv_path = root.join("beta.csv");
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Data(format!("{}: {e}", csv_path.display())))?;
        w.write_record(["id", "beta_r", "beta_g", "beta_b"]).map_err(|e| Error::Data(e.to_string()))?;
        for s in &self.samples {
            save_image(&s.degraded, &root.join("images").join(format!("{}.png", s.id)))?;
            save_depth16(&s.depth, &root.join("depth").join(format!("{}.png", s.id)))?;
            let b = s.beta.to_rows()?[0];
            let row = [s.id.clone(), fmt_f32(b[0]), fmt_f32(b[1]), fmt_f32(b[2])];
            w.write_record(&row).map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        Ok(())
    }
}

fn fmt_f32(v: f64) -> String {
    format!("{}", v as f32)
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Data(format!("duplicate sample id `{id}`")));
        }
    }
    Ok(())
}

/// Image files (png, jpg, jpeg) directly under `dir`, keyed by file stem.
/// Two files sharing a stem are an error.
pub fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Data(format!("non-UTF-8 file name in {}", dir.display())))?
            .to_string();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::Data(format!(
                "two files share the stem `{stem}`: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Loads degraded/reference pairs matched by filename stem, in lexicographic
/// stem order, resized to `image_size` squares.
pub fn load_paired(root: &Path, split: Split, image_size: usize) -> Result<PairedDataset> {
    let (a, b) = split.dirs();
    let left = list_images(&root.join(a))?;
    let right = list_images(&root.join(b))?;
    let orphans: Vec<String> = left
        .keys()
        .filter(|k| !right.contains_key(*k))
        .chain(right.keys().filter(|k| !left.contains_key(*k)))
        .cloned()
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Unpaired(orphans));
    }
    let samples = left
        .iter()
        .map(|(stem, pa)| {
            Ok(PairedSample {
                id: stem.clone(),
                degraded: load_image(pa, Some(image_size))?,
                reference: load_image(&right[stem], Some(image_size))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PairedDataset::new(samples)
}

#[derive(Debug, Deserialize)]
struct BetaRow {
    id: String,
    beta_r: f64,
    beta_g: f64,
    beta_b: f64,
}

/// Loads the synthetic set with depth and attenuation labels. Depth PNGs
/// are divided by 65535.
pub fn load_synthetic(root: &Path, image_size: Option<usize>) -> Result<SyntheticDataset> {
    let images = list_images(&root.join("images"))?;
    let depths = list_images(&root.join("depth"))?;
    let csv_path = root.join("beta.csv");
    let mut reader = csv::Reader::from_path(&csv_path)
        .map_err(|e| Error::Data(format!("{}: {e}", csv_path.display())))?;
    let headers = reader.headers().map_err(|e| Error::Data(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "beta_r", "beta_g", "beta_b"] {
        return Err(Error::Data(format!("beta.csv header must be id,beta_r,beta_g,beta_b, got {headers:?}")));
    }
    let mut betas = BTreeMap::new();
    for row in reader.deserialize::<BetaRow>() {
        let row = row.map_err(|e| Error::Data(format!("beta.csv: {e}")))?;
        let b = [row.beta_r, row.beta_g, row.beta_b];
        if b.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Data(format!("beta for `{}` must be positive, got {b:?}", row.id)));
        }
        betas.insert(row.id, b);
    }
    let mut samples = Vec::with_capacity(images.len());
    for (id, path) in &images {
        let depth_path = depths
            .get(id)
            .ok_or_else(|| Error::Data(format!("missing depth map for `{id}`")))?;
        let beta = betas
            .get(id)
            .ok_or_else(|| Error::Data(format!("missing beta.csv row for `{id}`")))?;
        samples.push(SyntheticSample {
            id: id.clone(),
            degraded: load_image(path, image_size)?,
            depth: load_depth16(depth_path, image_size)?,
            beta: Attenuation::uniform(*beta, 1, DType::F32)?,
            clean: None,
            light: None,
        });
    }
    SyntheticDataset::new(samples)
}

fn decode_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Decode { path: path.to_path_buf(), source }
}

/// Decodes an RGB image into a `(1, 3, H, W)` f32 batch in `[0, 1]`, resizing
/// bilinearly to `size x size` when it is not already that size.
pub fn load_image(path: &Path, size: Option<usize>) -> Result<Image> {
    let img = image::open(path).map_err(decode_err(path))?;
    let mut rgb: Rgb32FImage = img.to_rgb32f();
    if let Some(s) = size {
        if rgb.dimensions() != (s as u32, s as u32) {
            rgb = image::imageops::resize(&rgb, s as u32, s as u32, FilterType::Triangle);
        }
    }
    let (w, h) = rgb.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut planar = vec![0f32; 3 * h * w];
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            planar[c * h * w + y as usize * w + x as usize] = p.0[c].clamp(0.0, 1.0);
        }
    }
    Image::new(Tensor::from_vec(planar, (1, 3, h, w), &Device::Cpu)?)
}

pub fn load_depth16(path: &Path, size: Option<usize>) -> Result<DepthMap> {
    let img = image::open(path).map_err(decode_err(path))?;
    let mut gray = img.to_luma16();
    if let Some(s) = size {
        if gray.dimensions() != (s as u32, s as u32) {
            gray = image::imageops::resize(&gray, s as u32, s as u32, FilterType::Triangle);
        }
    }
    let (w, h) = gray.dimensions();
    let data: Vec<f32> = gray.pixels().map(|p| p.0[0] as f32 / 65535.0).collect();
    DepthMap::new(Tensor::from_vec(data, (1, 1, h as usize, w as usize), &Device::Cpu)?)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Planar `(3, H, W)` values of the first image in a batch.
fn first_planes(t: &Tensor) -> Result<(usize, usize, usize, Vec<f32>)> {
    let (_, c, h, w) = t.dims4()?;
    let v = t.narrow(0, 0, 1)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok((c, h, w, v))
}

/// Writes the first image of a batch as an 8-bit RGB PNG.
pub fn save_image(image: &Image, path: &Path) -> Result<()> {
    let (_, h, w, v) = first_planes(image.tensor())?;
    let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([to_u8(v[i]), to_u8(v[h * w + i]), to_u8(v[2 * h * w + i])])
    });
    buf.save(path).map_err(decode_err(path))
}

/// Writes the first depth map of a batch as a 16-bit grey PNG.
pub fn save_depth16(depth: &DepthMap, path: &Path) -> Result<()> {
    let (_, h, w, v) = first_planes(depth.tensor())?;
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let d = v[y as usize * w + x as usize].clamp(0.0, 1.0);
        Luma([(d * 65535.0).round() as u16])
    });
    buf.save(path).map_err(decode_err(path))
}

/// Writes a single-channel map as an 8-bit grey PNG.
pub fn save_gray(map: &Tensor, path: &Path) -> Result<()> {
    let (_, h, w, v) = first_planes(map)?;
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(v[y as usize * w + x as usize])]));
    buf.save(path).map_err(decode_err(path))
}

/// Writes the channel-mean of a map through a blue-to-yellow tint so low
/// values (strong degradation) read as blue.
pub fn save_false_color(map: &Tensor, path: &Path) -> Result<()> {
    let mean = map.mean_keepdim(1)?;
    let (_, h, w, v) = first_planes(&mean)?;
    let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let t = v[y as usize * w + x as usize].clamp(0.0, 1.0);
        image::Rgb([to_u8(t), to_u8(0.85 * t), to_u8(1.0 - t)])
    });
    buf.save(path).map_err(decode_err(path))
}

/// Low-frequency random field rescaled to `[lo, hi]`.
fn smooth_field(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> Vec<f32> {
    let terms: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let (fx, fy) = loop {
                let f = (rng.random_range(0..=2) as f64, rng.random_range(0..=2) as f64);
                if f != (0.0, 0.0) {
                    break f;
                }
            };
            (fx, fy, rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.3..1.0))
        })
        .collect();
    let mut v = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (u, s) = (x as f64 / w as f64, y as f64 / h as f64);
            let val: f64 = terms
                .iter()
                .map(|(fx, fy, ph, a)| a * (std::f64::consts::TAU * (fx * u + fy * s) + ph).cos())
                .sum();
            v.push(val);
        }
    }
    let (mn, mx) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = mx - mn;
    v.into_iter()
        .map(|x| {
            let n = if span > 0.0 { (x - mn) / span } else { 0.5 };
            (lo + n * (hi - lo)) as f32
        })
        .collect()
}

/// Generates `n` physically consistent synthetic samples at `size x size`.
///
/// Clean scenes and depth maps are smooth random fields, attenuation is drawn
/// per channel from `[0.3, 2.0]` and background light from `[0.6, 0.9]`.
/// Labels are stored in single precision and the degraded image is
/// synthesised in double precision from exactly those stored values.
pub fn make_fixture_set(n: usize, size: usize, seed: u64) -> Result<SyntheticDataset> {
    if n == 0 {
        return Err(Error::Config("fixture set needs at least one sample".into()));
    }
    if size == 0 || size % 32 != 0 {
        return Err(Error::Config(format!("fixture size must be a positive multiple of 32, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dev = Device::Cpu;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut clean = Vec::with_capacity(3 * size * size);
        for _ in 0..3 {
            clean.extend(smooth_field(&mut rng, size, size, 0.05, 0.95));
        }
        let depth = smooth_field(&mut rng, size, size, 0.0, 1.0);
        let beta: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..2.0) as f32 as f64);
        let light: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.6..0.9) as f32 as f64);

        let clean = Image::new(Tensor::from_vec(clean, (1, 3, size, size), &dev)?)?;
        let depth = DepthMap::new(Tensor::from_vec(depth, (1, 1, size, size), &dev)?)?;
        let beta32 = Attenuation::uniform(beta, 1, DType::F32)?;
        let light = BackgroundLight::new(light[0], light[1], light[2])?;

        let t = transmission_from_depth(&depth.to_dtype(DType::F64)?, &beta32.to_dtype(DType::F64)?)?;
        let degraded = synthesize_degraded(&clean.to_dtype(DType::F64)?, &t, &light)?.to_dtype(DType::F32)?;
        samples.push(SyntheticSample {
            id: format!("fixture_{i:04}"),
            degraded,
            depth,
            beta: beta32,
            clean: Some(clean),
            light: Some(light),
        });
    }
    SyntheticDataset::new(samples)
}

/// Number of prefetch threads: `PUGAN_NUM_WORKERS` if set, otherwise 1.
/// Zero disables prefetching.
pub fn prefetch_workers() -> usize {
    std::env::var(NUM_WORKERS_ENV).ok().and_then(|v| v.trim().parse().ok()).unwrap_or(1)
}

/// Builds batches on up to `workers` background threads and hands them to
/// `consume` strictly in plan order.
///
/// Worker `w` builds batches `w, w + workers, ...`; the consumer reads the
/// per-worker channels round-robin, so the order never depends on timing.
pub fn prefetch<T, B, C>(plan: &[Vec<usize>], workers: usize, build: B, mut consume: C) -> Result<()>
where
    T: Send,
    B: Fn(&[usize]) -> Result<T> + Sync,
    C: FnMut(usize, T) -> Result<()>,
{
    if workers == 0 || plan.len() < 2 {
        for (i, idx) in plan.iter().enumerate() {
            consume(i, build(idx)?)?;
        }
        return Ok(());
    }
    let workers = workers.min(plan.len());
    std::thread::scope(|scope| {
        let mut receivers = Vec::with_capacity(workers);
        for w in 0..workers {
            let (tx, rx) = mpsc::sync_channel::<Result<T>>(2);
            receivers.push(rx);
            let build = &build;
            scope.spawn(move || {
                for idx in plan.iter().skip(w).step_by(workers) {
                    if tx.send(build(idx)).is_err() {
                        break;
                    }
                }
            });
        }
        for i in 0..plan.len() {
            let batch = receivers[i % workers]
                .recv()
                .map_err(|_| Error::Data("prefetch worker stopped early".into()))??;
            consume(i, batch)?;
        }
        Ok(())
    })
}

/// Splits `0..n` into consecutive batches of `batch_size` (the last may be
/// short) after a seeded shuffle.
pub fn batch_plan(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}
