//! Acceptance suite: criteria 1 to 10, one PASS/FAIL line each.
//!
//! Run with `cargo test --release -p pugan --test acceptance`
//! for the report; `ACCEPTANCE_ONLY=1,4` restricts it to some criteria.
//! Criterion 11 (full-benchmark quality numbers) is out of scope for a
//! desk-scale build and is listed without being run.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::gradcheck;
use common::metric_oracle as oracle;
use common::uniform;
use pugan::data::make_fixture_set;
use pugan::discriminators::{ContentDiscriminator, DiscriminatorConfig, PatchScores, StyleDiscriminator};
use pugan::losses::{discriminator_loss, global_similarity_loss, total_generator_loss, LossWeights, PerceptualExtractor};
use pugan::metrics::{mse, psnr, uciqe, uciqe_components, uiqm, uiqm_components, MetricsConfig, PSNR_CAP_DB};
use pugan::nn::{scalar, Mode};
use pugan::par_subnet::{par_loss, ParConfig, ParSubnet, ATTENUATION_PREFIX};
use pugan::physics::{
    depth_from_transmission, invert_color_enhanced, synthesize_degraded, transmission_from_depth, Attenuation,
    BackgroundLight, DepthMap, Image, TransmissionMap,
};
use pugan::trainer::{
    par_checkpoint, pretrain_par, train_pugan, Checkpoint, ModelConfig, ParPhase, PuganModels, PuganTrainer, RunOptions,
    TrainConfig, TrainObserver, PAR_GROUP,
};
use pugan::tsie::{dq_apply, dq_transmission_mask, threshold_mask, DqConfig, Generator, Stream, TsieConfig};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, budget: Duration) -> std::result::Result<(), String> {
    ensure(elapsed < budget, format!("took {elapsed:.1?}, budget {budget:?}"))
}

fn cpu() -> Device {
    Device::Cpu
}

fn values(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap()
}

fn random_image(rng: &mut ChaCha8Rng, b: usize, h: usize, w: usize, dtype: DType) -> Image {
    let v: Vec<f64> = (0..b * 3 * h * w).map(|_| rng.random_range(0.05..0.95)).collect();
    Image::new(Tensor::from_vec(v, (b, 3, h, w), &cpu()).unwrap().to_dtype(dtype).unwrap()).unwrap()
}

fn physics_round_trip() -> Outcome {
    let start = Instant::now();
    let n = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut j = Vec::with_capacity(3 * n);
    let mut d = Vec::with_capacity(n);
    let mut beta = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let depth: f64 = rng.random_range(0.05..0.99);
        d.push(depth);
        for _ in 0..3 {
            j.push(rng.random_range(0.0..1.0));
            // beta * d spans [-ln 0.9, -ln 0.2], so every t lies in [0.2, 0.9]
            beta.push(rng.random_range(-(0.9f64.ln())..-(0.2f64.ln())) / depth);
        }
    }
    let j = Image::new(Tensor::from_vec(j, (n, 3, 1, 1), &cpu()).unwrap()).unwrap();
    let d = DepthMap::new(Tensor::from_vec(d, (n, 1, 1, 1), &cpu()).unwrap()).unwrap();
    let beta = Attenuation::new(Tensor::from_vec(beta, (n, 3), &cpu()).unwrap()).unwrap();
    let t = transmission_from_depth(&d, &beta).unwrap();
    let tv = values(t.tensor());
    ensure(tv.iter().all(|v| (0.2 - 1e-12..=0.9 + 1e-12).contains(v)), "transmission left [0.2, 0.9]")?;

    let black = BackgroundLight::new(0.0, 0.0, 0.0).unwrap();
    let restored = invert_color_enhanced(&synthesize_degraded(&j, &t, &black).unwrap(), &t).unwrap();
    let err_j = values(restored.tensor()).iter().zip(values(j.tensor())).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let back = depth_from_transmission(&t, &beta).unwrap();
    let err_d = values(back.tensor()).iter().zip(values(d.tensor())).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    ensure(err_j < 1e-6, format!("colour inversion error {err_j:e}"))?;
    ensure(err_d < 1e-5, format!("depth round-trip error {err_d:e}"))?;
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("max |J'-J| {err_j:.1e}, max |d'-d| {err_d:.1e}, {elapsed:.0?}"))
}

fn analytic_losses() -> Outcome {
    let t = |v: Vec<f64>, shape: &[usize]| Tensor::from_vec(v, shape, &cpu()).unwrap();
    let d_gt = DepthMap::new(t(vec![0.5], &[1, 1, 1, 1])).unwrap();
    let d1 = DepthMap::new(t(vec![0.3], &[1, 1, 1, 1])).unwrap();
    let d2 = DepthMap::new(t(vec![0.7], &[1, 1, 1, 1])).unwrap();
    let beta = Attenuation::new(t(vec![1.0, 1.2, 0.6], &[1, 3])).unwrap();
    let beta_hat = Attenuation::new(t(vec![1.3, 0.9, 0.9], &[1, 3])).unwrap();
    let par = scalar(&par_loss(&d1, &d2, &d_gt, &beta_hat, &beta).unwrap()).unwrap();

    let half = PatchScores::from_probabilities(Tensor::full(0.5f64, (2, 1, 4, 4), &cpu()).unwrap()).unwrap();
    let d_loss = scalar(&discriminator_loss(&half, &half).unwrap()).unwrap();

    let y = Image::new(uniform(35, 0.0, 0.9, (2, 3, 8, 8))).unwrap();
    let e = Image::new((y.tensor() + 0.1).unwrap()).unwrap();
    let l1 = scalar(&global_similarity_loss(&e, &y).unwrap()).unwrap();

    ensure((par - 0.7).abs() < 1e-9, format!("par_loss {par}"))?;
    ensure((d_loss - 2.0 * 2f64.ln()).abs() < 1e-9, format!("d_loss {d_loss}"))?;
    ensure((l1 - 0.1).abs() < 1e-9, format!("L1 {l1}"))?;
    Ok(format!("par_loss {par:.12}, d_loss {d_loss:.12}, L1 {l1:.12}"))
}

fn shape_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_image(&mut rng, 2, 256, 256, DType::F32);
    let models = PuganModels::new(&ModelConfig::default(), DqConfig::default(), DType::F32, 0).unwrap();
    // running statistics are still at their initial values, so normalise with batch statistics
    let (e, par) = models.enhance_with(&x, Mode::BatchStats).unwrap();
    ensure(e.tensor().dims() == [2, 3, 256, 256], format!("generator output {:?}", e.tensor().dims()))?;
    let ev = values(e.tensor());
    let (lo, hi) = ev.iter().fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    ensure(lo > 0.0 && hi < 1.0, format!("generator output range [{lo:e}, {hi}]"))?;

    let s1 = models.d1.score(&e, Mode::BatchStats).unwrap();
    let s2 = models.d2.score(&e, &par.d1, Mode::BatchStats).unwrap();
    for (name, s) in [("D1", &s1), ("D2", &s2)] {
        ensure(s.map().dims() == [2, 1, 16, 16], format!("{name} scores {:?}", s.map().dims()))?;
    }

    let pyramid = models.generator.encode(&x, Stream::Top, Mode::BatchStats).unwrap();
    let widths = TsieConfig::default().widths;
    for (k, level) in pyramid.levels().iter().enumerate() {
        let side = 256 >> (k + 1);
        ensure(
            level.dims() == [2, widths[k], side, side],
            format!("encoder level {} is {:?}", k + 1, level.dims()),
        )?;
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!(
        "E in [{lo:.2e}, 1 - {:.2e}], scores 16x16, pyramid 128..8 with widths {widths:?}, {elapsed:.1?}",
        1.0 - hi
    ))
}

fn prefixed_vars(store: &pugan::nn::ParameterStore, prefix: &str, label: &str) -> Vec<(String, Var)> {
    store
        .trainable_names()
        .into_iter()
        .filter(|n| n.starts_with(prefix))
        .map(|n| (format!("{label}.{n}"), store.get(&n).unwrap().clone()))
        .collect()
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let per_module = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    let mut record = |module: &str, r: gradcheck::GradReport| {
        lines.push(format!("{module}: {} checked, {} kinks, worst {:.1e}", r.checked, r.kinks, r.worst_rel));
        if r.checked < per_module || r.worst_rel >= 1e-5 {
            failures.push(format!("{module}: {} checked, worst {:.2e} at {}", r.checked, r.worst_rel, r.worst_name));
        }
    };

    // generator objective at 16x16, the smallest size both discriminators accept
    let y = random_image(&mut rng, 2, 16, 16, DType::F64);
    let e = Var::from_tensor(random_image(&mut rng, 2, 16, 16, DType::F64).tensor()).unwrap();
    let depth = DepthMap::new(uniform(30, 0.1, 0.9, (2, 1, 16, 16))).unwrap();
    let cfg = DiscriminatorConfig { widths: [8, 8, 8, 1], ..DiscriminatorConfig::default() };
    let d1 = StyleDiscriminator::new(cfg, DType::F64, 11).unwrap();
    let d2 = ContentDiscriminator::new(cfg, DType::F64, 12).unwrap();
    let extractor = PerceptualExtractor::new(DType::F64, 13).unwrap();
    let weights = LossWeights::default();
    let loss = || {
        let img = Image::new(e.as_tensor().clone()).unwrap();
        let s1 = d1.score(&img, Mode::BatchStats).unwrap();
        let s2 = d2.score(&img, &depth, Mode::BatchStats).unwrap();
        total_generator_loss(&img, &y, &s1, &s2, &weights, &extractor).unwrap().total
    };
    record("E", gradcheck::check(&[("E".into(), e.clone())], per_module, 40, &loss));
    record("D1", gradcheck::check(&prefixed_vars(d1.store(), "", "d1"), per_module, 41, &loss));
    record("D2", gradcheck::check(&prefixed_vars(d2.store(), "", "d2"), per_module, 42, &loss));

    // parameter-estimation objective at 8x8, per estimator
    let par = ParSubnet::new(ParConfig::default(), DType::F64, 21).unwrap();
    let x = random_image(&mut rng, 2, 8, 8, DType::F64);
    let d_gt = DepthMap::new(uniform(31, 0.1, 0.9, (2, 1, 8, 8))).unwrap();
    let beta_gt = Attenuation::new(uniform(32, 0.3, 2.0, (2, 3))).unwrap();
    let loss = || {
        let out = par.forward(&x, Mode::BatchStats).unwrap();
        par_loss(&out.d1, &out.d2, &d_gt, &out.beta, &beta_gt).unwrap()
    };
    for (k, prefix) in ["attenuation.", "depth.", "transmission."].into_iter().enumerate() {
        let vars = prefixed_vars(par.store(), prefix, "par");
        record(&format!("par/{prefix}"), gradcheck::check(&vars, per_module, 50 + k as u64, &loss));
    }

    let elapsed = start.elapsed();
    if !failures.is_empty() {
        return Err(failures.join("; "));
    }
    within(elapsed, Duration::from_secs(120))?;
    Ok(format!("{} ({elapsed:.1?})", lines.join("; ")))
}

fn dq_semantics() -> Outcome {
    let alpha = 0.7;
    let mut got = Vec::new();
    for t in [1.0, 0.2, 0.4] {
        let map = TransmissionMap::new(Tensor::full(t, (1, 3, 32, 32), &cpu()).unwrap()).unwrap();
        let mask = values(&dq_transmission_mask(&map, 1, alpha).unwrap());
        let first = mask[0];
        ensure(mask.iter().all(|v| *v == first), format!("mask for t={t} is not uniform"))?;
        got.push(first);
    }
    ensure(got[0] == 0.0 && (got[1] - 0.8).abs() < 1e-12 && got[2] == 0.0, format!("transmission masks {got:?}"))?;

    let generator = Generator::new(TsieConfig::default(), DqConfig::default(), DType::F64, 5).unwrap();
    let e = uniform(33, 0.0, 1.0, (2, 32, 16, 16));
    let dif = generator.dq_unit(1).difference_mask(&e, &e, alpha, Mode::BatchStats).unwrap();
    let dif_max = values(&dif).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure(dif_max == 0.0, format!("difference mask of identical streams reaches {dif_max}"))?;

    let kept = dq_apply(&e, &e.zeros_like().unwrap()).unwrap();
    ensure(values(&kept) == values(&e), "dq_apply(e, 0) changed e")?;

    let f = Var::from_tensor(&uniform(34, 0.0, 1.0, (1, 4, 8, 8))).unwrap();
    let grads = threshold_mask(f.as_tensor(), alpha).unwrap().sum_all().unwrap().backward().unwrap();
    let g = values(grads.get(f.as_tensor()).unwrap());
    let fv = values(f.as_tensor());
    let masked = fv.iter().filter(|v| **v < alpha).count();
    let leaked = fv.iter().zip(&g).filter(|(v, g)| **v < alpha && **g != 0.0).count();
    ensure(masked > 0 && leaked == 0, format!("{leaked} of {masked} masked positions received gradient"))?;
    Ok(format!("masks {got:?}, difference 0, dq_apply identity, {masked} masked positions with zero gradient"))
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let paired = make_fixture_set(4, 64, 11).unwrap().to_paired().unwrap();
    let par = ParSubnet::new(ParConfig::default(), DType::F32, 3).unwrap();
    let par_ck = par_checkpoint(&par, &TrainConfig::par_defaults(), 0, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 4,
        image_size: 64,
        lr_decay_every: 1000,
        ..TrainConfig::pugan_defaults()
    };
    let (x, y) = paired.batch(&[0, 1, 2, 3]).unwrap();
    let before = PuganModels::new(&cfg.model, cfg.dq().unwrap(), DType::F32, cfg.seed).unwrap();
    par_ck.restore_store(PAR_GROUP, before.par.store()).unwrap();
    let psnr_start = psnr(&before.enhance_with(&x, Mode::BatchStats).unwrap().0, &y).unwrap();

    let run = train_pugan(&paired, &par_ck, &cfg, RunOptions::default()).unwrap();
    let psnr_end = psnr(&run.models.enhance_with(&x, Mode::BatchStats).unwrap().0, &y).unwrap();
    let psnr_eval = psnr(&run.models.enhance(&x).unwrap().0, &y).unwrap();
    let (l1_0, l1_n) = (run.log[0].l1, run.log.last().unwrap().l1);
    let elapsed = start.elapsed();
    let detail = format!(
        "{} steps, L1 {l1_0:.4} -> {l1_n:.4} ({:.0}%), PSNR {psnr_start:.2} -> {psnr_end:.2} dB (running stats {psnr_eval:.2}), {elapsed:.0?}",
        run.log.len(),
        100.0 * l1_n / l1_0
    );
    ensure(run.log.len() == 200, format!("{} steps", run.log.len()))?;
    ensure(l1_n <= 0.5 * l1_0, format!("L1 did not halve: {detail}"))?;
    ensure(psnr_end > psnr_start, format!("PSNR did not improve: {detail}"))?;
    within(elapsed, Duration::from_secs(600)).map_err(|e| format!("{e}: {detail}"))?;
    Ok(detail)
}

fn discriminator_learns() -> Outcome {
    let paired = make_fixture_set(4, 64, 12).unwrap().to_paired().unwrap();
    let cfg = TrainConfig { batch_size: 4, image_size: 64, ..TrainConfig::pugan_defaults() };
    let models = PuganModels::new(&cfg.model, cfg.dq().unwrap(), DType::F32, 7).unwrap();
    let (x, y) = paired.batch(&[0, 1, 2, 3]).unwrap();
    // the generator never updates, so its output is computed once
    let fake = models.enhance_with(&x, Mode::BatchStats).unwrap().0.detach();
    let gen_before = models.generator.store().snapshot().unwrap();
    let mut trainer = PuganTrainer::new(models, &cfg).unwrap();
    let mean = |t: &PuganTrainer, img: &Image| scalar(&t.models().d1.score(img, Mode::BatchStats).unwrap().mean().unwrap().mean_all().unwrap()).unwrap();
    let (real0, fake0) = (mean(&trainer, &y), mean(&trainer, &fake));
    for _ in 0..50 {
        trainer.style_step(&y, &fake).unwrap();
    }
    let (real1, fake1) = (mean(&trainer, &y), mean(&trainer, &fake));
    ensure(trainer.models().generator.store().snapshot().unwrap() == gen_before, "generator changed")?;
    let detail = format!("score(real) {real0:.3} -> {real1:.3}, score(fake) {fake0:.3} -> {fake1:.3}");
    ensure(real1 > fake1, detail.clone())?;
    Ok(detail)
}

struct FreezeWatch {
    after_phase1: Vec<(String, Vec<f32>)>,
    after_phase2: Vec<(String, Vec<f32>)>,
}

impl TrainObserver for FreezeWatch {
    fn on_par_phase_end(&mut self, phase: ParPhase, par: &ParSubnet) {
        let snap: Vec<(String, Vec<f32>)> = par
            .store()
            .snapshot()
            .unwrap()
            .into_iter()
            .filter(|(k, _)| k.starts_with(ATTENUATION_PREFIX))
            .map(|(k, (_, v))| (k, v))
            .collect();
        match phase {
            ParPhase::Attenuation => self.after_phase1 = snap,
            ParPhase::Depth => self.after_phase2 = snap,
        }
    }
}

fn par_pretraining() -> Outcome {
    let start = Instant::now();
    let data = make_fixture_set(20, 64, 8).unwrap();
    let cfg = TrainConfig { epochs: 60, batch_size: 4, lr: 1e-3, image_size: 64, ..TrainConfig::par_defaults() };
    let mut watch = FreezeWatch { after_phase1: Vec::new(), after_phase2: Vec::new() };
    let run = pretrain_par(&data, &cfg, RunOptions { observer: Some(&mut watch), ..Default::default() }).unwrap();
    let elapsed = start.elapsed();
    let (l0, ln) = (run.initial_loss.total, run.final_loss.total);
    let frozen = !watch.after_phase1.is_empty()
        && watch.after_phase1.len() == watch.after_phase2.len()
        && watch.after_phase1.iter().zip(&watch.after_phase2).all(|(a, b)| {
            a.0 == b.0 && a.1.iter().map(|v| v.to_bits()).eq(b.1.iter().map(|v| v.to_bits()))
        });
    let detail = format!(
        "par_loss {l0:.4} -> {ln:.4} ({:.0}%), {} attenuation tensors bitwise frozen: {frozen}, {elapsed:.0?}",
        100.0 * ln / l0,
        watch.after_phase1.len()
    );
    ensure(ln <= 0.5 * l0, format!("loss did not halve: {detail}"))?;
    ensure(frozen, format!("attenuation moved in phase 2: {detail}"))?;
    within(elapsed, Duration::from_secs(600)).map_err(|e| format!("{e}: {detail}"))?;
    Ok(detail)
}

fn metric_oracles() -> Outcome {
    let base = Image::constant(0.5, 1, 8, 8, DType::F64).unwrap();
    let off = Image::new((base.tensor() + 1.0 / 255.0).unwrap()).unwrap();
    let (m, p) = (mse(&off, &base).unwrap(), psnr(&off, &base).unwrap());
    ensure((m - 1.0).abs() < 1e-6, format!("MSE {m}"))?;
    ensure((p - 10.0 * (255f64 * 255.0).log10()).abs() < 1e-6, format!("PSNR {p}"))?;
    ensure(psnr(&base, &base).unwrap() == PSNR_CAP_DB, "identical images not capped")?;

    let cfg = MetricsConfig::default();
    for v in [0.0, 0.25, 0.5, 1.0] {
        let flat = Image::constant(v, 1, 16, 16, DType::F64).unwrap();
        ensure(uiqm(&flat, &cfg).unwrap() == 0.0, format!("UIQM of constant {v}"))?;
        ensure(uciqe(&flat).unwrap().abs() < 1e-6, format!("UCIQE of constant {v}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let v: Vec<f64> = (0..3 * 64).map(|_| rng.random()).collect();
        let img = Image::new(Tensor::from_slice(&v, (1, 3, 8, 8), &cpu()).unwrap()).unwrap();
        let u = uiqm_components(&img, &cfg).unwrap()[0];
        let diffs = [
            u.uicm - oracle::uicm(&v, 8, 8),
            u.uism - oracle::uism(&v, 8, 8, 8),
            u.uiconm - oracle::uiconm(&v, 8, 8, 8),
            uiqm(&img, &cfg).unwrap() - oracle::uiqm(&v, 8, 8, 8),
        ];
        let c = uciqe_components(&img).unwrap()[0];
        let (sd, con, sat) = oracle::uciqe(&v, 8, 8);
        let more = [c.chroma_std - sd, c.luminance_contrast - con, c.saturation_mean - sat];
        worst = diffs.iter().chain(&more).fold(worst, |w, d| w.max(d.abs()));
    }
    ensure(worst < 1e-6, format!("largest oracle difference {worst:e}"))?;
    Ok(format!("MSE {m:.9}, PSNR {p:.6} dB, constants score 0, oracle difference {worst:.1e}"))
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        par: ParConfig { attenuation_width: 4, attenuation_hidden: 8, depth_width: 4, transmission_width: 4 },
        tsie: TsieConfig { widths: [4, 4, 8, 8, 8] },
        discriminator: DiscriminatorConfig { widths: [4, 4, 4, 1], ..DiscriminatorConfig::default() },
    }
}

fn determinism() -> Outcome {
    let synthetic = make_fixture_set(4, 32, 10).unwrap();
    let paired = synthetic.to_paired().unwrap();
    let par_cfg = TrainConfig { epochs: 1, batch_size: 2, image_size: 32, model: tiny_model(), seed: 5, ..TrainConfig::par_defaults() };
    let gan_cfg = TrainConfig { epochs: 2, batch_size: 2, image_size: 32, model: tiny_model(), seed: 5, ..TrainConfig::pugan_defaults() };
    let run = || {
        let par = pretrain_par(&synthetic, &par_cfg, RunOptions::default()).unwrap();
        let gan = train_pugan(&paired, &par.checkpoint, &gan_cfg, RunOptions::default()).unwrap();
        (par.checkpoint.to_bytes().unwrap(), gan)
    };
    let (par_a, gan_a) = run();
    let (par_b, gan_b) = run();
    let bytes_a = gan_a.checkpoint.to_bytes().unwrap();
    ensure(par_a == par_b, "parameter-estimator checkpoints differ")?;
    ensure(bytes_a == gan_b.checkpoint.to_bytes().unwrap(), "full checkpoints differ")?;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    gan_a.checkpoint.save(&path).unwrap();
    let loaded = PuganModels::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    let (x, _) = paired.batch(&[0, 1, 2, 3]).unwrap();
    let before = values(gan_a.models.enhance(&x).unwrap().0.tensor());
    let after = values(loaded.enhance(&x).unwrap().0.tensor());
    ensure(
        before.iter().map(|v| v.to_bits()).eq(after.iter().map(|v| v.to_bits())),
        "reloaded model output differs",
    )?;
    Ok(format!("two runs give identical checkpoints ({} bytes); reload reproduces {} outputs bitwise", bytes_a.len(), after.len()))
}

/// Writes to the stderr handle directly, which the test harness does not
/// capture, so the report shows up even when every criterion passes.
fn report(line: String) {
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("physics round-trip", physics_round_trip),
        ("analytic loss values", analytic_losses),
        ("shape suite", shape_suite),
        ("gradient checks", gradient_checks),
        ("DQ semantics", dq_semantics),
        ("overfit convergence", overfit),
        ("discriminator learnability", discriminator_learns),
        ("par-subnet pretraining", par_pretraining),
        ("metric oracles", metric_oracles),
        ("determinism and persistence", determinism),
    ];
    // e.g. ACCEPTANCE_ONLY=1,2,4 runs a subset
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|n| n.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            report(format!("criterion {:>2} SKIP  {name}", i + 1));
            continue;
        }
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => report(format!("criterion {:>2} PASS  {name}: {detail}", i + 1)),
            Err(why) => {
                report(format!("criterion {:>2} FAIL  {name}: {why}", i + 1));
                failed.push(i + 1);
            }
        }
    }
    report("criterion 11 N/A   full-benchmark quality numbers need the real datasets and GPU-scale training".into());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
