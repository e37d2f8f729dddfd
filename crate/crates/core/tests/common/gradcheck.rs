//! Central finite differences against autodiff on sampled scalar entries.
//!
//! Each sampled entry is perturbed in place by `±h`, `±h/2` and `±h/4`. The
//! three central differences are combined by two rounds of Richardson
//! extrapolation, leaving an `O(h^6)` truncation error, so `h` can be large
//! enough for roundoff in the loss to stay negligible. The two first-round
//! estimates agree to `O(h^4)` on smooth stretches of the loss; when they do
//! not, a kink (ReLU, max-pool, hard threshold, clamp) lies within `±h` and the
//! entry is skipped in favour of another.

use candle_core::{DType, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale: in f64
/// the finite-difference estimate itself is only good to about 1e-10.
pub const GRAD_FLOOR: f64 = 1e-4;
const KINK_REL: f64 = 1e-6;
const KINK_ABS: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub checked: usize,
    pub kinks: usize,
    pub worst_rel: f64,
    pub worst_name: String,
}

fn entry(var: &Var, i: usize) -> f64 {
    var.as_tensor().flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap()[i]
}

fn set_entry(var: &Var, i: usize, value: f64) {
    let t = var.as_tensor();
    let mut data = t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap();
    data[i] = value;
    let next = Tensor::from_vec(data, t.dims(), t.device()).unwrap().to_dtype(t.dtype()).unwrap();
    var.set(&next).unwrap();
}

/// Compares `d loss / d entry` for `want` randomly drawn entries of `vars`.
pub fn check(vars: &[(String, Var)], want: usize, seed: u64, loss: &dyn Fn() -> Tensor) -> GradReport {
    let grads = loss().backward().unwrap();
    let sizes: Vec<usize> = vars.iter().map(|(_, v)| v.as_tensor().elem_count()).collect();
    let total: usize = sizes.iter().sum();
    assert!(total >= want, "only {total} entries available, {want} requested");

    let eval = || loss().to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::BTreeSet::new();
    let mut report = GradReport { checked: 0, kinks: 0, worst_rel: 0.0, worst_name: String::new() };
    while report.checked < want && seen.len() < total {
        let mut flat = rng.random_range(0..total);
        if !seen.insert(flat) {
            continue;
        }
        let mut k = 0;
        while flat >= sizes[k] {
            flat -= sizes[k];
            k += 1;
        }
        let (name, var) = &vars[k];
        let analytic = grads
            .get(var.as_tensor())
            .map(|g| g.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap()[flat])
            .unwrap_or(0.0);
        let x0 = entry(var, flat);
        let mut central = |h: f64| {
            set_entry(var, flat, x0 + h);
            let up = eval();
            set_entry(var, flat, x0 - h);
            let down = eval();
            (up - down) / (2.0 * h)
        };
        let (d1, d2, d3) = (central(STEP), central(STEP / 2.0), central(STEP / 4.0));
        set_entry(var, flat, x0);

        let (r1, r2) = ((4.0 * d2 - d1) / 3.0, (4.0 * d3 - d2) / 3.0);
        if (r1 - r2).abs() > KINK_REL * r1.abs().max(r2.abs()) + KINK_ABS {
            report.kinks += 1;
            continue;
        }
        let numeric = (16.0 * r2 - r1) / 15.0;
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
        if rel > report.worst_rel {
            report.worst_rel = rel;
            report.worst_name = format!("{name}[{flat}] autodiff {analytic:e} numeric {numeric:e}");
        }
        report.checked += 1;
    }
    report
}
