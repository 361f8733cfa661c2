//! Emery's sigma-martingale that is not a local martingale.
//!
//! `τ ~ Exp(1)`, `ξ = ±1` independent, `M_t = ξ 1_{[τ, ∞)}(t)` and
//! `X = ∫ (1/t) dM`. Then `√[X, X]_{τ∧a} = (1/τ) 1_{τ ≤ a}`, whose
//! expectation diverges; the `ε`-truncation is
//! `I(ε, a) = ∫_ε^a e^{−t}/t dt`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::io;
use crate::sigma::SigmaError;

pub const QUADRATURE_TOLERANCE: f64 = 1e-9;
/// Samples per deterministic random block; blocks are the unit of sharding.
pub const BLOCK: usize = 4096;

fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &impl Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let (lm, flm, left) = simpson(f, a, fa, m, fm);
    let (rm, frm, right) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
        + adaptive(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(&f, a, fa, b, fb);
    adaptive(&f, a, fa, b, fb, m, fm, whole, tol, 48)
}

/// `I(ε, a) = ∫_ε^a e^{−t}/t dt`, computed as `∫_{ln ε}^{ln a} exp(−e^u) du`.
pub fn emery_truncated_expectation(epsilon: f64, cap: f64) -> Result<f64, SigmaError> {
    if !(epsilon > 0.0 && epsilon <= cap && cap.is_finite()) {
        return Err(SigmaError::BadRange { epsilon, cap });
    }
    if epsilon == cap {
        return Ok(0.0);
    }
    // split at u = 0
    let lo = epsilon.ln();
    let hi = cap.ln();
    let f = |u: f64| (-u.exp()).exp();
    let value = if lo < 0.0 && hi > 0.0 {
        integrate(f, lo, 0.0, QUADRATURE_TOLERANCE / 2.0) + integrate(f, 0.0, hi, QUADRATURE_TOLERANCE / 2.0)
    } else {
        integrate(f, lo, hi, QUADRATURE_TOLERANCE)
    };
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmeryModel {
    pub epsilon: f64,
    pub cap: f64,
    pub samples: usize,
    pub seed: u64,
    /// Times at which the witness identity `∫ t dX = M` is checked on each path.
    pub grid: Vec<f64>,
}

impl EmeryModel {
    pub fn new(epsilon: f64, cap: f64, samples: usize, seed: u64) -> Self {
        let grid = (0..=16).map(|i| 2.0 * cap * f64::from(i) / 16.0).collect();
        Self { epsilon, cap, samples, seed, grid }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmeryReport {
    pub integral: f64,
    pub mean: f64,
    pub stderr: f64,
    /// `(mean − I) / stderr`.
    pub z_score: f64,
    pub sigma_residual: f64,
    pub samples: usize,
    pub hits: usize,
}

impl EmeryReport {
    pub fn to_json(&self) -> Value {
        json!({
            "I": io::float_value(self.integral),
            "mean": io::float_value(self.mean),
            "stderr": io::float_value(self.stderr),
            "z_score": io::float_value(self.z_score),
            "sigma_residual": io::float_value(self.sigma_residual),
            "samples": self.samples,
            "hits": self.hits,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Partial {
    sum: f64,
    sum_sq: f64,
    hits: usize,
    residual: f64,
}

fn run_block(model: &EmeryModel, block: usize) -> Partial {
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    rng.set_stream(block as u64);
    let start = block * BLOCK;
    let count = BLOCK.min(model.samples - start);
    let mut out = Partial::default();
    for _ in 0..count {
        let u: f64 = rng.gen();
        let tau = -(1.0 - u).ln();
        let xi = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        if tau <= 0.0 {
            continue;
        }
        let value = if tau > model.epsilon && tau <= model.cap { 1.0 / tau } else { 0.0 };
        if value > 0.0 {
            out.hits += 1;
        }
        out.sum += value;
        out.sum_sq += value * value;
        for &t in &model.grid {
            let jumped = tau <= t;
            let m = if jumped { xi } else { 0.0 };
            // X_t = ξ/τ after the jump; ∫ s dX_s picks up τ · ξ/τ
            let x_jump = if jumped { xi / tau } else { 0.0 };
            let recovered = tau * x_jump;
            out.residual = out.residual.max((recovered - m).abs());
        }
    }
    out
}

/// Monte Carlo estimate of the truncated mean. Samples are drawn in fixed
/// blocks, each from its own ChaCha stream, and merged in block order, so
/// the result does not depend on `shards`.
pub fn emery_simulate(model: &EmeryModel, shards: usize) -> Result<EmeryReport, SigmaError> {
    let integral = emery_truncated_expectation(model.epsilon, model.cap)?;
    let blocks = model.samples.div_ceil(BLOCK);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(shards.max(1))
        .build()
        .expect("thread pool");
    let partials: Vec<Partial> = pool.install(|| (0..blocks).into_par_iter().map(|b| run_block(model, b)).collect());
    let total = partials.iter().fold(Partial::default(), |acc, p| Partial {
        sum: acc.sum + p.sum,
        sum_sq: acc.sum_sq + p.sum_sq,
        hits: acc.hits + p.hits,
        residual: acc.residual.max(p.residual),
    });
    let n = model.samples.max(1) as f64;
    let mean = total.sum / n;
    let variance = if model.samples > 1 { (total.sum_sq - n * mean * mean) / (n - 1.0) } else { 0.0 };
    let stderr = (variance.max(0.0) / n).sqrt();
    let z_score = if stderr > 0.0 { (mean - integral) / stderr } else { f64::INFINITY };
    Ok(EmeryReport { integral, mean, stderr, z_score, sigma_residual: total.residual, samples: model.samples, hits: total.hits })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceProbe {
    pub bound: f64,
    pub cap: f64,
    /// Some `ε` with `I(ε, a) > bound`, if one exists above the smallest normal float.
    pub epsilon: Option<f64>,
    pub integral: Option<f64>,
}

impl DivergenceProbe {
    pub fn to_json(&self) -> Value {
        json!({
            "bound": io::float_value(self.bound),
            "cap": io::float_value(self.cap),
            "epsilon": self.epsilon.map(io::float_value),
            "I": self.integral.map(io::float_value),
            "exceeds": self.epsilon.is_some(),
        })
    }
}

/// Finds, by bisection in `ln ε`, an `ε` just below the crossing point of
/// `I(·, a) = bound`.
pub fn emery_divergence(bound: f64, cap: f64) -> Result<DivergenceProbe, SigmaError> {
    let smallest = f64::MIN_POSITIVE;
    let at = |u: f64| emery_truncated_expectation(u.exp().min(cap), cap);
    let mut lo = smallest.ln();
    let mut hi = cap.ln();
    if at(lo)? <= bound {
        return Ok(DivergenceProbe { bound, cap, epsilon: None, integral: None });
    }
    if at(hi)? > bound {
        return Ok(DivergenceProbe { bound, cap, epsilon: Some(cap), integral: Some(0.0) });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid)? > bound {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let epsilon = lo.exp();
    let integral = emery_truncated_expectation(epsilon, cap)?;
    Ok(DivergenceProbe { bound, cap, epsilon: Some(epsilon), integral: Some(integral) })
}
