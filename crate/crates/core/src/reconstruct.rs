//! Reconstruction of a stopped martingale from bounded approximants.
//!
//! Given `U^n = Σ_j ∫ f^{n,j} dM^j` with `E_P[√[U^n − Z, U^n − Z]_τ] ≤ 4^{−n}`,
//! the pipeline changes to the measure `dQ/dP ∝ e^{−η}`, rotates the assets
//! into orthogonal martingales `N^k`, takes the cell-wise limits `g^k` of the
//! rotated integrands and normalizes them into `Z − Z_0 = ∫ h dX`.
//!
//! The float track follows the construction; an exact rational track solves
//! the same representation directly and replays it node by node.

use num_traits::{One, Zero};
use serde_json::{json, Value};

use crate::diagonalization::{self, Diagonalization};
use crate::io;
use crate::rational::{self, Rational};
use crate::representation::{self, exp_measure, FloatMeasure, RepresentationError};
use crate::tree::{
    self, quad_covar, stoch_integral, stop_integrand, stop_process, sum_integrals, AdaptedProcess, MeasureVector,
    PredictableProcess, ScenarioTree, StoppingTime,
};

pub const STABLE_RUN: usize = 3;

#[derive(Debug, Clone)]
pub struct ReconstructOptions {
    /// Absolute tolerance for stabilization and the float residual.
    pub tolerance: f64,
    /// Relative slack on the `4^{−m} α` pair bound.
    pub pair_slack: f64,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self { tolerance: 1e-9, pair_slack: 1e-12 }
    }
}

/// `E_Q[[U^n − U^m, U^n − U^m]_τ] ≤ 4^{−m} α` for one stored pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCheck {
    pub m: usize,
    pub n: usize,
    pub lhs: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactTrack {
    pub outer: PredictableProcess,
    pub weights: Vec<PredictableProcess>,
    pub fund: AdaptedProcess,
    pub replay_exact: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineTrace {
    /// `E_P[√[U^n − Z, U^n − Z]_τ]` per approximant.
    pub schedule: Vec<f64>,
    pub zeta: Vec<f64>,
    pub eta: Vec<f64>,
    pub alpha: f64,
    pub q: FloatMeasure,
    pub diagonalization: Diagonalization,
    pub orthogonal: Vec<AdaptedProcess<f64>>,
    /// `g^{n,k}`, indexed `[n][k]`.
    pub rotated: Vec<Vec<PredictableProcess<f64>>>,
    pub limits: Vec<PredictableProcess<f64>>,
    pub normalizer: PredictableProcess<f64>,
    pub directions: Vec<PredictableProcess<f64>>,
    pub x: AdaptedProcess<f64>,
    pub y: AdaptedProcess<f64>,
    pub pairs: Vec<PairCheck>,
    /// `max_ℓ [Y − Z, Y − Z]_τ(ℓ)` on the float track.
    pub float_residual: f64,
    pub exact: ExactTrack,
    /// Largest gap between the increments of the float limit and the exact
    /// one-stage integrands, over all steps.
    pub cross_track_gap: f64,
}

impl PipelineTrace {
    pub fn pairs_hold(&self) -> bool {
        self.pairs.iter().all(|p| p.holds)
    }

    pub fn to_json(&self, tree: &ScenarioTree) -> Value {
        let floats = |v: &[f64]| v.iter().map(|&x| io::float_value(x)).collect::<Vec<_>>();
        json!({
            "schedule": floats(&self.schedule),
            "zeta": floats(&self.zeta),
            "eta": floats(&self.eta),
            "alpha": io::float_value(self.alpha),
            "q": floats(&self.q.mass),
            "q_rational": self.q.rational.leaf_mass.iter().map(io::rational_value).collect::<Vec<_>>(),
            "diagonalization_max_residual": io::float_value(self.diagonalization.max_residual()),
            "limits": self.limits.iter().map(|g| io::predictable_f64_json(tree, g)).collect::<Vec<_>>(),
            "h": io::predictable_f64_json(tree, &self.normalizer),
            "phi": self.directions.iter().map(|g| io::predictable_f64_json(tree, g)).collect::<Vec<_>>(),
            "x": io::adapted_f64_json(tree, &self.x),
            "y": io::adapted_f64_json(tree, &self.y),
            "pairs": {
                "checked": self.pairs.len(),
                "all_hold": self.pairs_hold(),
                "worst_ratio": io::float_value(
                    self.pairs.iter().filter(|p| p.bound > 0.0).map(|p| p.lhs / p.bound).fold(0.0, f64::max)
                ),
            },
            "float_residual": io::float_value(self.float_residual),
            "cross_track_gap": io::float_value(self.cross_track_gap),
            "exact": {
                "replay_exact": self.exact.replay_exact,
                "h": io::predictable_json(tree, &self.exact.outer),
                "phi": self.exact.weights.iter().map(|g| io::predictable_json(tree, g)).collect::<Vec<_>>(),
                "x": io::adapted_json(tree, &self.exact.fund),
            },
        })
    }
}

fn root_qv_per_leaf(tree: &ScenarioTree, x: &AdaptedProcess) -> Vec<f64> {
    let qv = quad_covar(tree, x, x);
    tree.leaves().iter().map(|&l| rational::to_f64(&qv.values[l]).sqrt()).collect()
}

fn node_mass_f64(tree: &ScenarioTree, leaf_mass: &[f64]) -> Vec<f64> {
    let mut mass = vec![0.0; tree.len()];
    for (&l, &m) in tree.leaves().iter().zip(leaf_mass) {
        mass[l] = m;
    }
    for u in (1..tree.len()).rev() {
        let p = tree.parent(u).expect("non-root");
        mass[p] += mass[u];
    }
    mass
}

/// Runs the reconstruction. `approximants[n][j]` is `f^{n+1, j}`.
pub fn reconstruct(
    tree: &ScenarioTree,
    p: &MeasureVector,
    assets: &[AdaptedProcess],
    z: &AdaptedProcess,
    approximants: &[Vec<PredictableProcess>],
    tau: &StoppingTime,
    options: &ReconstructOptions,
) -> Result<PipelineTrace, RepresentationError> {
    tree.check_adapted(z)?;
    p.validate(tree)?;
    let d = assets.len();
    let stopped_z = stop_process(tree, z, tau);
    if let Some(u) = (0..tree.len()).find(|&u| stopped_z.values[u] != z.values[u]) {
        return Err(RepresentationError::TargetNotStopped { node: tree.id(u).to_string() });
    }
    if approximants.len() < STABLE_RUN {
        return Err(RepresentationError::Input(format!(
            "need at least {STABLE_RUN} approximants, got {}",
            approximants.len()
        )));
    }
    if let Some(bad) = approximants.iter().position(|f| f.len() != d) {
        return Err(RepresentationError::Input(format!("approximant {} has the wrong number of integrands", bad + 1)));
    }
    let integrands: Vec<Vec<PredictableProcess>> = approximants
        .iter()
        .map(|fs| fs.iter().map(|f| stop_integrand(tree, f, tau)).collect())
        .collect();
    let u_n: Vec<AdaptedProcess> = integrands.iter().map(|fs| sum_integrals(tree, fs, assets)).collect();

    let mut schedule = Vec::with_capacity(u_n.len());
    let mut zeta = vec![0.0; tree.leaf_count()];
    for (i, un) in u_n.iter().enumerate() {
        let n = i + 1;
        let diff = tree::sub(un, z);
        let per_leaf = root_qv_per_leaf(tree, &diff);
        let value: f64 = per_leaf.iter().zip(&p.leaf_mass).map(|(r, m)| r * rational::to_f64(m)).sum();
        let bound = 4f64.powi(-(n as i32));
        if value > bound {
            return Err(RepresentationError::ScheduleViolation { n, value, bound });
        }
        schedule.push(value);
        let weight = 2f64.powi(n as i32);
        for (acc, r) in zeta.iter_mut().zip(per_leaf) {
            *acc += weight * r;
        }
    }
    let mut eta = zeta.clone();
    for (e, r) in eta.iter_mut().zip(root_qv_per_leaf(tree, z)) {
        *e += r;
    }
    for m in assets {
        for (e, r) in eta.iter_mut().zip(root_qv_per_leaf(tree, &stop_process(tree, m, tau))) {
            *e += r;
        }
    }
    let q = exp_measure(&eta, p);
    let alpha: f64 = eta.iter().zip(&q.mass).map(|(e, m)| m * e * e).sum();

    let diag = diagonalization::diagonalize(tree, assets, tau, &q.rational)?;
    let orthogonal = diagonalization::orthogonalize(tree, assets, &diag);
    let rotated: Vec<Vec<PredictableProcess<f64>>> = integrands
        .iter()
        .map(|fs| {
            let ff: Vec<PredictableProcess<f64>> = fs.iter().map(PredictableProcess::to_f64).collect();
            diagonalization::rotate_integrands(tree, &ff, &diag)
        })
        .collect();

    let q_node = node_mass_f64(tree, &q.mass);
    let mut pairs = Vec::new();
    for m in 0..u_n.len() {
        for n in m + 1..u_n.len() {
            let diff = tree::sub(&u_n[n], &u_n[m]);
            let qv = quad_covar(tree, &diff, &diff);
            let lhs: f64 = tree
                .leaves()
                .iter()
                .zip(&q.mass)
                .map(|(&l, w)| w * rational::to_f64(&qv.values[l]))
                .sum();
            let bound = 4f64.powi(-((m + 1) as i32)) * alpha;
            pairs.push(PairCheck { m: m + 1, n: n + 1, lhs, bound, holds: lhs <= bound * (1.0 + options.pair_slack) });
        }
    }

    // a cell carries Θ-mass for component k iff E_Q of the squared N^k step is positive
    let active = tau.active_steps(tree);
    let mut limits = vec![PredictableProcess::new(vec![0.0; tree.len()]); d];
    for u in tree.non_leaves() {
        if !active[u] || q_node[u] == 0.0 {
            continue;
        }
        for (k, limit) in limits.iter_mut().enumerate() {
            let spread: f64 = tree
                .children(u)
                .iter()
                .map(|&c| {
                    let step = orthogonal[k].values[c] - orthogonal[k].values[u];
                    q_node[c] * step * step
                })
                .sum();
            if spread <= options.tolerance * options.tolerance {
                continue;
            }
            let seq: Vec<f64> = rotated.iter().map(|g| g[k].values[u]).collect();
            let last = seq[seq.len() - 1];
            let scale = last.abs().max(1.0);
            let stable = seq[seq.len() - STABLE_RUN..].iter().all(|v| (v - last).abs() <= options.tolerance * scale);
            if !stable {
                return Err(RepresentationError::NonConvergent { node: tree.id(u).to_string(), component: k + 1 });
            }
            limit.values[u] = last;
        }
    }
    let normalizer = PredictableProcess::from_fn(tree, |u| 1.0 + limits.iter().map(|g| g.values[u].abs()).sum::<f64>());
    let directions: Vec<PredictableProcess<f64>> = limits
        .iter()
        .map(|g| PredictableProcess::from_fn(tree, |u| g.values[u] / normalizer.values[u]))
        .collect();
    let x = sum_integrals(tree, &directions, &orthogonal);
    let y = stoch_integral(tree, &normalizer, &x);

    let zf = z.to_f64();
    let mut float_residual = 0.0f64;
    let mut acc = vec![0.0f64; tree.len()];
    for u in 1..tree.len() {
        let par = tree.parent(u).expect("non-root");
        let step = (y.values[u] - y.values[par]) - (zf.values[u] - zf.values[par]);
        acc[u] = acc[par] + step * step;
        if tree.is_leaf(u) {
            float_residual = float_residual.max(acc[u]);
        }
    }
    if float_residual > options.tolerance {
        return Err(RepresentationError::ResidualTooLarge { residual: float_residual, tolerance: options.tolerance });
    }

    let direct = representation::represent_one_stage(tree, z, assets, p)?;
    let fund = representation::fundify(tree, &direct, assets);
    let gains = stoch_integral(tree, &fund.scale, &fund.fund);
    let z0 = &z.values[tree.root()];
    let replay_exact = (0..tree.len()).all(|u| &z.values[u] - z0 == gains.values[u]);
    if !replay_exact {
        return Err(RepresentationError::ResidualTooLarge { residual: f64::INFINITY, tolerance: 0.0 });
    }
    let float_in_assets = diagonalization::unrotate_integrands(tree, &limits, &diag);
    let mut cross_track_gap = 0.0f64;
    for u in tree.non_leaves().filter(|&u| active[u]) {
        for &c in tree.children(u) {
            let mut gap = 0.0;
            for j in 0..d {
                let dm = rational::to_f64(&(&assets[j].values[c] - &assets[j].values[u]));
                gap += (float_in_assets[j].values[u] - rational::to_f64(&direct[j].values[u])) * dm;
            }
            cross_track_gap = cross_track_gap.max(gap.abs());
        }
    }

    Ok(PipelineTrace {
        schedule,
        zeta,
        eta,
        alpha,
        q,
        diagonalization: diag,
        orthogonal,
        rotated,
        limits,
        normalizer,
        directions,
        x,
        y,
        pairs,
        float_residual,
        exact: ExactTrack { outer: fund.scale, weights: fund.weights, fund: fund.fund, replay_exact },
        cross_track_gap,
    })
}

/// Approximants `f^n = g + c 4^{−n} w` with `c` chosen so that the
/// `4^{−n}` schedule holds under `P`.
pub fn geometric_approximants(
    tree: &ScenarioTree,
    p: &MeasureVector,
    assets: &[AdaptedProcess],
    exact: &[PredictableProcess],
    perturbation: &[PredictableProcess],
    tau: &StoppingTime,
    count: usize,
) -> Vec<Vec<PredictableProcess>> {
    let stopped: Vec<PredictableProcess> = perturbation.iter().map(|w| stop_integrand(tree, w, tau)).collect();
    let w = sum_integrals(tree, &stopped, assets);
    let size = representation::expected_root_qv(tree, p, &w);
    let c = Rational::one() / rational::int((2.0 * size).ceil() as i64 + 1);
    (1..=count as i32)
        .map(|n| {
            let shrink = &c * rational::pow4(-n);
            exact
                .iter()
                .zip(perturbation)
                .map(|(g, w)| {
                    PredictableProcess::from_fn(tree, |u| {
                        if w.values[u].is_zero() {
                            g.values[u].clone()
                        } else {
                            &g.values[u] + &shrink * &w.values[u]
                        }
                    })
                })
                .collect()
        })
        .collect()
}
