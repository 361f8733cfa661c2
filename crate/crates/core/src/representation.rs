//! Martingale representation on scenario trees.
//!
//! A martingale `Z` is in the class `F` when `Z = Z_0 + ∫ f dY` for a fund
//! `Y = Σ_j ∫ g^j dM^j`. The operations here solve the one-step systems,
//! normalize integrands into bounded funds, glue stopped representations
//! along a ladder of stopping times, and extract the stopping ladders and
//! truncations used by the closedness argument.

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde_json::{json, Value};
use thiserror::Error;

use crate::io;
use crate::linalg::{self, RatMatrix};
use crate::rational::{self, Rational};
use crate::tree::{
    self, first_hitting_stop, martingale_of, quad_covar, stoch_integral, stop_process, sum_integrals, AdaptedProcess,
    MeasureVector, NodeId, PredictableProcess, ScenarioTree, StoppingTime, TreeError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RepresentationError {
    #[error("not representable: increments at node {node} leave the asset span")]
    NotRepresentable { node: String, residual: Vec<Rational> },
    #[error("bad stopping ladder: {0}")]
    BadLadder(String),
    #[error("piece {piece} does not reproduce the stopped target at node {node}")]
    MismatchedPiece { piece: usize, node: String },
    #[error("no subsequence: no candidate meets the 2^-j schedule for term {term}")]
    NoSubsequence { term: usize },
    #[error("approximant {n} violates the schedule: E[sqrt[U^n - Z, U^n - Z]] = {value:e} > 4^-n = {bound:e}")]
    ScheduleViolation { n: usize, value: f64, bound: f64 },
    #[error("target is not stopped at the given stopping time (node {node})")]
    TargetNotStopped { node: String },
    #[error("integrand sequence has not stabilized at node {node}, component {component}")]
    NonConvergent { node: String, component: usize },
    #[error("reconstruction residual {residual:e} exceeds tolerance {tolerance:e}")]
    ResidualTooLarge { residual: f64, tolerance: f64 },
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Diagonalization(#[from] crate::diagonalization::DiagError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Two-stage representation `Z = c + ∫ f dY`, `Y = Σ_j ∫ g^j dM^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationResult {
    pub initial_value: Rational,
    /// Bounded fund weights (`|g^j| ≤ 1`).
    pub fund_integrands: Vec<PredictableProcess>,
    pub fund: AdaptedProcess,
    pub outer_integrand: PredictableProcess,
    /// One-stage integrands `Z = c + Σ_j ∫ direct^j dM^j` before normalization.
    pub direct_integrands: Vec<PredictableProcess>,
    pub reconstructed: AdaptedProcess,
}

impl RepresentationResult {
    pub fn to_json(&self, tree: &ScenarioTree) -> Value {
        json!({
            "c": io::rational_value(&self.initial_value),
            "fund_integrands": self.fund_integrands.iter().map(|g| io::predictable_json(tree, g)).collect::<Vec<_>>(),
            "direct_integrands": self.direct_integrands.iter().map(|g| io::predictable_json(tree, g)).collect::<Vec<_>>(),
            "outer_integrand": io::predictable_json(tree, &self.outer_integrand),
            "fund": io::adapted_json(tree, &self.fund),
            "reconstructed": io::adapted_json(tree, &self.reconstructed),
        })
    }
}

fn increment_matrix(u: NodeId, kids: &[NodeId], assets: &[AdaptedProcess]) -> RatMatrix {
    kids.iter()
        .map(|&c| assets.iter().map(|m| &m.values[c] - &m.values[u]).collect())
        .collect()
}

/// Solves `Σ_j g^j(u) ΔM^j(c) = ΔZ(c)` over the Q-charged children of every
/// non-leaf node, taking the minimum-norm solution when it is not unique.
pub fn represent_one_stage(
    tree: &ScenarioTree,
    z: &AdaptedProcess,
    assets: &[AdaptedProcess],
    q: &MeasureVector,
) -> Result<Vec<PredictableProcess>, RepresentationError> {
    tree.check_adapted(z)?;
    for m in assets {
        tree.check_adapted(m)?;
    }
    let mass = q.node_mass(tree);
    let d = assets.len();
    let mut g = vec![PredictableProcess::constant(tree, Rational::zero()); d];
    for u in tree.non_leaves() {
        if mass[u].is_zero() {
            continue;
        }
        let kids: Vec<NodeId> = tree.children(u).iter().copied().filter(|&c| !mass[c].is_zero()).collect();
        let rhs: Vec<Rational> = kids.iter().map(|&c| &z.values[c] - &z.values[u]).collect();
        if rhs.iter().all(Zero::is_zero) {
            continue;
        }
        if d == 0 {
            return Err(RepresentationError::NotRepresentable { node: tree.id(u).to_string(), residual: rhs });
        }
        let a = increment_matrix(u, &kids, assets);
        let (x, residual) = linalg::min_norm_least_squares(&a, &rhs);
        if residual.iter().any(|r| !r.is_zero()) {
            return Err(RepresentationError::NotRepresentable { node: tree.id(u).to_string(), residual });
        }
        for (gj, xj) in g.iter_mut().zip(x) {
            gj.values[u] = xj;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fundified {
    /// `ξ = 1 + Σ_j |g^j|`.
    pub scale: PredictableProcess,
    /// `h^j = g^j / ξ`, bounded by one.
    pub weights: Vec<PredictableProcess>,
    /// `V = Σ_j ∫ h^j dM^j`.
    pub fund: AdaptedProcess,
}

/// Rewrites `Σ_j ∫ g^j dM^j` as `∫ ξ dV` with a bounded fund `V`.
pub fn fundify(tree: &ScenarioTree, g: &[PredictableProcess], assets: &[AdaptedProcess]) -> Fundified {
    let scale = PredictableProcess::from_fn(tree, |u| {
        Rational::one() + g.iter().map(|gj| gj.values[u].abs()).sum::<Rational>()
    });
    let weights: Vec<PredictableProcess> = g
        .iter()
        .map(|gj| PredictableProcess::from_fn(tree, |u| &gj.values[u] / &scale.values[u]))
        .collect();
    let fund = sum_integrals(tree, &weights, assets);
    Fundified { scale, weights, fund }
}

/// One piece of a glued representation: `X^k = Z_0 + ∫ f^k dY^k` with
/// `Y^k = Σ_j ∫ φ^{k,j} dM^j` and `|φ^{k,j}| ≤ c_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub outer: PredictableProcess,
    pub fund_weights: Vec<PredictableProcess>,
    pub bound: Rational,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Glued {
    /// `η^j = Σ_k φ^{k,j} / c_k` on `(σ_{k−1}, σ_k]`.
    pub fund_weights: Vec<PredictableProcess>,
    /// `f = Σ_k c_k f^k` on `(σ_{k−1}, σ_k]`, zero after `σ_K`.
    pub outer: PredictableProcess,
    pub fund: AdaptedProcess,
    pub reconstructed: AdaptedProcess,
}

/// Splices stopped representations of `Z` along `σ_1 ≤ … ≤ σ_K` (σ_0 ≡ 0).
pub fn glue_representations(
    tree: &ScenarioTree,
    z: &AdaptedProcess,
    assets: &[AdaptedProcess],
    pieces: &[Piece],
    ladder: &[StoppingTime],
) -> Result<Glued, RepresentationError> {
    if ladder.is_empty() || ladder.len() != pieces.len() {
        return Err(RepresentationError::BadLadder(format!(
            "{} stopping times for {} pieces",
            ladder.len(),
            pieces.len()
        )));
    }
    for w in ladder.windows(2) {
        if !w[0].le(&w[1], tree) {
            return Err(RepresentationError::BadLadder("stopping times are not monotone".into()));
        }
    }
    let z0 = &z.values[tree.root()];
    for (k, (piece, sigma)) in pieces.iter().zip(ladder).enumerate() {
        let label = k + 1;
        if !piece.bound.is_positive() || piece.fund_weights.len() != assets.len() {
            return Err(RepresentationError::MismatchedPiece { piece: label, node: tree.id(tree.root()).to_string() });
        }
        for u in tree.non_leaves() {
            if piece.fund_weights.iter().any(|phi| phi.values[u].abs() > piece.bound) {
                return Err(RepresentationError::MismatchedPiece { piece: label, node: tree.id(u).to_string() });
            }
        }
        let fund = sum_integrals(tree, &piece.fund_weights, assets);
        let replay = stoch_integral(tree, &piece.outer, &fund);
        let target = stop_process(tree, z, sigma);
        if let Some(u) = (0..tree.len()).find(|&u| z0 + &replay.values[u] != target.values[u]) {
            return Err(RepresentationError::MismatchedPiece { piece: label, node: tree.id(u).to_string() });
        }
    }

    let stopped: Vec<Vec<bool>> = ladder.iter().map(|s| s.stopped_by(tree)).collect();
    let d = assets.len();
    let mut eta = vec![PredictableProcess::constant(tree, Rational::zero()); d];
    let mut outer = PredictableProcess::constant(tree, Rational::zero());
    for u in tree.non_leaves() {
        // the step out of u lies in (σ_{k−1}, σ_k] iff σ_{k−1} ≤ time(u) < σ_k
        let rung = (0..ladder.len()).find(|&k| {
            let after_prev = k == 0 || stopped[k - 1][u];
            after_prev && !stopped[k][u]
        });
        if let Some(k) = rung {
            let c = &pieces[k].bound;
            for (j, e) in eta.iter_mut().enumerate() {
                e.values[u] = &pieces[k].fund_weights[j].values[u] / c;
            }
            outer.values[u] = c * &pieces[k].outer.values[u];
        }
    }
    let fund = sum_integrals(tree, &eta, assets);
    let gains = stoch_integral(tree, &outer, &fund);
    let reconstructed = gains.map(|g| z0 + g);
    let last = ladder.last().expect("non-empty ladder");
    debug_assert_eq!(reconstructed, stop_process(tree, z, last));
    Ok(Glued { fund_weights: eta, outer, fund, reconstructed })
}

/// Representation of `Z` stopped at `σ`, in glue-ready form.
pub fn stopped_piece(
    tree: &ScenarioTree,
    z: &AdaptedProcess,
    assets: &[AdaptedProcess],
    q: &MeasureVector,
    sigma: &StoppingTime,
) -> Result<Piece, RepresentationError> {
    let target = stop_process(tree, z, sigma);
    let g = represent_one_stage(tree, &target, assets, q)?;
    let f = fundify(tree, &g, assets);
    Ok(Piece { outer: f.scale, fund_weights: f.weights, bound: Rational::one() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subsequence {
    /// Chosen indices `n_j` (1-based into the candidate list), strictly increasing.
    pub indices: Vec<usize>,
    /// `E_P|Z^{n_j}_{j∧T} − Z_{j∧T}|` for each chosen term.
    pub errors: Vec<Rational>,
    /// `U = |Z| + Σ_j |Y^j − Z|`.
    pub dominating: AdaptedProcess,
    /// `σ_k` for `k = 1..K`, with `σ_K ≡ T`.
    pub ladder: Vec<StoppingTime>,
    /// `E_P[sup_{s ≤ σ_k} U_s]` for each rung.
    pub sup_expectations: Vec<Rational>,
}

fn expected_abs_at(tree: &ScenarioTree, reach: &[Rational], a: &AdaptedProcess, b: &AdaptedProcess, t: usize) -> Rational {
    tree.nodes_at(t)
        .map(|u| &reach[u] * (&a.values[u] - &b.values[u]).abs())
        .sum()
}

/// Picks `n_1 < n_2 < …` with `E_P|Z^{n_j}_j − Z_j| ≤ 2^{−j}` (times clamped
/// to `T`) and builds the dominating process and its hitting ladder.
pub fn select_subsequence(
    tree: &ScenarioTree,
    p: &MeasureVector,
    candidates: &[AdaptedProcess],
    z: &AdaptedProcess,
    terms: usize,
) -> Result<Subsequence, RepresentationError> {
    tree.check_adapted(z)?;
    let reach = p.node_mass(tree);
    let mut indices = Vec::with_capacity(terms);
    let mut errors = Vec::with_capacity(terms);
    let mut next = 0;
    for j in 1..=terms {
        let t = j.min(tree.horizon());
        let bound = rational::pow2(-(j as i32));
        let found = (next..candidates.len()).find_map(|n| {
            let e = expected_abs_at(tree, &reach, &candidates[n], z, t);
            (e <= bound).then_some((n, e))
        });
        let Some((n, e)) = found else {
            return Err(RepresentationError::NoSubsequence { term: j });
        };
        indices.push(n + 1);
        errors.push(e);
        next = n + 1;
    }
    let mut dominating = z.map(Signed::abs);
    for &n in &indices {
        let diff = tree::sub(&candidates[n - 1], z);
        for (d, v) in dominating.values.iter_mut().zip(diff.values) {
            *d += v.abs();
        }
    }
    let max_u = dominating.values.iter().max().cloned().unwrap_or_default();
    let top = (rational::floor_to_i64(&max_u) + 1).max(tree.horizon().max(1) as i64);
    let mut ladder = Vec::new();
    let mut sup_expectations = Vec::new();
    for k in 1..=top {
        let sigma = first_hitting_stop(tree, &dominating, &rational::int(k));
        let running_sup = running_max(tree, &dominating);
        let stopped_sup = stop_process(tree, &running_sup, &sigma);
        sup_expectations.push(p.expectation(&stopped_sup.terminal(tree)));
        ladder.push(sigma);
    }
    Ok(Subsequence { indices, errors, dominating, ladder, sup_expectations })
}

fn running_max(tree: &ScenarioTree, x: &AdaptedProcess) -> AdaptedProcess {
    let mut out = x.clone();
    for u in 1..tree.len() {
        let p = tree.parent(u).expect("non-root");
        if out.values[p] > out.values[u] {
            out.values[u] = out.values[p].clone();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub level: u64,
    pub integrand: PredictableProcess,
    /// `E_P[√(∫_0^τ f² 1_{|f|>k} d[X, X])]` at the chosen level.
    pub tail: f64,
}

/// `E_P[√(∫_0^τ f² 1_{|f| > k} d[X, X])]`.
pub fn truncation_tail(
    tree: &ScenarioTree,
    p: &MeasureVector,
    f: &PredictableProcess,
    x: &AdaptedProcess,
    tau: &StoppingTime,
    level: &Rational,
) -> f64 {
    let active = tau.active_steps(tree);
    let mut acc = vec![Rational::zero(); tree.len()];
    for u in 1..tree.len() {
        let par = tree.parent(u).expect("non-root");
        acc[u] = acc[par].clone();
        if active[par] && f.values[par].abs() > *level {
            let dx = &x.values[u] - &x.values[par];
            acc[u] += &f.values[par] * &f.values[par] * &dx * &dx;
        }
    }
    tree.leaves()
        .iter()
        .zip(&p.leaf_mass)
        .filter(|(&l, _)| !acc[l].is_zero())
        .map(|(&l, m)| rational::to_f64(m) * rational::to_f64(&acc[l]).sqrt())
        .sum()
}

/// Smallest integer `k ≥ 1` whose truncation `f 1_{|f| ≤ k}` leaves a tail
/// of at most `ε`.
pub fn truncate_integrand(
    tree: &ScenarioTree,
    p: &MeasureVector,
    f: &PredictableProcess,
    x: &AdaptedProcess,
    tau: &StoppingTime,
    epsilon: f64,
) -> Truncation {
    let max = tree.non_leaves().map(|u| f.values[u].abs()).max().unwrap_or_default();
    let top = rational::ceil_to_i64(&max).max(1) as u64;
    for k in 1..=top {
        let level = Rational::from_integer(k.into());
        let tail = truncation_tail(tree, p, f, x, tau, &level);
        if tail <= epsilon || k == top {
            let integrand = f.map(|v| if v.abs() <= level { v.clone() } else { Rational::zero() });
            return Truncation { level: k, integrand, tail };
        }
    }
    unreachable!("the top level keeps every value")
}

/// A float measure carried together with an exact dyadic approximant.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatMeasure {
    pub mass: Vec<f64>,
    pub rational: MeasureVector,
}

/// Dyadic approximant with total mass exactly one and every entry positive.
pub fn dyadic_measure(mass: &[f64]) -> MeasureVector {
    let min = mass.iter().copied().fold(f64::INFINITY, f64::min).max(f64::MIN_POSITIVE);
    let bits = (52 - min.log2().floor() as i64).max(60) as usize;
    let denom = BigInt::one() << bits;
    let scale = Rational::from_integer(denom.clone());
    let mut numers: Vec<BigInt> = mass
        .iter()
        .map(|&m| {
            let exact = rational::from_f64(m).unwrap_or_default();
            (exact * &scale).round().to_integer().max(BigInt::one())
        })
        .collect();
    let total: BigInt = numers.iter().sum();
    let largest = (0..numers.len()).max_by(|&a, &b| numers[a].cmp(&numers[b]).then(b.cmp(&a))).unwrap_or(0);
    numers[largest] += &denom - total;
    MeasureVector::new(numers.into_iter().map(|n| Rational::new(n, denom.clone())).collect())
}

/// `dQ/dP = e^{−η} / E_P[e^{−η}]`.
///
/// Weights that underflow are clamped to the smallest positive normal float
/// so that `Q` stays equivalent to `P`.
pub fn exp_measure(eta: &[f64], p: &MeasureVector) -> FloatMeasure {
    let shift = eta.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = if shift.is_finite() { shift } else { 0.0 };
    let weights: Vec<f64> = eta
        .iter()
        .zip(&p.leaf_mass)
        .map(|(e, m)| (rational::to_f64(m) * (-(e - shift)).exp()).max(f64::MIN_POSITIVE))
        .collect();
    let total: f64 = weights.iter().sum();
    let mass: Vec<f64> = weights.iter().map(|w| (w / total).max(f64::MIN_POSITIVE)).collect();
    let rational = dyadic_measure(&mass);
    FloatMeasure { mass, rational }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    pub representable: bool,
    pub witness: Option<NodeId>,
    pub residual: Vec<Rational>,
    pub target: AdaptedProcess,
    pub result: Option<RepresentationResult>,
}

impl Membership {
    pub fn to_json(&self, tree: &ScenarioTree) -> Value {
        json!({
            "representable": self.representable,
            "witness": self.witness.map(|u| tree.id(u).to_string()),
            "unmatched_increment": self.residual.iter().map(io::rational_value).collect::<Vec<_>>(),
            "target": io::adapted_json(tree, &self.target),
            "representation": self.result.as_ref().map(|r| r.to_json(tree)),
        })
    }
}

/// Two-stage representation of an already-built martingale `Z`.
pub fn represent_two_stage(
    tree: &ScenarioTree,
    z: &AdaptedProcess,
    assets: &[AdaptedProcess],
    q: &MeasureVector,
) -> Result<RepresentationResult, RepresentationError> {
    let direct = represent_one_stage(tree, z, assets, q)?;
    let fund = fundify(tree, &direct, assets);
    let c = z.values[tree.root()].clone();
    let gains = stoch_integral(tree, &fund.scale, &fund.fund);
    let reconstructed = gains.map(|g| &c + g);
    let mass = q.node_mass(tree);
    let mismatch = (0..tree.len()).find(|&u| !mass[u].is_zero() && reconstructed.values[u] != z.values[u]);
    assert!(mismatch.is_none(), "two-stage replay must be exact");
    Ok(RepresentationResult {
        initial_value: c,
        fund_integrands: fund.weights,
        fund: fund.fund,
        outer_integrand: fund.scale,
        direct_integrands: direct,
        reconstructed,
    })
}

/// Whether the claim `ξ` lies in `K_T(M^1..M^d)` under `measure`.
pub fn kt_membership(
    tree: &ScenarioTree,
    xi: &[Rational],
    assets: &[AdaptedProcess],
    measure: &MeasureVector,
) -> Result<Membership, RepresentationError> {
    let target = martingale_of(tree, measure, xi)?;
    match represent_two_stage(tree, &target, assets, measure) {
        Ok(result) => Ok(Membership { representable: true, witness: None, residual: Vec::new(), target, result: Some(result) }),
        Err(RepresentationError::NotRepresentable { node, residual }) => Ok(Membership {
            representable: false,
            witness: tree.node(&node),
            residual,
            target,
            result: None,
        }),
        Err(e) => Err(e),
    }
}

/// `E_P[√[X, X]_T]` as a float.
pub fn expected_root_qv(tree: &ScenarioTree, p: &MeasureVector, x: &AdaptedProcess) -> f64 {
    let qv = quad_covar(tree, x, x);
    tree.leaves()
        .iter()
        .zip(&p.leaf_mass)
        .map(|(&l, m)| rational::to_f64(m) * rational::to_f64(&qv.values[l]).sqrt())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{frac, int};
    use crate::tree::{MeasureVector, TreeBuilder, ZeroMass};

    fn binomial() -> (ScenarioTree, AdaptedProcess, MeasureVector) {
        let tree = TreeBuilder::new()
            .root("0")
            .child("0", "u", frac(1, 2))
            .child("0", "d", frac(1, 2))
            .build(Some(1))
            .unwrap();
        let q = MeasureVector::new(vec![frac(1, 3), frac(2, 3)]);
        (tree, AdaptedProcess::new(vec![int(1), int(2), frac(1, 2)]), q)
    }

    fn trinomial() -> (ScenarioTree, AdaptedProcess, MeasureVector) {
        let tree = TreeBuilder::new()
            .root("0")
            .child("0", "u", frac(1, 3))
            .child("0", "m", frac(1, 3))
            .child("0", "d", frac(1, 3))
            .build(Some(1))
            .unwrap();
        let q = MeasureVector::new(vec![frac(1, 6), frac(1, 2), frac(1, 3)]);
        (tree, AdaptedProcess::new(vec![int(1), int(2), int(1), frac(1, 2)]), q)
    }

    #[test]
    fn one_stage_binomial_indicator() {
        let (tree, x, q) = binomial();
        let z = martingale_of(&tree, &q, &[int(1), int(0)]).unwrap();
        assert_eq!(z.values, vec![frac(1, 3), int(1), int(0)]);
        let g = represent_one_stage(&tree, &z, &[x], &q).unwrap();
        assert_eq!(g[0].values[0], frac(2, 3));
    }

    #[test]
    fn one_stage_constant_gives_zero() {
        let (tree, x, q) = binomial();
        let z = AdaptedProcess::constant(&tree, int(5));
        let g = represent_one_stage(&tree, &z, &[x], &q).unwrap();
        assert!(g[0].values.iter().all(Zero::is_zero));
    }

    #[test]
    fn one_stage_trinomial_fails_at_root() {
        let (tree, x, q) = trinomial();
        let z = martingale_of(&tree, &q, &[int(0), int(1), int(0)]).unwrap();
        match represent_one_stage(&tree, &z, &[x], &q) {
            Err(RepresentationError::NotRepresentable { node, residual }) => {
                assert_eq!(node, "0");
                assert!(residual.iter().any(|r| !r.is_zero()));
            }
            other => panic!("expected NotRepresentable, got {other:?}"),
        }
    }

    #[test]
    fn one_stage_minimum_norm_with_duplicate_assets() {
        let (tree, x, q) = binomial();
        let z = martingale_of(&tree, &q, &[int(1), int(0)]).unwrap();
        let g = represent_one_stage(&tree, &z, &[x.clone(), x], &q).unwrap();
        assert_eq!(g[0].values[0], frac(1, 3));
        assert_eq!(g[1].values[0], frac(1, 3));
    }

    #[test]
    fn fundify_examples() {
        let (tree, x, _) = binomial();
        let zero = fundify(&tree, &[PredictableProcess::constant(&tree, int(0))], &[x.clone()]);
        assert_eq!(zero.scale.values[0], int(1));
        assert!(zero.fund.values.iter().all(Zero::is_zero));

        let g = PredictableProcess::constant(&tree, frac(2, 3));
        let f = fundify(&tree, &[g.clone()], &[x.clone()]);
        assert_eq!(f.scale.values[0], frac(5, 3));
        assert_eq!(f.weights[0].values[0], frac(2, 5));
        assert_eq!(stoch_integral(&tree, &f.scale, &f.fund), stoch_integral(&tree, &g, &x));

        let g1 = PredictableProcess::constant(&tree, int(3));
        let g2 = PredictableProcess::constant(&tree, int(-4));
        let f2 = fundify(&tree, &[g1, g2], &[x.clone(), x]);
        assert_eq!(f2.scale.values[0], int(8));
        assert_eq!(f2.weights[0].values[0], frac(3, 8));
        assert_eq!(f2.weights[1].values[0], frac(-1, 2));
    }

    #[test]
    fn kt_membership_examples() {
        let (tree, x, q) = binomial();
        let m = kt_membership(&tree, &[int(1), int(0)], &[x.clone()], &q).unwrap();
        assert!(m.representable);
        let r = m.result.unwrap();
        assert_eq!(r.initial_value, frac(1, 3));
        assert_eq!(r.direct_integrands[0].values[0], frac(2, 3));
        let c = kt_membership(&tree, &[int(4), int(4)], &[x], &q).unwrap();
        assert!(c.representable);
        assert!(c.result.unwrap().direct_integrands[0].values.iter().all(Zero::is_zero));
        let (tri, y, qt) = trinomial();
        let t = kt_membership(&tri, &[int(0), int(1), int(0)], &[y], &qt).unwrap();
        assert!(!t.representable);
        assert_eq!(t.witness, Some(0));
    }

    fn two_period() -> (ScenarioTree, AdaptedProcess, MeasureVector) {
        let tree = TreeBuilder::new()
            .root("r")
            .child("r", "u", frac(1, 2))
            .child("r", "d", frac(1, 2))
            .child("u", "uu", frac(1, 2))
            .child("u", "ud", frac(1, 2))
            .child("d", "du", frac(1, 2))
            .child("d", "dd", frac(1, 2))
            .build(None)
            .unwrap();
        // symmetric random walk, a P-martingale
        let x = AdaptedProcess::new(vec![int(0), int(1), int(-1), int(2), int(0), int(0), int(-2)]);
        let p = MeasureVector::from_tree(&tree);
        (tree, x, p)
    }

    #[test]
    fn glue_per_period_pieces() {
        let (tree, x, p) = two_period();
        let z = martingale_of(&tree, &p, &[int(3), int(0), int(1), int(1)]).unwrap();
        let assets = [x];
        let ladder = vec![StoppingTime::constant(&tree, 1), StoppingTime::horizon(&tree)];
        let pieces: Vec<Piece> = ladder
            .iter()
            .map(|s| stopped_piece(&tree, &z, &assets, &p, s).unwrap())
            .collect();
        let glued = glue_representations(&tree, &z, &assets, &pieces, &ladder).unwrap();
        assert_eq!(glued.reconstructed, z);
        assert!(glued
            .fund_weights
            .iter()
            .all(|e| e.values.iter().all(|v| v.abs() <= Rational::one())));
    }

    #[test]
    fn glue_single_piece_rescales() {
        let (tree, x, p) = two_period();
        let z = martingale_of(&tree, &p, &[int(1), int(0), int(0), int(0)]).unwrap();
        let assets = [x];
        let mut piece = stopped_piece(&tree, &z, &assets, &p, &StoppingTime::horizon(&tree)).unwrap();
        piece.bound = int(2);
        let glued =
            glue_representations(&tree, &z, &assets, &[piece.clone()], &[StoppingTime::horizon(&tree)]).unwrap();
        assert_eq!(glued.reconstructed, z);
        assert_eq!(glued.outer.values[0], int(2) * &piece.outer.values[0]);
    }

    #[test]
    fn glue_rejects_bad_input() {
        let (tree, x, p) = two_period();
        let z = martingale_of(&tree, &p, &[int(1), int(0), int(0), int(0)]).unwrap();
        let assets = [x];
        let ladder = vec![StoppingTime::horizon(&tree), StoppingTime::constant(&tree, 1)];
        let pieces: Vec<Piece> = ladder
            .iter()
            .map(|s| stopped_piece(&tree, &z, &assets, &p, s).unwrap())
            .collect();
        assert!(matches!(
            glue_representations(&tree, &z, &assets, &pieces, &ladder),
            Err(RepresentationError::BadLadder(_))
        ));
        assert!(matches!(
            glue_representations(&tree, &z, &assets, &[], &[]),
            Err(RepresentationError::BadLadder(_))
        ));
        let mut wrong = pieces[0].clone();
        wrong.outer = PredictableProcess::constant(&tree, int(0));
        assert!(matches!(
            glue_representations(&tree, &z, &assets, &[wrong], &[StoppingTime::horizon(&tree)]),
            Err(RepresentationError::MismatchedPiece { piece: 1, .. })
        ));
    }

    #[test]
    fn subsequence_of_exact_sequence() {
        let (tree, x, p) = two_period();
        let z = x.clone();
        let candidates = vec![z.clone(); 5];
        let s = select_subsequence(&tree, &p, &candidates, &z, 4).unwrap();
        assert_eq!(s.indices, vec![1, 2, 3, 4]);
        assert!(s.errors.iter().all(Zero::is_zero));
        assert_eq!(s.dominating, z.map(Signed::abs));
        assert_eq!(s.ladder.last().unwrap().values(&tree), vec![2; 4]);
        assert!(select_subsequence(&tree, &p, &candidates, &z, 6).is_err());
    }

    #[test]
    fn subsequence_of_geometric_perturbation() {
        let (tree, x, p) = two_period();
        let w = x.clone();
        let z = tree::scale(&x, &int(3));
        let candidates: Vec<AdaptedProcess> =
            (1..=8).map(|n| tree::add(&z, &tree::scale(&w, &rational::pow4(-n)))).collect();
        let s = select_subsequence(&tree, &p, &candidates, &z, 6).unwrap();
        // E|W_t| = 1 for t = 1, 2, so 4^{-n} ≤ 2^{-j} holds with n = j
        assert_eq!(s.indices, vec![1, 2, 3, 4, 5, 6]);
        for (j, e) in s.errors.iter().enumerate() {
            assert!(*e <= rational::pow2(-(j as i32 + 1)));
        }
        let noisy: Vec<AdaptedProcess> = (0..3).map(|_| tree::add(&z, &w)).collect();
        assert_eq!(
            select_subsequence(&tree, &p, &noisy, &z, 1),
            Err(RepresentationError::NoSubsequence { term: 1 })
        );
    }

    #[test]
    fn truncation_examples() {
        let (tree, x, p) = two_period();
        let tau = StoppingTime::horizon(&tree);
        let small = PredictableProcess::constant(&tree, frac(1, 2));
        let t = truncate_integrand(&tree, &p, &small, &x, &tau, 0.0);
        assert_eq!(t.level, 1);
        assert_eq!(t.integrand, small);

        let mut values = PredictableProcess::constant(&tree, frac(1, 2));
        values.values[1] = int(3);
        values.values[2] = int(7);
        let t = truncate_integrand(&tree, &p, &values, &x, &tau, 0.0);
        assert_eq!(t.level, 7);
        assert_eq!(t.integrand, values);
        assert_eq!(t.tail, 0.0);
    }

    #[test]
    fn exp_measure_examples() {
        let (tree, _, _) = binomial();
        let p = MeasureVector::from_tree(&tree);
        let same = exp_measure(&[0.0, 0.0], &p);
        assert_eq!(same.mass, vec![0.5, 0.5]);
        assert_eq!(same.rational, p);
        let q = exp_measure(&[std::f64::consts::LN_2, 0.0], &p);
        assert!((q.mass[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((q.mass[1] - 2.0 / 3.0).abs() < 1e-15);
        q.rational.validate(&tree).unwrap();
        let huge = exp_measure(&[5000.0, 0.0], &p);
        assert!(huge.mass[0] > 0.0 && huge.mass[1] > 0.999);
        assert!(huge.rational.is_strictly_positive());
        huge.rational.validate(&tree).unwrap();
    }

    #[test]
    fn membership_replays_under_zero_mass_children() {
        let (tree, x, _) = binomial();
        let q = MeasureVector::new(vec![int(0), int(1)]);
        let z = tree::condexp(&tree, &q, &[int(1), int(5)], 1, ZeroMass::Ignore).unwrap();
        let g = represent_one_stage(&tree, &z, &[x], &q).unwrap();
        assert_eq!(g[0].values[0], Rational::zero());
    }
}
