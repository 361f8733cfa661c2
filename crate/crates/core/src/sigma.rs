//! Sigma-martingales on scenario trees.
//!
//! `X` is a sigma-martingale when some strictly positive predictable `φ`
//! makes `∫ φ dX` a martingale. On a finite tree the one-step condition
//! `φ(u) E[ΔX | u] = 0` with `φ(u) > 0` forces zero drift, so the class
//! collapses onto ordinary martingales; the constructions below are still
//! carried out and checked so that the collapse is observed, not assumed.

use num_traits::{One, Signed, Zero};
use serde_json::{json, Value};
use thiserror::Error;

use crate::io;
use crate::rational::{self, Rational};
use crate::tree::{
    self, condexp, first_hitting_stop, is_martingale, quad_covar, stoch_integral, AdaptedProcess, MeasureVector,
    NodeId, PredictableProcess, ScenarioTree, StoppingTime, TreeError, ZeroMass,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SigmaError {
    #[error("bad stopping ladder: {0}")]
    BadLadder(String),
    #[error("witness {which} is invalid at node {node}")]
    InvalidWitness { which: usize, node: String },
    #[error("measures are not equivalent: leaf {leaf} has zero mass")]
    NotEquivalent { leaf: String },
    #[error("bad range: need 0 < epsilon <= cap, got epsilon = {epsilon}, cap = {cap}")]
    BadRange { epsilon: f64, cap: f64 },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaWitness {
    pub phi: PredictableProcess,
    /// `∫ φ dX`.
    pub integral: AdaptedProcess,
    pub verdict: bool,
    /// A node where `E_Q[ΔX | u] ≠ 0`, which rules out every positive `φ`.
    pub obstruction: Option<NodeId>,
}

impl SigmaWitness {
    pub fn to_json(&self, tree: &ScenarioTree) -> Value {
        json!({
            "verdict": self.verdict,
            "phi": io::predictable_json(tree, &self.phi),
            "integral": io::adapted_json(tree, &self.integral),
            "obstruction": self.obstruction.map(|u| tree.id(u).to_string()),
        })
    }
}

fn drift_nodes(tree: &ScenarioTree, q: &MeasureVector, x: &AdaptedProcess) -> Vec<NodeId> {
    let mass = q.node_mass(tree);
    tree.non_leaves()
        .filter(|&u| !mass[u].is_zero())
        .filter(|&u| {
            let drift: Rational = tree.children(u).iter().map(|&c| &mass[c] * (&x.values[c] - &x.values[u])).sum();
            !drift.is_zero()
        })
        .collect()
}

/// Searches for a strictly positive `φ` with `∫ φ dX` a Q-martingale.
///
/// Each cell is solved on its own: `φ(u) Σ_c Q(c) ΔX(c) = 0` has a positive
/// solution iff the drift vanishes, and then `φ(u) = 1` is one.
pub fn sigma_witness(tree: &ScenarioTree, q: &MeasureVector, x: &AdaptedProcess) -> Result<SigmaWitness, SigmaError> {
    tree.check_adapted(x)?;
    let obstruction = drift_nodes(tree, q, x).first().copied();
    let phi = PredictableProcess::constant(tree, Rational::one());
    let integral = stoch_integral(tree, &phi, x);
    let verdict = obstruction.is_none();
    debug_assert_eq!(verdict, is_martingale(tree, q, &integral, ZeroMass::Ignore)?.holds);
    Ok(SigmaWitness { phi, integral, verdict, obstruction })
}

/// Revalidates a claimed witness: `φ > 0` on every cell and `∫ φ dX` a Q-martingale.
pub fn check_witness(
    tree: &ScenarioTree,
    q: &MeasureVector,
    x: &AdaptedProcess,
    phi: &PredictableProcess,
) -> Result<Option<NodeId>, SigmaError> {
    if let Some(u) = tree.non_leaves().find(|&u| !phi.values[u].is_positive()) {
        return Ok(Some(u));
    }
    let verdict = is_martingale(tree, q, &stoch_integral(tree, phi, x), ZeroMass::Ignore)?;
    Ok(verdict.worst_node)
}

/// `h = Σ_n 1/(2^n (1 + a_n)) 1_{(τ_{n−1}, τ_n]}` with `τ_0 ≡ 0`.
///
/// The last rung must be the horizon so that `h` is positive on every step.
pub fn lemma44_h(tree: &ScenarioTree, ladder: &[StoppingTime], a: &[Rational]) -> Result<PredictableProcess, SigmaError> {
    if ladder.is_empty() {
        return Err(SigmaError::BadLadder("empty ladder".into()));
    }
    if ladder.len() != a.len() {
        return Err(SigmaError::BadLadder(format!("{} rungs but {} constants", ladder.len(), a.len())));
    }
    if a.iter().any(Signed::is_negative) {
        return Err(SigmaError::BadLadder("negative constant".into()));
    }
    for w in ladder.windows(2) {
        if !w[0].le(&w[1], tree) {
            return Err(SigmaError::BadLadder("stopping times are not monotone".into()));
        }
    }
    let last = ladder.last().expect("non-empty");
    if last.values(tree).iter().any(|&t| t != tree.horizon()) {
        return Err(SigmaError::BadLadder("last rung must equal the horizon".into()));
    }
    let stopped: Vec<Vec<bool>> = ladder.iter().map(|s| s.stopped_by(tree)).collect();
    Ok(PredictableProcess::from_fn(tree, |u| {
        let n = (0..ladder.len())
            .find(|&k| (k == 0 || stopped[k - 1][u]) && !stopped[k][u])
            .expect("every step lies on some rung");
        Rational::one() / (rational::pow2(n as i32 + 1) * (Rational::one() + &a[n]))
    }))
}

/// Hitting ladder of `|N|` at levels `1, 2, …` up to the horizon rung.
pub fn level_ladder(tree: &ScenarioTree, n: &AdaptedProcess) -> Vec<StoppingTime> {
    let abs = n.map(Signed::abs);
    let max = abs.values.iter().max().cloned().unwrap_or_default();
    let top = (rational::floor_to_i64(&max) + 1).max(tree.horizon().max(1) as i64);
    (1..=top).map(|k| first_hitting_stop(tree, &abs, &rational::int(k))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma46 {
    pub ladder: Vec<StoppingTime>,
    pub a: Vec<Rational>,
    pub h: PredictableProcess,
    /// `M = ∫ h dN = ∫ hφ dX`.
    pub m: AdaptedProcess,
    /// `ψ = 1/(hφ)`, so that `X − X_0 = ∫ ψ dM`.
    pub psi: PredictableProcess,
    pub m_is_martingale: bool,
    pub recovers_x: bool,
}

/// From a witness `φ` build the martingale `M` and integrand `ψ` with `X = X_0 + ∫ ψ dM`.
pub fn lemma46_decompose(
    tree: &ScenarioTree,
    q: &MeasureVector,
    x: &AdaptedProcess,
    phi: &PredictableProcess,
) -> Result<Lemma46, SigmaError> {
    if let Some(node) = check_witness(tree, q, x, phi)? {
        return Err(SigmaError::InvalidWitness { which: 1, node: tree.id(node).to_string() });
    }
    let n = stoch_integral(tree, phi, x);
    let ladder = level_ladder(tree, &n);
    let qv = quad_covar(tree, &n, &n);
    let a: Vec<Rational> = ladder
        .iter()
        .map(|s| q.expectation(&tree::stop_process(tree, &qv, s).terminal(tree)))
        .collect();
    let h = lemma44_h(tree, &ladder, &a)?;
    let m = stoch_integral(tree, &h, &n);
    let psi = PredictableProcess::from_fn(tree, |u| Rational::one() / (&h.values[u] * &phi.values[u]));
    let m_is_martingale = is_martingale(tree, q, &m, ZeroMass::Ignore)?.holds;
    let back = stoch_integral(tree, &psi, &m);
    let recovers_x = (0..tree.len()).all(|u| &x.values[0] + &back.values[u] == x.values[u]);
    Ok(Lemma46 { ladder, a, h, m, psi, m_is_martingale, recovers_x })
}

/// `g = 1/(1 + ψ²)` and `N = ∫ g dX = ∫ gψ dM` for `X = ∫ ψ dM`.
pub fn lemma46_compose(
    tree: &ScenarioTree,
    q: &MeasureVector,
    m: &AdaptedProcess,
    psi: &PredictableProcess,
) -> Result<(PredictableProcess, AdaptedProcess, bool), SigmaError> {
    let x = stoch_integral(tree, psi, m);
    let g = PredictableProcess::from_fn(tree, |u| Rational::one() / (Rational::one() + &psi.values[u] * &psi.values[u]));
    let n = stoch_integral(tree, &g, &x);
    let holds = is_martingale(tree, q, &n, ZeroMass::Ignore)?.holds;
    Ok((g, n, holds))
}

/// A positive witness for `U = ∫ f dX`, built through `X = ∫ ψ dM`.
pub fn lemma412_witness(
    tree: &ScenarioTree,
    q: &MeasureVector,
    x: &AdaptedProcess,
    phi: &PredictableProcess,
    f: &PredictableProcess,
) -> Result<SigmaWitness, SigmaError> {
    let decomposition = lemma46_decompose(tree, q, x, phi)?;
    let u = stoch_integral(tree, f, x);
    let witness = PredictableProcess::from_fn(tree, |n| {
        let fpsi = &f.values[n] * &decomposition.psi.values[n];
        Rational::one() / (Rational::one() + &fpsi * &fpsi)
    });
    let integral = stoch_integral(tree, &witness, &u);
    let verdict = is_martingale(tree, q, &integral, ZeroMass::Ignore)?;
    Ok(SigmaWitness { phi: witness, integral, verdict: verdict.holds, obstruction: verdict.worst_node })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSum {
    /// `ξ = min(φ¹, φ²)`.
    pub xi: PredictableProcess,
    /// `η^i = ξ / φ^i`, in `(0, 1]`.
    pub eta: [PredictableProcess; 2],
    pub y: AdaptedProcess,
    pub integral: AdaptedProcess,
    pub linear: bool,
    pub verdict: bool,
}

/// Witness for `a₁X¹ + a₂X²` from witnesses of the summands.
#[allow(clippy::too_many_arguments)]
pub fn sigma_sum(
    tree: &ScenarioTree,
    q: &MeasureVector,
    x1: &AdaptedProcess,
    phi1: &PredictableProcess,
    x2: &AdaptedProcess,
    phi2: &PredictableProcess,
    a1: &Rational,
    a2: &Rational,
) -> Result<SigmaSum, SigmaError> {
    for (which, (x, phi)) in [(x1, phi1), (x2, phi2)].into_iter().enumerate() {
        if let Some(node) = check_witness(tree, q, x, phi)? {
            return Err(SigmaError::InvalidWitness { which: which + 1, node: tree.id(node).to_string() });
        }
    }
    let xi = PredictableProcess::from_fn(tree, |u| phi1.values[u].clone().min(phi2.values[u].clone()));
    let eta = [
        PredictableProcess::from_fn(tree, |u| &xi.values[u] / &phi1.values[u]),
        PredictableProcess::from_fn(tree, |u| &xi.values[u] / &phi2.values[u]),
    ];
    debug_assert!(tree.non_leaves().all(|u| eta
        .iter()
        .all(|e| e.values[u].is_positive() && e.values[u] <= Rational::one())));
    let y = tree::add(&tree::scale(x1, a1), &tree::scale(x2, a2));
    let integral = stoch_integral(tree, &xi, &y);
    let parts = tree::add(
        &tree::scale(&stoch_integral(tree, &xi, x1), a1),
        &tree::scale(&stoch_integral(tree, &xi, x2), a2),
    );
    let linear = integral == parts;
    let verdict = is_martingale(tree, q, &integral, ZeroMass::Ignore)?.holds;
    Ok(SigmaSum { xi, eta, y, integral, linear, verdict })
}

/// Integrands against `N^j = ∫ φ^j dM^j` turned into integrands against `M^j`:
/// `f^j = φ^j g^j`.
pub fn lemma415_to_base(g: &[PredictableProcess], phi: &[PredictableProcess]) -> Vec<PredictableProcess> {
    g.iter()
        .zip(phi)
        .map(|(gj, pj)| PredictableProcess::new(gj.values.iter().zip(&pj.values).map(|(a, b)| a * b).collect()))
        .collect()
}

/// Inverse of [`lemma415_to_base`]: `g^j = f^j ψ^j` with `ψ^j = 1/φ^j`.
pub fn lemma415_to_scaled(
    tree: &ScenarioTree,
    f: &[PredictableProcess],
    phi: &[PredictableProcess],
) -> Vec<PredictableProcess> {
    f.iter()
        .zip(phi)
        .map(|(fj, pj)| PredictableProcess::from_fn(tree, |u| &fj.values[u] / &pj.values[u]))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma53Report {
    pub density: AdaptedProcess,
    pub m_q_martingale: bool,
    pub mz_p_martingale: bool,
    pub part_i: bool,
    /// `(σ, M^σ Q-martingale, (MZ)^σ P-martingale)` over the ladder.
    pub part_ii: Vec<(Vec<usize>, bool, bool)>,
    pub m_p_martingale: bool,
    pub covariation_p_martingale: bool,
    /// `M` is both a P- and a Q-martingale.
    pub part_iii_hypothesis: bool,
    /// `¬hypothesis ∨ conclusion`.
    pub part_iii: bool,
    pub part_iv: bool,
}

impl Lemma53Report {
    pub fn all_hold(&self) -> bool {
        self.part_i && self.part_ii.iter().all(|(_, a, b)| a == b) && self.part_iii && self.part_iv
    }

    pub fn to_json(&self, tree: &ScenarioTree) -> Value {
        json!({
            "density": io::adapted_json(tree, &self.density),
            "i": {
                "m_q_martingale": self.m_q_martingale,
                "mz_p_martingale": self.mz_p_martingale,
                "equivalence_holds": self.part_i,
            },
            "ii": self.part_ii.iter().map(|(s, a, b)| json!({
                "stopping_time": s,
                "stopped_m_q_martingale": a,
                "stopped_mz_p_martingale": b,
                "equivalence_holds": a == b,
            })).collect::<Vec<_>>(),
            "iii": {
                "m_p_martingale": self.m_p_martingale,
                "hypothesis": self.part_iii_hypothesis,
                "covariation_p_martingale": self.covariation_p_martingale,
                "holds": self.part_iii,
            },
            "iv": {
                "holds": self.part_iv,
                "note": "on a finite tree sigma-, local and true martingales coincide, so (iv) is (iii)",
            },
            "all_hold": self.all_hold(),
        })
    }
}

/// Checks the density-process identities for `Z_t = E_P[dQ/dP | F_t]`.
pub fn lemma53_report(
    tree: &ScenarioTree,
    m: &AdaptedProcess,
    q: &MeasureVector,
    p: &MeasureVector,
) -> Result<Lemma53Report, SigmaError> {
    tree.check_adapted(m)?;
    for (i, (pm, qm)) in p.leaf_mass.iter().zip(&q.leaf_mass).enumerate() {
        if pm.is_zero() || qm.is_zero() {
            return Err(SigmaError::NotEquivalent { leaf: tree.id(tree.leaves()[i]).to_string() });
        }
    }
    let ratio: Vec<Rational> = q.leaf_mass.iter().zip(&p.leaf_mass).map(|(a, b)| a / b).collect();
    let density = condexp(tree, p, &ratio, tree.horizon(), ZeroMass::Reject)?;
    let product = AdaptedProcess::new(m.values.iter().zip(&density.values).map(|(a, b)| a * b).collect());
    let m_q_martingale = is_martingale(tree, q, m, ZeroMass::Reject)?.holds;
    let mz_p_martingale = is_martingale(tree, p, &product, ZeroMass::Reject)?.holds;

    let mut ladder: Vec<StoppingTime> = (0..=tree.horizon()).map(|t| StoppingTime::constant(tree, t)).collect();
    ladder.extend(level_ladder(tree, m));
    let mut part_ii = Vec::with_capacity(ladder.len());
    for sigma in &ladder {
        let a = is_martingale(tree, q, &tree::stop_process(tree, m, sigma), ZeroMass::Reject)?.holds;
        let b = is_martingale(tree, p, &tree::stop_process(tree, &product, sigma), ZeroMass::Reject)?.holds;
        part_ii.push((sigma.values(tree), a, b));
    }

    let m_p_martingale = is_martingale(tree, p, m, ZeroMass::Reject)?.holds;
    let covariation = quad_covar(tree, m, &density);
    let covariation_p_martingale = is_martingale(tree, p, &covariation, ZeroMass::Reject)?.holds;
    let part_iii_hypothesis = m_p_martingale && m_q_martingale;
    let part_iii = !part_iii_hypothesis || covariation_p_martingale;
    Ok(Lemma53Report {
        density,
        m_q_martingale,
        mz_p_martingale,
        part_i: m_q_martingale == mz_p_martingale,
        part_ii,
        m_p_martingale,
        covariation_p_martingale,
        part_iii_hypothesis,
        part_iii,
        part_iv: part_iii,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeProbe {
    pub bounded: bool,
    /// `E_Q[√[X, X]_T]`, finite on every tree.
    pub expected_root_qv: f64,
    pub sigma_martingale: bool,
    pub martingale: bool,
}

/// Tree side of the stopping-time criterion: finiteness of `E[√[X, X]]` is
/// automatic, so a sigma-martingale is a martingale.
pub fn lemma49_tree_probe(tree: &ScenarioTree, q: &MeasureVector, x: &AdaptedProcess) -> Result<TreeProbe, SigmaError> {
    let witness = sigma_witness(tree, q, x)?;
    let martingale = is_martingale(tree, q, x, ZeroMass::Ignore)?.holds;
    let expected_root_qv = crate::representation::expected_root_qv(tree, q, x);
    Ok(TreeProbe { bounded: true, expected_root_qv, sigma_martingale: witness.verdict, martingale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{frac, int};
    use crate::tree::TreeBuilder;

    fn binomial() -> ScenarioTree {
        TreeBuilder::new()
            .root("0")
            .child("0", "u", frac(1, 2))
            .child("0", "d", frac(1, 2))
            .build(Some(1))
            .unwrap()
    }

    fn trinomial() -> ScenarioTree {
        TreeBuilder::new()
            .root("0")
            .child("0", "u", frac(1, 3))
            .child("0", "m", frac(1, 3))
            .child("0", "d", frac(1, 3))
            .build(Some(1))
            .unwrap()
    }

    #[test]
    fn witness_examples() {
        let tree = binomial();
        let x = AdaptedProcess::new(vec![int(1), int(2), frac(1, 2)]);
        let q = MeasureVector::new(vec![frac(1, 3), frac(2, 3)]);
        assert!(sigma_witness(&tree, &q, &x).unwrap().verdict);
        let p = MeasureVector::from_tree(&tree);
        let w = sigma_witness(&tree, &p, &x).unwrap();
        assert!(!w.verdict);
        assert_eq!(w.obstruction, Some(0));
        let c = AdaptedProcess::constant(&tree, int(4));
        assert!(sigma_witness(&tree, &p, &c).unwrap().verdict);
    }

    #[test]
    fn lemma44_examples() {
        let tree = binomial();
        let h = lemma44_h(&tree, &[StoppingTime::horizon(&tree)], &[int(0)]).unwrap();
        assert_eq!(h.values[0], frac(1, 2));
        let two = TreeBuilder::new()
            .root("r")
            .child("r", "a", int(1))
            .child("a", "b", int(1))
            .build(None)
            .unwrap();
        let ladder = [StoppingTime::constant(&two, 1), StoppingTime::horizon(&two)];
        let h = lemma44_h(&two, &ladder, &[int(1), int(3)]).unwrap();
        assert_eq!(h.values[0], frac(1, 4));
        assert_eq!(h.values[1], frac(1, 16));
        assert!(matches!(lemma44_h(&two, &[], &[]), Err(SigmaError::BadLadder(_))));
        let reversed = [StoppingTime::horizon(&two), StoppingTime::constant(&two, 1)];
        assert!(matches!(lemma44_h(&two, &reversed, &[int(0), int(0)]), Err(SigmaError::BadLadder(_))));
    }

    #[test]
    fn sum_examples() {
        let tree = binomial();
        let q = MeasureVector::new(vec![frac(1, 3), frac(2, 3)]);
        let x = AdaptedProcess::new(vec![int(1), int(2), frac(1, 2)]);
        let one = PredictableProcess::constant(&tree, int(1));
        let s = sigma_sum(&tree, &q, &x, &one, &x, &one, &int(1), &int(1)).unwrap();
        assert_eq!(s.xi, one);
        assert!(s.verdict && s.linear);
        let two = PredictableProcess::constant(&tree, int(2));
        let three = PredictableProcess::constant(&tree, int(3));
        let s = sigma_sum(&tree, &q, &x, &two, &x, &three, &int(2), &frac(-1, 2)).unwrap();
        assert_eq!(s.xi.values[0], int(2));
        assert_eq!(s.eta[0].values[0], int(1));
        assert_eq!(s.eta[1].values[0], frac(2, 3));
        let zero = sigma_sum(&tree, &q, &x, &one, &x, &one, &int(1), &int(-1)).unwrap();
        assert!(zero.y.values.iter().all(Zero::is_zero) && zero.verdict);
        let p = MeasureVector::from_tree(&tree);
        assert!(matches!(
            sigma_sum(&tree, &p, &x, &one, &x, &one, &int(1), &int(1)),
            Err(SigmaError::InvalidWitness { which: 1, .. })
        ));
    }

    #[test]
    fn lemma46_round_trip() {
        let tree = binomial();
        let q = MeasureVector::new(vec![frac(1, 3), frac(2, 3)]);
        let x = AdaptedProcess::new(vec![int(1), int(5), int(-1)]);
        let phi = PredictableProcess::constant(&tree, frac(3, 2));
        let d = lemma46_decompose(&tree, &q, &x, &phi).unwrap();
        assert!(d.m_is_martingale && d.recovers_x);
        let (_, n, holds) = lemma46_compose(&tree, &q, &d.m, &d.psi).unwrap();
        assert!(holds);
        assert!(n.values.iter().all(|v| v.abs() <= int(10)));
        let f = PredictableProcess::constant(&tree, int(-7));
        assert!(lemma412_witness(&tree, &q, &x, &phi, &f).unwrap().verdict);
    }

    #[test]
    fn lemma415_examples() {
        let tree = binomial();
        let m = AdaptedProcess::new(vec![int(1), int(2), frac(1, 2)]);
        let phi = vec![PredictableProcess::constant(&tree, int(2))];
        let g = vec![PredictableProcess::constant(&tree, frac(1, 3))];
        let f = lemma415_to_base(&g, &phi);
        assert_eq!(f[0].values[0], frac(2, 3));
        let n = stoch_integral(&tree, &phi[0], &m);
        assert_eq!(stoch_integral(&tree, &g[0], &n), stoch_integral(&tree, &f[0], &m));
        assert_eq!(lemma415_to_scaled(&tree, &f, &phi), g);
        let ones = vec![PredictableProcess::constant(&tree, int(1))];
        assert_eq!(lemma415_to_base(&g, &ones), g);
    }

    #[test]
    fn lemma53_examples() {
        let tree = binomial();
        let p = MeasureVector::from_tree(&tree);
        let m = AdaptedProcess::new(vec![int(1), int(2), frac(1, 2)]);
        let same = lemma53_report(&tree, &m, &p, &p).unwrap();
        assert!(same.density.values.iter().all(|v| *v == int(1)));
        assert!(same.all_hold());

        let q = MeasureVector::new(vec![frac(1, 3), frac(2, 3)]);
        let r = lemma53_report(&tree, &m, &q, &p).unwrap();
        assert_eq!(r.density.values, vec![int(1), frac(2, 3), frac(4, 3)]);
        assert!(r.m_q_martingale && r.mz_p_martingale && r.part_i);
        // M drifts under P, so the covariation claim is outside the hypothesis:
        // [M, Z]_1 = (−1/3, −1/6) has P-mean −1/4.
        assert!(!r.m_p_martingale && !r.part_iii_hypothesis);
        assert!(!r.covariation_p_martingale);
        assert!(r.all_hold());

        let tri = trinomial();
        let pt = MeasureVector::from_tree(&tri);
        let qt = MeasureVector::new(vec![frac(1, 6), frac(1, 2), frac(1, 3)]);
        let walk = AdaptedProcess::new(vec![int(0), int(1), int(0), int(-1)]);
        let asym = lemma53_report(&tri, &walk, &qt, &pt).unwrap();
        assert!(!asym.m_q_martingale && !asym.mz_p_martingale && asym.part_i);
        // increments (1, 0, −1) have mean zero under both measures
        let both = walk;
        let qb = MeasureVector::new(vec![frac(1, 4), frac(1, 2), frac(1, 4)]);
        let r = lemma53_report(&tri, &both, &qb, &pt).unwrap();
        assert!(r.part_iii_hypothesis && r.covariation_p_martingale);
        let zero = MeasureVector::new(vec![int(0), int(1)]);
        assert!(matches!(lemma53_report(&tree, &m, &zero, &p), Err(SigmaError::NotEquivalent { .. })));
    }

    #[test]
    fn tree_probe_collapses() {
        let tree = binomial();
        let q = MeasureVector::new(vec![frac(1, 3), frac(2, 3)]);
        let x = AdaptedProcess::new(vec![int(1), int(2), frac(1, 2)]);
        let probe = lemma49_tree_probe(&tree, &q, &x).unwrap();
        assert!(probe.sigma_martingale && probe.martingale);
        assert!(probe.expected_root_qv.is_finite());
    }
}
