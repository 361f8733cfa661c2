//! Martingale measures of a tree market.
//!
//! A leaf-mass vector `π` is a martingale measure for assets `X^1..X^d` when
//! `Σ π = 1`, `π ≥ 0`, and for every non-leaf node `u` and asset `j`
//! `Σ_{ℓ under u} π(ℓ) ΔX^j(child of u towards ℓ) = 0`. The set is a polytope;
//! uniqueness is decided on its affine hull (reduced echelon form over the
//! rationals) and extremality by a separate integer rank computation.

use num_traits::{One, Signed, Zero};
use serde_json::{json, Value};
use thiserror::Error;

use crate::io;
use crate::linalg::{self, RatMatrix};
use crate::rational::{self, Rational};
use crate::tree::{is_martingale, AdaptedProcess, MeasureVector, NodeId, ScenarioTree, TreeError, ZeroMass};

/// Nodes with more children than this are refused by the exact vertex search.
pub const MAX_LOCAL_BRANCHING: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmmError {
    #[error("no martingale measure exists (local problem at node {node} is infeasible)")]
    Infeasible { node: String },
    #[error("no strictly positive martingale measure exists")]
    NoEsmm,
    #[error("measure is not a martingale measure: asset {asset} drifts at node {node}")]
    NotMartingaleMeasure { asset: usize, node: String },
    #[error("measure is not strictly positive")]
    NotEquivalent,
    #[error("bad density: {0}")]
    BadDensity(String),
    #[error("bad mixing weight {0}")]
    BadWeight(String),
    #[error("node {node} has {children} children; exact vertex search supports at most {MAX_LOCAL_BRANCHING}")]
    Oversize { node: String, children: usize },
    #[error("at least one asset is required")]
    NoAssets,
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmmMode {
    #[default]
    Equivalent,
    AbsContinuous,
}

/// Solution set of the martingale constraints.
///
/// `affine_basis` spans the directions of the solution space of the linear
/// constraints; it is the affine hull of the measure set whenever a strictly
/// positive solution exists.
#[derive(Debug, Clone, PartialEq)]
pub struct EmmSet {
    pub affine_basis: Vec<Vec<Rational>>,
    pub reference: MeasureVector,
    pub dimension: usize,
    pub strictly_positive_point_exists: bool,
    pub mode: EmmMode,
}

impl EmmSet {
    pub fn is_unique(&self) -> bool {
        self.dimension == 0
    }

    pub fn to_json(&self, tree: &ScenarioTree) -> Value {
        json!({
            "dimension": self.dimension,
            "unique": self.is_unique(),
            "strictly_positive": self.strictly_positive_point_exists,
            "mode": match self.mode { EmmMode::Equivalent => "equivalent", EmmMode::AbsContinuous => "abs-continuous" },
            "reference": io::leaf_values_json(tree, &self.reference.leaf_mass),
            "basis": self.affine_basis.iter().map(|b| io::leaf_values_json(tree, b)).collect::<Vec<_>>(),
        })
    }
}

fn check_assets(tree: &ScenarioTree, assets: &[AdaptedProcess]) -> Result<(), EmmError> {
    for a in assets {
        tree.check_adapted(a)?;
    }
    Ok(())
}

/// Rows: total mass, then one row per (non-leaf node, asset).
pub fn constraint_matrix(tree: &ScenarioTree, assets: &[AdaptedProcess]) -> RatMatrix {
    let n_leaves = tree.leaf_count();
    let mut rows = vec![vec![Rational::one(); n_leaves]];
    for u in tree.non_leaves() {
        for x in assets {
            let mut row = vec![Rational::zero(); n_leaves];
            for &c in tree.children(u) {
                let delta = &x.values[c] - &x.values[u];
                if delta.is_zero() {
                    continue;
                }
                for pos in tree.leaf_span(c) {
                    row[pos] = delta.clone();
                }
            }
            rows.push(row);
        }
    }
    rows
}

/// Leaf-major construction of the homogeneous system: each leaf walks its
/// own path and writes its coefficient into the rows of its ancestors.
fn homogeneous_by_paths(tree: &ScenarioTree, assets: &[AdaptedProcess]) -> RatMatrix {
    let d = assets.len();
    let non_leaves: Vec<NodeId> = tree.non_leaves().collect();
    let mut row_of = vec![usize::MAX; tree.len()];
    for (k, &u) in non_leaves.iter().enumerate() {
        row_of[u] = 1 + k * d;
    }
    let mut m = linalg::zeros(1 + non_leaves.len() * d, tree.leaf_count());
    for (pos, &leaf) in tree.leaves().iter().enumerate() {
        m[0][pos] = Rational::one();
        let path = tree.path(leaf);
        for step in path.windows(2) {
            let (u, c) = (step[0], step[1]);
            for (j, x) in assets.iter().enumerate() {
                m[row_of[u] + j][pos] = &x.values[c] - &x.values[u];
            }
        }
    }
    m
}

fn combinations(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            visit(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, visit);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::with_capacity(k), &mut visit);
}

/// Vertices of `{q ≥ 0 on allowed children, Σ q = 1, Σ q ΔX^j = 0}` by
/// exhaustive basic-solution enumeration.
fn local_vertices(
    tree: &ScenarioTree,
    u: NodeId,
    assets: &[AdaptedProcess],
    allowed: &[bool],
) -> Result<Vec<Vec<Rational>>, EmmError> {
    let kids = tree.children(u);
    if kids.len() > MAX_LOCAL_BRANCHING {
        return Err(EmmError::Oversize { node: tree.id(u).to_string(), children: kids.len() });
    }
    let cols: Vec<usize> = (0..kids.len()).filter(|&i| allowed[kids[i]]).collect();
    let mut a: RatMatrix = vec![vec![Rational::one(); kids.len()]];
    for x in assets {
        a.push(kids.iter().map(|&c| &x.values[c] - &x.values[u]).collect());
    }
    let mut b = vec![Rational::zero(); a.len()];
    b[0] = Rational::one();
    let max_size = linalg::rank(&a).min(cols.len());
    let mut vertices: Vec<Vec<Rational>> = Vec::new();
    for size in 1..=max_size {
        combinations(cols.len(), size, |subset| {
            let sub: RatMatrix = a
                .iter()
                .map(|row| subset.iter().map(|&s| row[cols[s]].clone()).collect())
                .collect();
            if linalg::rank(&sub) != size {
                return;
            }
            let Some(q) = linalg::solve_particular(&sub, &b) else {
                return;
            };
            if q.iter().any(Signed::is_negative) {
                return;
            }
            let mut full = vec![Rational::zero(); kids.len()];
            for (&s, v) in subset.iter().zip(q) {
                full[cols[s]] = v;
            }
            if !vertices.contains(&full) {
                vertices.push(full);
            }
        });
    }
    Ok(vertices)
}

struct LocalAnalysis {
    feasible: Vec<bool>,
    positive: Vec<bool>,
    /// Conditional probability of each child under the vertex average.
    cond: Vec<Rational>,
}

fn analyse_locally(tree: &ScenarioTree, assets: &[AdaptedProcess]) -> Result<LocalAnalysis, EmmError> {
    let n = tree.len();
    let mut feasible = vec![true; n];
    let mut positive = vec![true; n];
    let mut cond = vec![Rational::zero(); n];
    cond[tree.root()] = Rational::one();
    for u in (0..n).rev() {
        if tree.is_leaf(u) {
            continue;
        }
        let vertices = local_vertices(tree, u, assets, &feasible)?;
        let kids = tree.children(u);
        if vertices.is_empty() {
            feasible[u] = false;
            positive[u] = false;
            // any distribution; the node is null under every solution
            cond[kids[0]] = Rational::one();
            continue;
        }
        let count = Rational::from_integer(vertices.len().into());
        for (i, &c) in kids.iter().enumerate() {
            let avg: Rational = vertices.iter().map(|v| &v[i]).sum::<Rational>() / &count;
            cond[c] = avg;
        }
        positive[u] = kids.iter().all(|&c| positive[c] && cond[c].is_positive());
    }
    Ok(LocalAnalysis { feasible, positive, cond })
}

/// Affine hull of the martingale measures of `assets` plus a reference
/// solution (strictly positive whenever one exists).
pub fn emm_affine_hull(tree: &ScenarioTree, assets: &[AdaptedProcess], mode: EmmMode) -> Result<EmmSet, EmmError> {
    if assets.is_empty() {
        return Err(EmmError::NoAssets);
    }
    check_assets(tree, assets)?;
    let local = analyse_locally(tree, assets)?;
    if !local.feasible[tree.root()] {
        let node = (0..tree.len())
            .find(|&u| !local.feasible[u] && tree.children(u).iter().all(|&c| local.feasible[c]))
            .unwrap_or(tree.root());
        return Err(EmmError::Infeasible { node: tree.id(node).to_string() });
    }
    let mut reach = vec![Rational::one(); tree.len()];
    for u in 1..tree.len() {
        let p = tree.parent(u).expect("non-root");
        reach[u] = &reach[p] * &local.cond[u];
    }
    let reference = MeasureVector::new(tree.leaves().iter().map(|&l| reach[l].clone()).collect());

    let system = constraint_matrix(tree, assets);
    let mut rhs = vec![Rational::zero(); system.len()];
    rhs[0] = Rational::one();
    assert_eq!(
        linalg::mat_vec(&system, &reference.leaf_mass),
        rhs,
        "reference point must satisfy the martingale constraints"
    );
    let affine_basis = linalg::nullspace(&system, tree.leaf_count());
    Ok(EmmSet {
        dimension: affine_basis.len(),
        affine_basis,
        reference,
        strictly_positive_point_exists: local.positive[tree.root()],
        mode,
    })
}

/// Whether the equivalent martingale measure is unique.
pub fn is_unique_esmm(tree: &ScenarioTree, assets: &[AdaptedProcess]) -> Result<bool, EmmError> {
    let set = emm_affine_hull(tree, assets, EmmMode::Equivalent)?;
    if !set.strictly_positive_point_exists {
        return Err(EmmError::NoEsmm);
    }
    Ok(set.is_unique())
}

/// Whether the strictly positive martingale measure `p` is an extreme point
/// of the martingale measures: true iff no nonzero mass-zero direction
/// satisfies the homogeneous constraints (Bareiss rank = leaf count).
pub fn is_extreme(p: &MeasureVector, tree: &ScenarioTree, assets: &[AdaptedProcess]) -> Result<bool, EmmError> {
    check_assets(tree, assets)?;
    p.validate(tree)?;
    if !p.is_strictly_positive() {
        return Err(EmmError::NotEquivalent);
    }
    for (j, x) in assets.iter().enumerate() {
        let v = is_martingale(tree, p, x, ZeroMass::Reject)?;
        if !v.holds {
            let node = v.worst_node.map(|u| tree.id(u).to_string()).unwrap_or_default();
            return Err(EmmError::NotMartingaleMeasure { asset: j, node });
        }
    }
    let system = homogeneous_by_paths(tree, assets);
    Ok(linalg::bareiss_rank(&system) == tree.leaf_count())
}

/// `Q± = P (1 ± c ξ)` for a P-mean-zero `ξ` with `c |ξ| < 1/2`.
pub fn split_measure(
    p: &MeasureVector,
    xi: &[Rational],
    c: &Rational,
) -> Result<(MeasureVector, MeasureVector), EmmError> {
    if xi.len() != p.leaf_mass.len() {
        return Err(EmmError::BadDensity("ξ and P have different lengths".into()));
    }
    if !p.expectation(xi).is_zero() {
        return Err(EmmError::BadDensity("ξ does not have P-mean zero".into()));
    }
    let half = rational::frac(1, 2);
    if let Some(v) = xi.iter().find(|v| (c * *v).abs() >= half) {
        return Err(EmmError::BadDensity(format!(
            "c·|ξ| = {} is not below 1/2",
            rational::format(&(c * v).abs())
        )));
    }
    let plus = p.leaf_mass.iter().zip(xi).map(|(m, x)| m * (Rational::one() + c * x)).collect();
    let minus = p.leaf_mass.iter().zip(xi).map(|(m, x)| m * (Rational::one() - c * x)).collect();
    Ok((MeasureVector::new(plus), MeasureVector::new(minus)))
}

/// Splits the reference point of `set` along its first hull direction:
/// returns `(ξ, c, Q⁺, Q⁻)` with both outputs martingale measures averaging
/// back to the reference. `None` when the set is a single point.
pub fn split_along_hull(set: &EmmSet) -> Option<(Vec<Rational>, Rational, MeasureVector, MeasureVector)> {
    let direction = set.affine_basis.first()?;
    if !set.reference.is_strictly_positive() {
        return None;
    }
    let xi: Vec<Rational> = direction
        .iter()
        .zip(&set.reference.leaf_mass)
        .map(|(d, m)| d / m)
        .collect();
    let max = xi.iter().map(Signed::abs).max()?;
    let c = Rational::one() / (rational::int(4) * max);
    let (plus, minus) = split_measure(&set.reference, &xi, &c).ok()?;
    Some((xi, c, plus, minus))
}

/// Verifies `λ Q1 + (1 − λ) Q2` is again a martingale measure.
pub fn convexity_probe(
    q1: &MeasureVector,
    q2: &MeasureVector,
    lambda: &Rational,
    tree: &ScenarioTree,
    assets: &[AdaptedProcess],
) -> Result<bool, EmmError> {
    if lambda.is_negative() || *lambda > Rational::one() {
        return Err(EmmError::BadWeight(rational::format(lambda)));
    }
    let mix = q1.mix(q2, lambda);
    mix.validate(tree)?;
    for x in assets {
        if !is_martingale(tree, &mix, x, ZeroMass::Ignore)?.holds {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Whether `q` satisfies every martingale constraint (null nodes skipped).
pub fn is_martingale_measure(tree: &ScenarioTree, q: &MeasureVector, assets: &[AdaptedProcess]) -> Result<bool, EmmError> {
    q.validate(tree)?;
    for x in assets {
        if !is_martingale(tree, q, x, ZeroMass::Ignore)?.holds {
            return Ok(false);
        }
    }
    Ok(true)
}
