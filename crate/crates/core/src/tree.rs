//! Scenario trees: finite filtered probability spaces and exact discrete
//! stochastic calculus on them.
//!
//! Nodes at depth `t` are the atoms of `F_t`. Node ids are dense indices in
//! breadth-first order, so a parent always precedes its children and the
//! leaves under any node form a contiguous block of the leaf list.

use std::collections::HashMap;

use num_traits::{Num, One, Signed, Zero};
use thiserror::Error;

use crate::rational::{self, Rational};

pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("node {node} has zero mass; conditional expectation is undefined there")]
    ZeroMassNode { node: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    horizon: usize,
    ids: Vec<String>,
    parent: Vec<Option<NodeId>>,
    time: Vec<usize>,
    children: Vec<Vec<NodeId>>,
    branch_prob: Vec<Rational>,
    leaves: Vec<NodeId>,
    leaf_pos: Vec<Option<usize>>,
    leaf_span: Vec<(usize, usize)>,
    index: HashMap<String, NodeId>,
}

/// Incremental construction of a [`ScenarioTree`]; validation happens in
/// [`TreeBuilder::build`].
#[derive(Debug, Default, Clone)]
pub struct TreeBuilder {
    entries: Vec<(String, Option<String>, Option<Rational>)>,
}

impl TreeBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn root(mut self, id: impl Into<String>) -> Self {
        self.entries.push((id.into(), None, None));
        self
    }

    pub fn child(mut self, parent: impl Into<String>, id: impl Into<String>, prob: Rational) -> Self {
        self.entries.push((id.into(), Some(parent.into()), Some(prob)));
        self
    }

    pub fn push(&mut self, id: String, parent: Option<String>, prob: Option<Rational>) {
        self.entries.push((id, parent, prob));
    }

    /// Validates and builds. `horizon` of `None` means "infer from depth".
    pub fn build(self, horizon: Option<usize>) -> Result<ScenarioTree, TreeError> {
        ScenarioTree::from_entries(horizon, self.entries)
    }
}

impl ScenarioTree {
    fn from_entries(
        horizon: Option<usize>,
        entries: Vec<(String, Option<String>, Option<Rational>)>,
    ) -> Result<Self, TreeError> {
        let inv = |m: String| Err(TreeError::Invariant(m));
        let mut by_name: HashMap<&str, usize> = HashMap::new();
        for (k, (id, _, _)) in entries.iter().enumerate() {
            if by_name.insert(id.as_str(), k).is_some() {
                return inv(format!("duplicate node id {id:?}"));
            }
        }
        let roots: Vec<usize> = (0..entries.len()).filter(|&k| entries[k].1.is_none()).collect();
        if roots.len() != 1 {
            return inv(format!("expected exactly one root, found {}", roots.len()));
        }
        let mut kids: Vec<Vec<usize>> = vec![Vec::new(); entries.len()];
        for (k, (id, parent, _)) in entries.iter().enumerate() {
            if let Some(p) = parent {
                match by_name.get(p.as_str()) {
                    Some(&pk) => kids[pk].push(k),
                    None => return inv(format!("node {id:?} has dangling parent {p:?}")),
                }
            }
        }

        // breadth-first renumbering
        let mut order = vec![roots[0]];
        let mut head = 0;
        while head < order.len() {
            let k = order[head];
            order.extend(kids[k].iter().copied());
            head += 1;
        }
        if order.len() != entries.len() {
            return inv("some nodes are unreachable from the root (cycle)".into());
        }
        let mut new_id = vec![0usize; entries.len()];
        for (n, &k) in order.iter().enumerate() {
            new_id[k] = n;
        }

        let n = order.len();
        let mut ids = Vec::with_capacity(n);
        let mut parent = vec![None; n];
        let mut time = vec![0usize; n];
        let mut children = vec![Vec::new(); n];
        let mut branch_prob = vec![Rational::one(); n];
        for (node, &k) in order.iter().enumerate() {
            let (id, p, prob) = &entries[k];
            ids.push(id.clone());
            if let Some(pname) = p {
                let pn = new_id[by_name[pname.as_str()]];
                parent[node] = Some(pn);
                time[node] = time[pn] + 1;
                children[pn].push(node);
                match prob {
                    Some(q) => branch_prob[node] = q.clone(),
                    None => return inv(format!("missing branch probability for {id:?}")),
                }
            } else if let Some(q) = prob {
                if !q.is_one() {
                    return inv(format!("root {id:?} carries probability {}", rational::format(q)));
                }
            }
        }

        let depth = time.iter().copied().max().unwrap_or(0);
        let horizon = horizon.unwrap_or(depth);
        for node in 0..n {
            if children[node].is_empty() {
                if time[node] != horizon {
                    return inv(format!(
                        "leaf {:?} sits at time {} but the horizon is {horizon}",
                        ids[node], time[node]
                    ));
                }
            } else {
                let mut total = Rational::zero();
                for &c in &children[node] {
                    if !branch_prob[c].is_positive() || branch_prob[c] > Rational::one() {
                        return inv(format!(
                            "branch probability of {:?} is {}, outside (0, 1]",
                            ids[c],
                            rational::format(&branch_prob[c])
                        ));
                    }
                    total += &branch_prob[c];
                }
                if !total.is_one() {
                    return inv(format!(
                        "children of {:?} have probabilities summing to {}",
                        ids[node],
                        rational::format(&total)
                    ));
                }
            }
        }

        let leaves: Vec<NodeId> = (0..n).filter(|&u| children[u].is_empty()).collect();
        let mut leaf_pos = vec![None; n];
        for (pos, &l) in leaves.iter().enumerate() {
            leaf_pos[l] = Some(pos);
        }
        let mut leaf_span = vec![(usize::MAX, 0usize); n];
        for u in (0..n).rev() {
            if let Some(pos) = leaf_pos[u] {
                leaf_span[u] = (pos, pos + 1);
            }
            if let Some(p) = parent[u] {
                let (s, e) = leaf_span[u];
                let span = &mut leaf_span[p];
                span.0 = span.0.min(s);
                span.1 = span.1.max(e);
            }
        }
        let index = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Self {
            horizon,
            ids,
            parent,
            time,
            children,
            branch_prob,
            leaves,
            leaf_pos,
            leaf_span,
            index,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn id(&self, u: NodeId) -> &str {
        &self.ids[u]
    }

    pub fn node(&self, id: &str) -> Option<NodeId> {
        self.index.get(id).copied()
    }

    pub fn time(&self, u: NodeId) -> usize {
        self.time[u]
    }

    pub fn parent(&self, u: NodeId) -> Option<NodeId> {
        self.parent[u]
    }

    pub fn children(&self, u: NodeId) -> &[NodeId] {
        &self.children[u]
    }

    pub fn is_leaf(&self, u: NodeId) -> bool {
        self.children[u].is_empty()
    }

    pub fn branch_prob(&self, u: NodeId) -> &Rational {
        &self.branch_prob[u]
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf_position(&self, u: NodeId) -> Option<usize> {
        self.leaf_pos[u]
    }

    /// Half-open range of leaf positions under `u`.
    pub fn leaf_span(&self, u: NodeId) -> std::ops::Range<usize> {
        let (s, e) = self.leaf_span[u];
        s..e
    }

    pub fn non_leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.len()).filter(move |&u| !self.is_leaf(u))
    }

    pub fn nodes_at(&self, t: usize) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.len()).filter(move |&u| self.time[u] == t)
    }

    /// Ancestor of `u` at time `s` (`u` itself when `s == time(u)`).
    pub fn ancestor_at(&self, mut u: NodeId, s: usize) -> NodeId {
        assert!(s <= self.time[u], "ancestor time beyond node time");
        while self.time[u] > s {
            u = self.parent[u].expect("non-root has a parent");
        }
        u
    }

    /// Nodes on the root-to-`u` path, root first.
    pub fn path(&self, u: NodeId) -> Vec<NodeId> {
        let mut p = vec![u];
        let mut v = u;
        while let Some(q) = self.parent[v] {
            p.push(q);
            v = q;
        }
        p.reverse();
        p
    }

    /// Unconditional P-probability of reaching each node (tree branch probabilities).
    pub fn reach_prob(&self) -> Vec<Rational> {
        let mut out = vec![Rational::one(); self.len()];
        for u in 1..self.len() {
            let p = self.parent[u].expect("non-root");
            out[u] = &out[p] * &self.branch_prob[u];
        }
        out
    }

    pub fn check_adapted<T>(&self, x: &AdaptedProcess<T>) -> Result<(), TreeError> {
        if x.values.len() != self.len() {
            return Err(TreeError::Shape(format!(
                "process has {} values for a tree of {} nodes",
                x.values.len(),
                self.len()
            )));
        }
        Ok(())
    }

    pub fn check_predictable<T>(&self, f: &PredictableProcess<T>) -> Result<(), TreeError> {
        if f.values.len() != self.len() {
            return Err(TreeError::Shape(format!(
                "predictable process has {} values for a tree of {} nodes",
                f.values.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

/// One value per node; `F_t`-measurability is structural.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess<T = Rational> {
    pub values: Vec<T>,
}

/// One value per non-leaf node `u`, applied on the step out of `u`.
/// Entries at leaves are carried but never read.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictableProcess<T = Rational> {
    pub values: Vec<T>,
}

impl<T: Clone> AdaptedProcess<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn constant(tree: &ScenarioTree, c: T) -> Self {
        Self { values: vec![c; tree.len()] }
    }

    pub fn from_fn(tree: &ScenarioTree, f: impl FnMut(NodeId) -> T) -> Self {
        Self { values: (0..tree.len()).map(f).collect() }
    }

    pub fn at(&self, u: NodeId) -> &T {
        &self.values[u]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> AdaptedProcess<U> {
        AdaptedProcess { values: self.values.iter().map(f).collect() }
    }

    /// Values at the leaves, in leaf order.
    pub fn terminal(&self, tree: &ScenarioTree) -> Vec<T> {
        tree.leaves().iter().map(|&l| self.values[l].clone()).collect()
    }
}

impl<T: Clone + Zero> PredictableProcess<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn constant(tree: &ScenarioTree, c: T) -> Self {
        Self::from_fn(tree, |_| c.clone())
    }

    /// Builds from a function of the non-leaf node; leaves get zero.
    pub fn from_fn(tree: &ScenarioTree, mut f: impl FnMut(NodeId) -> T) -> Self {
        Self {
            values: (0..tree.len())
                .map(|u| if tree.is_leaf(u) { T::zero() } else { f(u) })
                .collect(),
        }
    }

    pub fn at(&self, u: NodeId) -> &T {
        &self.values[u]
    }

    pub fn map<U: Clone + Zero>(&self, f: impl FnMut(&T) -> U) -> PredictableProcess<U> {
        PredictableProcess { values: self.values.iter().map(f).collect() }
    }
}

impl AdaptedProcess<Rational> {
    pub fn to_f64(&self) -> AdaptedProcess<f64> {
        self.map(rational::to_f64)
    }
}

impl PredictableProcess<Rational> {
    pub fn to_f64(&self) -> PredictableProcess<f64> {
        self.map(rational::to_f64)
    }
}

/// Leaf masses of a probability measure on the tree's terminal atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureVector {
    pub leaf_mass: Vec<Rational>,
}

impl MeasureVector {
    pub fn new(leaf_mass: Vec<Rational>) -> Self {
        Self { leaf_mass }
    }

    /// The measure induced by the tree's branch probabilities.
    pub fn from_tree(tree: &ScenarioTree) -> Self {
        let reach = tree.reach_prob();
        Self { leaf_mass: tree.leaves().iter().map(|&l| reach[l].clone()).collect() }
    }

    /// Checks length, nonnegativity and total mass one.
    pub fn validate(&self, tree: &ScenarioTree) -> Result<(), TreeError> {
        if self.leaf_mass.len() != tree.leaf_count() {
            return Err(TreeError::Shape(format!(
                "measure has {} masses for {} leaves",
                self.leaf_mass.len(),
                tree.leaf_count()
            )));
        }
        if let Some(pos) = self.leaf_mass.iter().position(Signed::is_negative) {
            return Err(TreeError::Invariant(format!(
                "negative mass at leaf {:?}",
                tree.id(tree.leaves()[pos])
            )));
        }
        let total: Rational = self.leaf_mass.iter().sum();
        if !total.is_one() {
            return Err(TreeError::Invariant(format!(
                "measure has total mass {}",
                rational::format(&total)
            )));
        }
        Ok(())
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.leaf_mass.iter().all(Signed::is_positive)
    }

    /// Mass of each node's subtree.
    pub fn node_mass(&self, tree: &ScenarioTree) -> Vec<Rational> {
        (0..tree.len())
            .map(|u| self.leaf_mass[tree.leaf_span(u)].iter().sum())
            .collect()
    }

    pub fn expectation(&self, leaf_values: &[Rational]) -> Rational {
        crate::linalg::dot(&self.leaf_mass, leaf_values)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.leaf_mass.iter().map(rational::to_f64).collect()
    }

    /// Convex combination `λ·self + (1 − λ)·other`.
    pub fn mix(&self, other: &Self, lambda: &Rational) -> Self {
        let mu = Rational::one() - lambda;
        Self {
            leaf_mass: self
                .leaf_mass
                .iter()
                .zip(&other.leaf_mass)
                .map(|(a, b)| lambda * a + &mu * b)
                .collect(),
        }
    }
}

/// How to treat nodes whose subtree carries zero mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroMass {
    /// Conditioning on a null node is an error.
    #[default]
    Reject,
    /// Absolutely-continuous convention: value 0 at null nodes; martingale
    /// checks skip them.
    Ignore,
}

/// Stopping time given by per-node flags; its value on a path is the first
/// flagged time, or the horizon when nothing is flagged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoppingTime {
    pub stop_at: Vec<bool>,
}

impl StoppingTime {
    pub fn new(stop_at: Vec<bool>) -> Self {
        Self { stop_at }
    }

    /// Never flagged: saturates at the horizon.
    pub fn horizon(tree: &ScenarioTree) -> Self {
        Self { stop_at: vec![false; tree.len()] }
    }

    /// Deterministic time `t ∧ T`.
    pub fn constant(tree: &ScenarioTree, t: usize) -> Self {
        let t = t.min(tree.horizon());
        Self { stop_at: (0..tree.len()).map(|u| tree.time(u) == t).collect() }
    }

    /// `true` when the path through `u` has already stopped at or before `time(u)`.
    pub fn stopped_by(&self, tree: &ScenarioTree) -> Vec<bool> {
        let mut out = vec![false; tree.len()];
        for u in 0..tree.len() {
            let inherited = tree.parent(u).is_some_and(|p| out[p]);
            out[u] = inherited || self.stop_at[u] || tree.time(u) == tree.horizon();
        }
        out
    }

    /// Stopping node on the path to `leaf` (first flagged ancestor, else the leaf).
    pub fn stop_node(&self, tree: &ScenarioTree, leaf: NodeId) -> NodeId {
        tree.path(leaf)
            .into_iter()
            .find(|&u| self.stop_at[u])
            .unwrap_or(leaf)
    }

    /// τ on the path through each leaf, in leaf order.
    pub fn values(&self, tree: &ScenarioTree) -> Vec<usize> {
        tree.leaves().iter().map(|&l| tree.time(self.stop_node(tree, l))).collect()
    }

    /// Pathwise `self ≤ other`.
    pub fn le(&self, other: &Self, tree: &ScenarioTree) -> bool {
        self.values(tree).iter().zip(other.values(tree)).all(|(a, b)| *a <= b)
    }

    /// Predictable indicator of the step out of `u` lying in `[0, τ]`.
    pub fn active_steps(&self, tree: &ScenarioTree) -> Vec<bool> {
        self.stopped_by(tree).into_iter().map(|s| !s).collect()
    }
}

/// `E_Q[ξ | F_{s ∧ t}]` at every node (time `s`): a Q-martingale frozen after `t`.
pub fn condexp(
    tree: &ScenarioTree,
    q: &MeasureVector,
    xi: &[Rational],
    t: usize,
    zero_mass: ZeroMass,
) -> Result<AdaptedProcess, TreeError> {
    if xi.len() != tree.leaf_count() {
        return Err(TreeError::Shape(format!(
            "claim has {} values for {} leaves",
            xi.len(),
            tree.leaf_count()
        )));
    }
    let t = t.min(tree.horizon());
    let mut values = vec![Rational::zero(); tree.len()];
    for u in 0..tree.len() {
        if tree.time(u) > t {
            continue;
        }
        let span = tree.leaf_span(u);
        let mass: Rational = q.leaf_mass[span.clone()].iter().sum();
        if mass.is_zero() {
            match zero_mass {
                ZeroMass::Reject => return Err(TreeError::ZeroMassNode { node: tree.id(u).to_string() }),
                ZeroMass::Ignore => continue,
            }
        }
        let weighted = crate::linalg::dot(&q.leaf_mass[span.clone()], &xi[span]);
        values[u] = weighted / mass;
    }
    for u in 0..tree.len() {
        if tree.time(u) > t {
            values[u] = values[tree.ancestor_at(u, t)].clone();
        }
    }
    Ok(AdaptedProcess { values })
}

/// The Q-martingale `E_Q[ξ | F_t]`, `t = 0..T`.
pub fn martingale_of(tree: &ScenarioTree, q: &MeasureVector, xi: &[Rational]) -> Result<AdaptedProcess, TreeError> {
    condexp(tree, q, xi, tree.horizon(), ZeroMass::Reject)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleVerdict {
    pub holds: bool,
    pub worst_node: Option<NodeId>,
    /// Signed drift `Σ_c Q(c|u) X(c) − X(u)` at the worst node.
    pub worst_violation: Rational,
}

/// Exact one-step martingale test at every non-leaf node.
pub fn is_martingale(
    tree: &ScenarioTree,
    q: &MeasureVector,
    x: &AdaptedProcess,
    zero_mass: ZeroMass,
) -> Result<MartingaleVerdict, TreeError> {
    tree.check_adapted(x)?;
    let mass = q.node_mass(tree);
    let mut verdict = MartingaleVerdict { holds: true, worst_node: None, worst_violation: Rational::zero() };
    for u in tree.non_leaves() {
        if mass[u].is_zero() {
            match zero_mass {
                ZeroMass::Reject => return Err(TreeError::ZeroMassNode { node: tree.id(u).to_string() }),
                ZeroMass::Ignore => continue,
            }
        }
        let drift = tree
            .children(u)
            .iter()
            .filter(|&&c| !mass[c].is_zero())
            .fold(Rational::zero(), |acc, &c| acc + &mass[c] * (&x.values[c] - &x.values[u]))
            / &mass[u];
        if !drift.is_zero() && drift.abs() > verdict.worst_violation.abs() {
            verdict.holds = false;
            verdict.worst_node = Some(u);
            verdict.worst_violation = drift;
        }
    }
    Ok(verdict)
}

/// Discrete stochastic integral `(f·X)_t = Σ_{s<t} f_s (X_{s+1} − X_s)`, zero at the root.
pub fn stoch_integral<T: Num + Clone>(
    tree: &ScenarioTree,
    f: &PredictableProcess<T>,
    x: &AdaptedProcess<T>,
) -> AdaptedProcess<T> {
    let mut values = vec![T::zero(); tree.len()];
    for u in 1..tree.len() {
        let p = tree.parent(u).expect("non-root");
        let step = f.values[p].clone() * (x.values[u].clone() - x.values[p].clone());
        values[u] = values[p].clone() + step;
    }
    AdaptedProcess { values }
}

/// Pathwise quadratic covariation `[X, Y]_t = Σ_{s<t} ΔX ΔY`.
pub fn quad_covar<T: Num + Clone>(
    tree: &ScenarioTree,
    x: &AdaptedProcess<T>,
    y: &AdaptedProcess<T>,
) -> AdaptedProcess<T> {
    let mut values = vec![T::zero(); tree.len()];
    for u in 1..tree.len() {
        let p = tree.parent(u).expect("non-root");
        let dx = x.values[u].clone() - x.values[p].clone();
        let dy = y.values[u].clone() - y.values[p].clone();
        values[u] = values[p].clone() + dx * dy;
    }
    AdaptedProcess { values }
}

/// `X_{t ∧ τ}`.
pub fn stop_process<T: Clone>(tree: &ScenarioTree, x: &AdaptedProcess<T>, tau: &StoppingTime) -> AdaptedProcess<T> {
    let mut frozen: Vec<Option<NodeId>> = vec![None; tree.len()];
    for u in 0..tree.len() {
        let inherited = tree.parent(u).and_then(|p| frozen[p]);
        frozen[u] = inherited.or(if tau.stop_at[u] { Some(u) } else { None });
    }
    AdaptedProcess {
        values: (0..tree.len()).map(|u| x.values[frozen[u].unwrap_or(u)].clone()).collect(),
    }
}

/// Zeroes a predictable process on steps after τ (`f 1_{[0, τ]}`).
pub fn stop_integrand<T: Clone + Zero>(
    tree: &ScenarioTree,
    f: &PredictableProcess<T>,
    tau: &StoppingTime,
) -> PredictableProcess<T> {
    let active = tau.active_steps(tree);
    PredictableProcess {
        values: f
            .values
            .iter()
            .zip(active)
            .map(|(v, a)| if a { v.clone() } else { T::zero() })
            .collect(),
    }
}

/// Flags the first node on each path where `U_t ≥ k` or `U_{t−1} ≥ k`, with
/// no time cap.
pub fn first_hit(tree: &ScenarioTree, u: &AdaptedProcess, k: &Rational) -> StoppingTime {
    let mut stop_at = vec![false; tree.len()];
    let mut done = vec![false; tree.len()];
    for n in 0..tree.len() {
        let parent = tree.parent(n);
        if parent.is_some_and(|p| done[p]) {
            done[n] = true;
            continue;
        }
        let left_limit = parent.is_some_and(|p| u.values[p] >= *k);
        if u.values[n] >= *k || left_limit {
            stop_at[n] = true;
            done[n] = true;
        }
    }
    StoppingTime { stop_at }
}

/// `σ_k = inf{t : U_t ≥ k or U_{t−} ≥ k} ∧ k`, with the time cap taken as
/// `⌊k⌋ ∧ T` on the integer grid.
pub fn first_hitting_stop(tree: &ScenarioTree, u: &AdaptedProcess, k: &Rational) -> StoppingTime {
    let hit = first_hit(tree, u, k);
    let cap = rational::floor_to_i64(k).clamp(0, tree.horizon() as i64) as usize;
    let mut stop_at = vec![false; tree.len()];
    let mut done = vec![false; tree.len()];
    for n in 0..tree.len() {
        if tree.parent(n).is_some_and(|p| done[p]) {
            done[n] = true;
            continue;
        }
        if hit.stop_at[n] || tree.time(n) == cap {
            stop_at[n] = true;
            done[n] = true;
        }
    }
    StoppingTime { stop_at }
}

/// Integrability of `f` against `X`; every predictable process qualifies on a
/// finite tree. Kept so call sites state the precondition.
pub fn is_admissible<T>(tree: &ScenarioTree, f: &PredictableProcess<T>) -> bool {
    f.values.len() == tree.len()
}

/// `Σ_j ∫ f^j dM^j`.
pub fn sum_integrals<T: Num + Clone>(
    tree: &ScenarioTree,
    integrands: &[PredictableProcess<T>],
    assets: &[AdaptedProcess<T>],
) -> AdaptedProcess<T> {
    let mut total = AdaptedProcess { values: vec![T::zero(); tree.len()] };
    for (f, m) in integrands.iter().zip(assets) {
        let part = stoch_integral(tree, f, m);
        for (t, v) in total.values.iter_mut().zip(part.values) {
            *t = t.clone() + v;
        }
    }
    total
}

pub fn add<T: Num + Clone>(a: &AdaptedProcess<T>, b: &AdaptedProcess<T>) -> AdaptedProcess<T> {
    AdaptedProcess { values: a.values.iter().zip(&b.values).map(|(x, y)| x.clone() + y.clone()).collect() }
}

pub fn sub<T: Num + Clone>(a: &AdaptedProcess<T>, b: &AdaptedProcess<T>) -> AdaptedProcess<T> {
    AdaptedProcess { values: a.values.iter().zip(&b.values).map(|(x, y)| x.clone() - y.clone()).collect() }
}

pub fn scale<T: Num + Clone>(a: &AdaptedProcess<T>, c: &T) -> AdaptedProcess<T> {
    AdaptedProcess { values: a.values.iter().map(|x| x.clone() * c.clone()).collect() }
}

/// `X − X_0`.
pub fn centered<T: Num + Clone>(a: &AdaptedProcess<T>) -> AdaptedProcess<T> {
    let x0 = a.values[0].clone();
    AdaptedProcess { values: a.values.iter().map(|x| x.clone() - x0.clone()).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{frac, int};

    fn binomial() -> ScenarioTree {
        TreeBuilder::new()
            .root("0")
            .child("0", "u", frac(1, 2))
            .child("0", "d", frac(1, 2))
            .build(Some(1))
            .unwrap()
    }

    fn x_binomial() -> AdaptedProcess {
        AdaptedProcess::new(vec![int(1), int(2), frac(1, 2)])
    }

    #[test]
    fn builder_rejects_bad_probabilities() {
        let err = TreeBuilder::new()
            .root("0")
            .child("0", "a", frac(1, 3))
            .child("0", "b", frac(1, 3))
            .build(None)
            .unwrap_err();
        assert!(matches!(err, TreeError::Invariant(_)));
    }

    #[test]
    fn builder_rejects_short_leaf_and_dangling_parent() {
        let short = TreeBuilder::new()
            .root("0")
            .child("0", "a", frac(1, 2))
            .child("0", "b", frac(1, 2))
            .child("a", "aa", int(1))
            .build(None);
        assert!(matches!(short, Err(TreeError::Invariant(_))));
        let dangling = TreeBuilder::new().root("0").child("zz", "a", int(1)).build(None);
        assert!(matches!(dangling, Err(TreeError::Invariant(_))));
    }

    #[test]
    fn condexp_binomial() {
        let tree = binomial();
        let q = MeasureVector::new(vec![frac(1, 3), frac(2, 3)]);
        let z = condexp(&tree, &q, &[int(1), int(0)], 0, ZeroMass::Reject).unwrap();
        assert_eq!(z.values[0], frac(1, 3));
        // frozen after t = 0
        assert_eq!(z.values[1], frac(1, 3));
        let full = condexp(&tree, &q, &[int(1), int(0)], 1, ZeroMass::Reject).unwrap();
        assert_eq!(full.terminal(&tree), vec![int(1), int(0)]);
    }

    #[test]
    fn condexp_zero_mass_modes() {
        let tree = binomial();
        let q = MeasureVector::new(vec![int(1), int(0)]);
        let err = condexp(&tree, &q, &[int(3), int(5)], 1, ZeroMass::Reject).unwrap_err();
        assert!(matches!(err, TreeError::ZeroMassNode { .. }));
        let ok = condexp(&tree, &q, &[int(3), int(5)], 1, ZeroMass::Ignore).unwrap();
        assert_eq!(ok.values, vec![int(3), int(3), int(0)]);
    }

    #[test]
    fn martingale_checks() {
        let tree = binomial();
        let x = x_binomial();
        let q = MeasureVector::new(vec![frac(1, 3), frac(2, 3)]);
        assert!(is_martingale(&tree, &q, &x, ZeroMass::Reject).unwrap().holds);
        let p = MeasureVector::from_tree(&tree);
        let v = is_martingale(&tree, &p, &x, ZeroMass::Reject).unwrap();
        assert!(!v.holds);
        assert_eq!(v.worst_node, Some(0));
        assert_eq!(v.worst_violation, frac(1, 4));
        let c = AdaptedProcess::constant(&tree, int(9));
        assert!(is_martingale(&tree, &p, &c, ZeroMass::Reject).unwrap().holds);
    }

    #[test]
    fn integral_and_covariation_examples() {
        let tree = binomial();
        let x = x_binomial();
        let f = PredictableProcess::constant(&tree, frac(2, 3));
        assert_eq!(stoch_integral(&tree, &f, &x).values, vec![int(0), frac(2, 3), frac(-1, 3)]);
        let one = PredictableProcess::constant(&tree, int(1));
        assert_eq!(stoch_integral(&tree, &one, &x), centered(&x));
        let zero = PredictableProcess::constant(&tree, int(0));
        assert!(stoch_integral(&tree, &zero, &x).values.iter().all(Zero::is_zero));
        assert_eq!(quad_covar(&tree, &x, &x).values, vec![int(0), int(1), frac(1, 4)]);
        let c = AdaptedProcess::constant(&tree, int(4));
        assert!(quad_covar(&tree, &c, &c).values.iter().all(Zero::is_zero));
    }

    fn two_period() -> ScenarioTree {
        TreeBuilder::new()
            .root("r")
            .child("r", "u", frac(1, 2))
            .child("r", "d", frac(1, 2))
            .child("u", "uu", frac(1, 4))
            .child("u", "ud", frac(3, 4))
            .child("d", "du", frac(1, 2))
            .child("d", "dd", frac(1, 2))
            .build(None)
            .unwrap()
    }

    #[test]
    fn stopping_examples() {
        let tree = two_period();
        let x = AdaptedProcess::new((0..7).map(|i| int(i * i)).collect());
        assert_eq!(stop_process(&tree, &x, &StoppingTime::horizon(&tree)), x);
        let at_zero = stop_process(&tree, &x, &StoppingTime::constant(&tree, 0));
        assert!(at_zero.values.iter().all(|v| *v == x.values[0]));
        let u = tree.node("u").unwrap();
        let mut flags = vec![false; tree.len()];
        flags[u] = true;
        let stopped = stop_process(&tree, &x, &StoppingTime::new(flags));
        for leaf in ["uu", "ud"] {
            assert_eq!(stopped.values[tree.node(leaf).unwrap()], x.values[u]);
        }
        let dd = tree.node("dd").unwrap();
        assert_eq!(stopped.values[dd], x.values[dd]);
    }

    #[test]
    fn hitting_examples() {
        let tree = binomial();
        let x = x_binomial();
        let qv = quad_covar(&tree, &x, &x);
        let hit = first_hit(&tree, &qv, &frac(1, 2));
        assert_eq!(hit.stop_at, vec![false, true, false]);
        assert_eq!(hit.values(&tree), vec![1, 1]);
        // the ∧k cap at ⌊1/2⌋ = 0 stops everything at the root
        let capped = first_hitting_stop(&tree, &qv, &frac(1, 2));
        assert_eq!(capped.values(&tree), vec![0, 0]);
        // never hit: cap min(⌊k⌋, T)
        let two = two_period();
        let z = AdaptedProcess::constant(&two, int(0));
        assert_eq!(first_hitting_stop(&two, &z, &frac(3, 2)).values(&two), vec![1; 4]);
        assert_eq!(first_hitting_stop(&two, &z, &int(7)).values(&two), vec![2; 4]);
        // hit at root
        let high = AdaptedProcess::constant(&two, int(9));
        assert_eq!(first_hitting_stop(&two, &high, &int(5)).values(&two), vec![0; 4]);
    }

    #[test]
    fn tree_shape_two_period() {
        let tree = two_period();
        assert_eq!(tree.len(), 7);
        assert_eq!(tree.horizon(), 2);
        assert_eq!(tree.leaf_count(), 4);
        assert_eq!(tree.leaf_span(tree.node("d").unwrap()), 2..4);
        let p = MeasureVector::from_tree(&tree);
        assert_eq!(p.leaf_mass, vec![frac(1, 8), frac(3, 8), frac(1, 4), frac(1, 4)]);
        p.validate(&tree).unwrap();
    }
}
