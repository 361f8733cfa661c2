//! Seeded random markets and processes.
//!
//! Every instance draws from its own ChaCha stream `(seed, index)`, so a
//! corpus can be generated in parallel and any single instance regenerated
//! on its own.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::linalg;
use crate::rational::{frac, int, Rational};
use crate::tree::{AdaptedProcess, MeasureVector, PredictableProcess, ScenarioTree, TreeBuilder};

pub const MAX_DEPTH: usize = 4;
pub const MAX_BRANCH: usize = 4;
pub const MAX_ASSETS: usize = 4;
pub const MAX_COUNT: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusParams {
    pub max_depth: usize,
    pub max_branch: usize,
    pub max_assets: usize,
    pub count: usize,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self { max_depth: 3, max_branch: 4, max_assets: 3, count: 200 }
    }
}

impl CorpusParams {
    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            ("max_depth", self.max_depth, MAX_DEPTH),
            ("max_branch", self.max_branch, MAX_BRANCH),
            ("max_assets", self.max_assets, MAX_ASSETS),
            ("count", self.count, MAX_COUNT),
        ];
        for (name, value, cap) in checks {
            if value == 0 || value > cap {
                return Err(format!("{name} = {value} is outside 1..={cap}"));
            }
        }
        if self.max_branch < 2 {
            return Err("max_branch must be at least 2".into());
        }
        Ok(())
    }
}

/// A generated market: tree with real-world `P`, and asset prices that are
/// martingales under a hidden strictly positive measure (not returned).
#[derive(Debug, Clone, PartialEq)]
pub struct RawMarket {
    pub tree: ScenarioTree,
    pub assets: Vec<AdaptedProcess>,
}

pub fn instance_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn random_weights(rng: &mut impl Rng, n: usize, max: i64) -> Vec<Rational> {
    let w: Vec<i64> = (0..n).map(|_| rng.gen_range(1..=max)).collect();
    let total: i64 = w.iter().sum();
    w.into_iter().map(|x| frac(x, total)).collect()
}

/// Random tree with every leaf at `depth`; branching in `1..=max_branch`,
/// mostly at least 2.
pub fn random_tree(rng: &mut impl Rng, depth: usize, max_branch: usize) -> ScenarioTree {
    let mut builder = TreeBuilder::new().root("n0");
    let mut frontier = vec!["n0".to_string()];
    let mut next = 1;
    for _ in 0..depth {
        let mut level = Vec::new();
        for parent in &frontier {
            let b = if rng.gen_range(0..8) == 0 { 1 } else { rng.gen_range(2..=max_branch) };
            for prob in random_weights(rng, b, 4) {
                let id = format!("n{next}");
                next += 1;
                builder = builder.child(parent.clone(), id.clone(), prob);
                level.push(id);
            }
        }
        frontier = level;
    }
    builder.build(Some(depth)).expect("generated tree is valid")
}

/// Strictly positive measure built from random conditional weights.
pub fn random_measure(rng: &mut impl Rng, tree: &ScenarioTree) -> MeasureVector {
    let mut cond = vec![Rational::from_integer(1.into()); tree.len()];
    for u in tree.non_leaves() {
        let kids = tree.children(u);
        for (&c, w) in kids.iter().zip(random_weights(rng, kids.len(), 5)) {
            cond[c] = w;
        }
    }
    let mut reach = cond.clone();
    for u in 1..tree.len() {
        let p = tree.parent(u).expect("non-root");
        reach[u] = &reach[p] * &cond[u];
    }
    MeasureVector::new(tree.leaves().iter().map(|&l| reach[l].clone()).collect())
}

fn conditional(tree: &ScenarioTree, q: &MeasureVector, u: usize) -> Vec<Rational> {
    let mass = q.node_mass(tree);
    tree.children(u).iter().map(|&c| &mass[c] / &mass[u]).collect()
}

fn grid_value(rng: &mut impl Rng) -> Rational {
    frac(rng.gen_range(-6..=6), 2)
}

/// Q-martingales with grid increments made mean-zero at every node. Later
/// assets sometimes copy a multiple of the first asset's increments or stay
/// flat at a node, so degenerate spans occur.
pub fn hidden_martingales(rng: &mut impl Rng, tree: &ScenarioTree, q: &MeasureVector, d: usize) -> Vec<AdaptedProcess> {
    let mut assets = vec![AdaptedProcess::new(vec![Rational::default(); tree.len()]); d];
    for asset in assets.iter_mut() {
        asset.values[0] = int(rng.gen_range(5..=10));
    }
    for u in tree.non_leaves() {
        let kids = tree.children(u).to_vec();
        let w = conditional(tree, q, u);
        let mut first: Vec<Rational> = Vec::new();
        for j in 0..d {
            let mode = if j == 0 { 0 } else { rng.gen_range(0..6) };
            let raw: Vec<Rational> = match mode {
                0..=3 => kids.iter().map(|_| grid_value(rng)).collect(),
                4 => {
                    let k = int(rng.gen_range(-2..=2));
                    first.iter().map(|x| x * &k).collect()
                }
                _ => vec![Rational::default(); kids.len()],
            };
            let mean = linalg::dot(&w, &raw);
            let steps: Vec<Rational> = raw.iter().map(|x| x - &mean).collect();
            if j == 0 {
                first = steps.clone();
            }
            let base = assets[j].values[u].clone();
            for (&c, s) in kids.iter().zip(&steps) {
                assets[j].values[c] = &base + s;
            }
        }
    }
    assets
}

/// Processes that are martingales under both `p` and `q`: increments in the
/// kernel of the two conditional laws (zero on nodes with fewer than three
/// children).
pub fn bi_martingale(rng: &mut impl Rng, tree: &ScenarioTree, p: &MeasureVector, q: &MeasureVector) -> AdaptedProcess {
    let mut x = AdaptedProcess::new(vec![Rational::default(); tree.len()]);
    x.values[0] = int(rng.gen_range(-3..=3));
    for u in tree.non_leaves() {
        let kids = tree.children(u).to_vec();
        let rows = vec![conditional(tree, p, u), conditional(tree, q, u)];
        let kernel = linalg::nullspace(&rows, kids.len());
        let mut step = vec![Rational::default(); kids.len()];
        for v in kernel {
            let k = int(rng.gen_range(-2..=2));
            for (s, e) in step.iter_mut().zip(v) {
                *s += &k * e;
            }
        }
        let base = x.values[u].clone();
        for (&c, s) in kids.iter().zip(step) {
            x.values[c] = &base + s;
        }
    }
    x
}

pub fn random_adapted(rng: &mut impl Rng, tree: &ScenarioTree) -> AdaptedProcess {
    AdaptedProcess::from_fn(tree, |_| grid_value(rng))
}

pub fn random_predictable(rng: &mut impl Rng, tree: &ScenarioTree, bound: i64) -> PredictableProcess {
    PredictableProcess::from_fn(tree, |_| frac(rng.gen_range(-bound * 4..=bound * 4), 4))
}

pub fn random_market(seed: u64, index: usize, params: &CorpusParams) -> RawMarket {
    let mut rng = instance_rng(seed, index);
    let depth = rng.gen_range(1..=params.max_depth);
    let d = rng.gen_range(1..=params.max_assets);
    let tree = random_tree(&mut rng, depth, params.max_branch);
    let hidden = random_measure(&mut rng, &tree);
    let assets = hidden_martingales(&mut rng, &tree, &hidden, d);
    RawMarket { tree, assets }
}

/// `count` markets, instance `i` drawn from stream `(seed, i)`.
pub fn generate(seed: u64, params: &CorpusParams) -> Result<Vec<RawMarket>, String> {
    params.validate()?;
    Ok((0..params.count).into_par_iter().map(|i| random_market(seed, i, params)).collect())
}
