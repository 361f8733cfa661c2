//! Hedging and market completeness.
//!
//! A market is complete when every claim is `c + ∫ f dY` for a bounded fund
//! `Y` of the traded assets, and this holds exactly when the equivalent
//! martingale measure is unique. Both sides are computed independently and
//! compared, together with extremality of the reference measure.

use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{self, CorpusParams, RawMarket};
use crate::emm::{self, EmmError, EmmMode};
use crate::io::{self, TreeDocument};
use crate::rational::{self, Rational};
use crate::representation::{self, RepresentationError};
use crate::sigma;
use crate::tree::{
    is_martingale, martingale_of, stoch_integral, AdaptedProcess, MeasureVector, NodeId, PredictableProcess,
    ScenarioTree, TreeError, ZeroMass,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SftError {
    #[error("claim is not hedgeable: increments at node {node} leave the asset span")]
    NotHedgeable { node: String },
    #[error("claim value at leaf {leaf} exceeds the bound")]
    ClaimOutOfBound { leaf: String },
    #[error("bad corpus parameters: {0}")]
    BadParams(String),
    #[error("market is invalid: {0}")]
    BadMarket(String),
    #[error(transparent)]
    Emm(#[from] EmmError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Representation(#[from] RepresentationError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketInstance {
    pub tree: ScenarioTree,
    pub p: MeasureVector,
    pub assets: Vec<AdaptedProcess>,
    pub names: Vec<String>,
}

impl MarketInstance {
    pub fn new(tree: ScenarioTree, assets: Vec<AdaptedProcess>, names: Vec<String>) -> Result<Self, SftError> {
        let p = MeasureVector::from_tree(&tree);
        if !p.is_strictly_positive() {
            return Err(SftError::BadMarket("P must be strictly positive".into()));
        }
        if assets.is_empty() {
            return Err(SftError::Emm(EmmError::NoAssets));
        }
        let set = emm::emm_affine_hull(&tree, &assets, EmmMode::Equivalent)?;
        if !set.strictly_positive_point_exists {
            return Err(SftError::Emm(EmmError::NoEsmm));
        }
        Ok(Self { tree, p, assets, names })
    }

    pub fn from_document(doc: &TreeDocument) -> Result<Self, SftError> {
        let assets = doc.assets()?;
        Self::new(doc.tree.clone(), assets, doc.asset_names.clone())
    }

    pub fn from_raw(raw: RawMarket) -> Result<Self, SftError> {
        let names = (1..=raw.assets.len()).map(|j| format!("X{j}")).collect();
        Self::new(raw.tree, raw.assets, names)
    }

    pub fn reference_measure(&self) -> Result<MeasureVector, SftError> {
        Ok(emm::emm_affine_hull(&self.tree, &self.assets, EmmMode::Equivalent)?.reference)
    }

    pub fn to_json(&self) -> Value {
        let named: Vec<(String, AdaptedProcess)> = self.names.iter().cloned().zip(self.assets.iter().cloned()).collect();
        let mut v = io::tree_to_json(&self.tree, &named);
        v["assets"] = json!(self.names);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HedgeResult {
    pub c: Rational,
    /// Fund weights `g^j`, bounded by one.
    pub weights: Vec<PredictableProcess>,
    pub fund: AdaptedProcess,
    pub outer: PredictableProcess,
    /// Direct integrands `Σ_j ∫ direct^j dX^j = ∫ f dY`.
    pub direct: Vec<PredictableProcess>,
    pub gains: AdaptedProcess,
    pub max_abs_gain: Rational,
    pub bound_ok: bool,
    pub pricing_measure: MeasureVector,
}

impl HedgeResult {
    pub fn to_json(&self, tree: &ScenarioTree) -> Value {
        json!({
            "hedgeable": true,
            "c": io::rational_value(&self.c),
            "fund_weights": self.weights.iter().map(|g| io::predictable_json(tree, g)).collect::<Vec<_>>(),
            "direct_integrands": self.direct.iter().map(|g| io::predictable_json(tree, g)).collect::<Vec<_>>(),
            "outer_integrand": io::predictable_json(tree, &self.outer),
            "fund": io::adapted_json(tree, &self.fund),
            "gains": io::adapted_json(tree, &self.gains),
            "max_abs_gain": io::rational_value(&self.max_abs_gain),
            "bound_ok": self.bound_ok,
            "pricing_measure": io::leaf_values_json(tree, &self.pricing_measure.leaf_mass),
        })
    }
}

/// Replicates `ξ` as `c + ∫ f dY` under the reference martingale measure.
pub fn hedge_claim(market: &MarketInstance, xi: &[Rational], bound: &Rational) -> Result<HedgeResult, SftError> {
    let tree = &market.tree;
    if xi.len() != tree.leaf_count() {
        return Err(SftError::Tree(TreeError::Shape(format!(
            "claim has {} values for {} leaves",
            xi.len(),
            tree.leaf_count()
        ))));
    }
    if let Some(i) = xi.iter().position(|v| v.abs() > *bound) {
        return Err(SftError::ClaimOutOfBound { leaf: tree.id(tree.leaves()[i]).to_string() });
    }
    let q = market.reference_measure()?;
    let m = martingale_of(tree, &q, xi)?;
    let direct = match representation::represent_one_stage(tree, &m, &market.assets, &q) {
        Ok(g) => g,
        Err(RepresentationError::NotRepresentable { node, .. }) => return Err(SftError::NotHedgeable { node }),
        Err(e) => return Err(e.into()),
    };
    let fund = representation::fundify(tree, &direct, &market.assets);
    let gains = stoch_integral(tree, &fund.scale, &fund.fund);
    let c = m.values[tree.root()].clone();
    for (&l, target) in tree.leaves().iter().zip(xi) {
        assert_eq!(&c + &gains.values[l], *target, "replication must be exact at every leaf");
    }
    let max_abs_gain = gains.values.iter().map(Signed::abs).max().unwrap_or_default();
    let bound_ok = max_abs_gain <= rational::int(2) * bound;
    assert!(bound_ok, "gains of a replicated bounded claim stay within 2K");
    Ok(HedgeResult {
        c,
        weights: fund.weights,
        fund: fund.fund,
        outer: fund.scale,
        direct,
        gains,
        max_abs_gain,
        bound_ok,
        pricing_measure: q,
    })
}

fn indicator(n: usize, i: usize) -> Vec<Rational> {
    (0..n).map(|k| if k == i { Rational::one() } else { Rational::zero() }).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FtapVerdict {
    pub complete: bool,
    pub unique_esmm: bool,
    pub agree: bool,
    /// First leaf indicator that fails, with the blocking node.
    pub unhedgeable: Option<(NodeId, String)>,
}

impl FtapVerdict {
    pub fn to_json(&self, tree: &ScenarioTree) -> Value {
        json!({
            "complete": self.complete,
            "unique_esmm": self.unique_esmm,
            "agree": self.agree,
            "unhedgeable_indicator": self.unhedgeable.as_ref().map(|(l, n)| json!({"leaf": tree.id(*l), "node": n})),
        })
    }
}

/// Completeness (all leaf indicators hedgeable) against uniqueness of the
/// equivalent martingale measure.
pub fn second_ftap_verdict(market: &MarketInstance) -> Result<FtapVerdict, SftError> {
    let tree = &market.tree;
    let n = tree.leaf_count();
    let mut unhedgeable = None;
    for (i, &leaf) in tree.leaves().iter().enumerate() {
        match hedge_claim(market, &indicator(n, i), &Rational::one()) {
            Ok(_) => {}
            Err(SftError::NotHedgeable { node }) => {
                unhedgeable = Some((leaf, node));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let complete = unhedgeable.is_none();
    let unique_esmm = emm::is_unique_esmm(tree, &market.assets)?;
    Ok(FtapVerdict { complete, unique_esmm, agree: complete == unique_esmm, unhedgeable })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crosscheck {
    /// (i′) every leaf indicator is representable under the reference measure.
    pub representable: bool,
    /// (iv′) the reference measure is extreme (fraction-free rank test).
    pub extreme: bool,
    /// (v′) the absolutely continuous martingale measures form a single point.
    pub abs_continuous_singleton: bool,
    /// (vi′) the equivalent martingale measure is unique (RREF nullspace).
    pub unique: bool,
    pub agree: bool,
    /// When not extreme, two martingale measures averaging to the reference.
    pub split: Option<(MeasureVector, MeasureVector)>,
}

impl Crosscheck {
    pub fn to_json(&self, tree: &ScenarioTree) -> Value {
        json!({
            "i_bounded_representation": self.representable,
            "ii_uniformly_integrable_representation": self.representable,
            "iii_sigma_martingale_representation": self.representable,
            "iv_extreme": self.extreme,
            "v_abs_continuous_singleton": self.abs_continuous_singleton,
            "vi_unique_esmm": self.unique,
            "agree": self.agree,
            "note": "on a finite tree every martingale is bounded and sigma-martingales are martingales, so (ii) and (iii) coincide with (i)",
            "split": self.split.as_ref().map(|(a, b)| json!([
                io::leaf_values_json(tree, &a.leaf_mass),
                io::leaf_values_json(tree, &b.leaf_mass),
            ])),
        })
    }
}

/// Computes the conditions of the representation theorem by separate routes.
pub fn theorem56_crosscheck(market: &MarketInstance) -> Result<Crosscheck, SftError> {
    let tree = &market.tree;
    let set = emm::emm_affine_hull(tree, &market.assets, EmmMode::Equivalent)?;
    let q = set.reference.clone();
    let n = tree.leaf_count();
    let mut representable = true;
    for i in 0..n {
        let m = representation::kt_membership(tree, &indicator(n, i), &market.assets, &q)?;
        if !m.representable {
            representable = false;
            break;
        }
    }
    let extreme = emm::is_extreme(&q, tree, &market.assets)?;
    let abs = emm::emm_affine_hull(tree, &market.assets, EmmMode::AbsContinuous)?;
    let abs_continuous_singleton = abs.is_unique();
    let unique = emm::is_unique_esmm(tree, &market.assets)?;
    let split = if extreme {
        None
    } else {
        emm::split_along_hull(&set).map(|(_, _, plus, minus)| (plus, minus))
    };
    let agree = representable == extreme && extreme == unique && unique == abs_continuous_singleton;
    Ok(Crosscheck { representable, extreme, abs_continuous_singleton, unique, agree, split })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub depth: usize,
    pub leaves: usize,
    pub assets: usize,
    pub ftap: FtapVerdict,
    pub crosscheck: Crosscheck,
    /// `sigma_witness` and `is_martingale` agree for every asset under `P`
    /// and under the reference measure.
    pub sigma_collapse: bool,
}

impl SweepRow {
    pub fn passed(&self) -> bool {
        self.ftap.agree && self.crosscheck.agree && self.sigma_collapse
    }

    pub fn to_json(&self, market: &MarketInstance) -> Value {
        json!({
            "index": self.index,
            "depth": self.depth,
            "leaves": self.leaves,
            "assets": self.assets,
            "complete": self.ftap.complete,
            "unique_esmm": self.ftap.unique_esmm,
            "agree": self.ftap.agree,
            "crosscheck": self.crosscheck.to_json(&market.tree),
            "sigma_collapse": self.sigma_collapse,
        })
    }
}

pub fn sigma_collapse(market: &MarketInstance) -> Result<bool, SftError> {
    let q = market.reference_measure()?;
    for measure in [&market.p, &q] {
        for x in &market.assets {
            let witness = sigma::sigma_witness(&market.tree, measure, x).map_err(|e| match e {
                sigma::SigmaError::Tree(t) => SftError::Tree(t),
                other => SftError::BadMarket(other.to_string()),
            })?;
            let plain = is_martingale(&market.tree, measure, x, ZeroMass::Reject)?.holds;
            if witness.verdict != plain {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

pub fn sweep_one(index: usize, market: &MarketInstance) -> Result<SweepRow, SftError> {
    Ok(SweepRow {
        index,
        depth: market.tree.horizon(),
        leaves: market.tree.leaf_count(),
        assets: market.assets.len(),
        ftap: second_ftap_verdict(market)?,
        crosscheck: theorem56_crosscheck(market)?,
        sigma_collapse: sigma_collapse(market)?,
    })
}

/// Generates the corpus and validates every instance as a market.
pub fn corpus_generate(seed: u64, params: &CorpusParams) -> Result<Vec<MarketInstance>, SftError> {
    let raw = corpus::generate(seed, params).map_err(SftError::BadParams)?;
    raw.into_par_iter().map(MarketInstance::from_raw).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub instances: usize,
    pub agreements: usize,
    pub failures: usize,
    pub complete: usize,
}

impl SweepSummary {
    pub fn to_json(&self) -> Value {
        json!({
            "instances": self.instances,
            "agreements": self.agreements,
            "failures": self.failures,
            "complete": self.complete,
        })
    }
}

pub fn sweep(markets: &[MarketInstance]) -> Result<(Vec<SweepRow>, SweepSummary), SftError> {
    let rows: Vec<SweepRow> = markets
        .par_iter()
        .enumerate()
        .map(|(i, m)| sweep_one(i, m))
        .collect::<Result<_, _>>()?;
    let agreements = rows.iter().filter(|r| r.passed()).count();
    let summary = SweepSummary {
        instances: rows.len(),
        agreements,
        failures: rows.len() - agreements,
        complete: rows.iter().filter(|r| r.ftap.complete).count(),
    };
    Ok((rows, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{frac, int};
    use crate::tree::TreeBuilder;

    fn binomial() -> MarketInstance {
        let tree = TreeBuilder::new()
            .root("0")
            .child("0", "u", frac(1, 2))
            .child("0", "d", frac(1, 2))
            .build(Some(1))
            .unwrap();
        let x = AdaptedProcess::new(vec![int(1), int(2), frac(1, 2)]);
        MarketInstance::new(tree, vec![x], vec!["X".into()]).unwrap()
    }

    fn trinomial(two_assets: bool) -> MarketInstance {
        let tree = TreeBuilder::new()
            .root("0")
            .child("0", "u", frac(1, 3))
            .child("0", "m", frac(1, 3))
            .child("0", "d", frac(1, 3))
            .build(Some(1))
            .unwrap();
        let mut assets = vec![AdaptedProcess::new(vec![int(1), int(2), int(1), frac(1, 2)])];
        if two_assets {
            assets.push(AdaptedProcess::new(vec![int(1), int(1), int(2), frac(1, 2)]));
        }
        let names = (1..=assets.len()).map(|j| format!("X{j}")).collect();
        MarketInstance::new(tree, assets, names).unwrap()
    }

    #[test]
    fn binomial_hedge() {
        let m = binomial();
        let h = hedge_claim(&m, &[int(1), int(0)], &int(1)).unwrap();
        assert_eq!(h.c, frac(1, 3));
        assert_eq!(h.direct[0].values[0], frac(2, 3));
        assert_eq!(h.max_abs_gain, frac(2, 3));
        assert_eq!(h.pricing_measure.leaf_mass, vec![frac(1, 3), frac(2, 3)]);
        let k = hedge_claim(&m, &[int(3), int(3)], &int(3)).unwrap();
        assert_eq!(k.c, int(3));
        assert!(k.direct[0].values.iter().all(Zero::is_zero));
        assert!(matches!(hedge_claim(&m, &[int(2), int(0)], &int(1)), Err(SftError::ClaimOutOfBound { .. })));
    }

    #[test]
    fn trinomial_is_not_hedgeable() {
        let m = trinomial(false);
        assert_eq!(
            hedge_claim(&m, &[int(0), int(1), int(0)], &int(1)),
            Err(SftError::NotHedgeable { node: "0".into() })
        );
    }

    #[test]
    fn ftap_examples() {
        let v = second_ftap_verdict(&binomial()).unwrap();
        assert!(v.complete && v.unique_esmm && v.agree);
        let v = second_ftap_verdict(&trinomial(false)).unwrap();
        assert!(!v.complete && !v.unique_esmm && v.agree);
        let v = second_ftap_verdict(&trinomial(true)).unwrap();
        assert!(v.complete && v.unique_esmm && v.agree);
    }

    #[test]
    fn crosscheck_examples() {
        let c = theorem56_crosscheck(&binomial()).unwrap();
        assert!(c.representable && c.extreme && c.unique && c.agree && c.split.is_none());
        let c = theorem56_crosscheck(&trinomial(false)).unwrap();
        assert!(!c.representable && !c.extreme && !c.unique && c.agree);
        let (a, b) = c.split.unwrap();
        let mid = a.mix(&b, &frac(1, 2));
        assert_eq!(mid.leaf_mass, vec![frac(1, 6), frac(1, 2), frac(1, 3)]);
    }

    #[test]
    fn small_sweep_agrees() {
        let params = CorpusParams { count: 30, ..CorpusParams::default() };
        let markets = corpus_generate(7, &params).unwrap();
        let (rows, summary) = sweep(&markets).unwrap();
        assert_eq!(rows.len(), 30);
        assert_eq!(summary.failures, 0);
        assert!(summary.complete > 0 && summary.complete < 30);
        assert!(matches!(
            corpus_generate(7, &CorpusParams { max_depth: 10, ..params }),
            Err(SftError::BadParams(_))
        ));
    }
}
