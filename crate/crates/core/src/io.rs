//! Tree, market, claim and measure documents (UTF-8 JSON).
//!
//! ```json
//! {"T": 1,
//!  "nodes": [{"id": "0", "parent": null}, {"id": "u", "parent": "0"}, {"id": "d", "parent": "0"}],
//!  "prob": {"u": "1/2", "d": "1/2"},
//!  "processes": {"X": {"0": "1", "u": "2", "d": "1/2"}}}
//! ```
//!
//! Rationals are strings `"p/q"` or `"n"` (JSON numbers are accepted on
//! input). Node times come from parent depth. An optional `"assets"` list
//! selects and orders the processes that form a market; by default every
//! process is an asset, in name order.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use crate::rational::{self, Rational};
use crate::tree::{AdaptedProcess, MeasureVector, NodeId, PredictableProcess, ScenarioTree, TreeBuilder, TreeError};

fn parse_err(msg: impl Into<String>) -> TreeError {
    TreeError::Parse(msg.into())
}

pub fn rational_from_value(v: &Value) -> Result<Rational, TreeError> {
    match v {
        Value::String(s) => rational::parse(s).map_err(|e| parse_err(e.to_string())),
        Value::Number(n) => rational::parse(&n.to_string()).map_err(|e| parse_err(e.to_string())),
        other => Err(parse_err(format!("expected a rational, found {other}"))),
    }
}

pub fn rational_value(r: &Rational) -> Value {
    Value::String(rational::format(r))
}

/// Float formatted with 17 significant digits, emitted as a JSON number.
pub fn float_value(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    let text = format!("{x:.16e}");
    match text.parse::<serde_json::Number>() {
        Ok(n) => Value::Number(n),
        Err(_) => Value::Null,
    }
}

/// A parsed tree document: the tree plus its named node-indexed series.
#[derive(Debug, Clone)]
pub struct TreeDocument {
    pub tree: ScenarioTree,
    pub processes: BTreeMap<String, BTreeMap<NodeId, Rational>>,
    pub asset_names: Vec<String>,
}

impl TreeDocument {
    pub fn parse(text: &str) -> Result<Self, TreeError> {
        let doc: Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        let obj = doc.as_object().ok_or_else(|| parse_err("document must be a JSON object"))?;
        let horizon = match obj.get("T") {
            Some(v) => Some(
                v.as_u64()
                    .ok_or_else(|| parse_err("\"T\" must be a nonnegative integer"))? as usize,
            ),
            None => None,
        };
        let nodes = obj
            .get("nodes")
            .and_then(Value::as_array)
            .ok_or_else(|| parse_err("missing \"nodes\" array"))?;
        let probs = match obj.get("prob") {
            Some(Value::Object(m)) => m.clone(),
            Some(_) => return Err(parse_err("\"prob\" must be an object")),
            None => Map::new(),
        };
        let mut builder = TreeBuilder::new();
        for entry in nodes {
            let id = entry
                .get("id")
                .and_then(Value::as_str)
                .ok_or_else(|| parse_err("node without string \"id\""))?
                .to_string();
            let parent = match entry.get("parent") {
                None | Some(Value::Null) => None,
                Some(Value::String(p)) => Some(p.clone()),
                Some(other) => return Err(parse_err(format!("bad parent {other} for node {id:?}"))),
            };
            let prob = probs.get(&id).map(rational_from_value).transpose()?;
            builder.push(id, parent, prob);
        }
        let tree = builder.build(horizon)?;
        for key in probs.keys() {
            if tree.node(key).is_none() {
                return Err(TreeError::Invariant(format!("probability given for unknown node {key:?}")));
            }
        }

        let mut processes = BTreeMap::new();
        if let Some(ps) = obj.get("processes") {
            let ps = ps.as_object().ok_or_else(|| parse_err("\"processes\" must be an object"))?;
            for (name, series) in ps {
                processes.insert(name.clone(), node_map(&tree, series)?);
            }
        }
        let asset_names = match obj.get("assets") {
            Some(Value::Array(names)) => names
                .iter()
                .map(|n| {
                    let s = n.as_str().ok_or_else(|| parse_err("asset names must be strings"))?;
                    if processes.contains_key(s) {
                        Ok(s.to_string())
                    } else {
                        Err(parse_err(format!("asset {s:?} is not a process")))
                    }
                })
                .collect::<Result<_, _>>()?,
            Some(_) => return Err(parse_err("\"assets\" must be an array")),
            None => processes.keys().cloned().collect(),
        };
        Ok(Self { tree, processes, asset_names })
    }

    fn series(&self, name: &str) -> Result<&BTreeMap<NodeId, Rational>, TreeError> {
        self.processes
            .get(name)
            .ok_or_else(|| parse_err(format!("no process named {name:?}")))
    }

    /// A process defined at every node.
    pub fn adapted(&self, name: &str) -> Result<AdaptedProcess, TreeError> {
        let s = self.series(name)?;
        let values = (0..self.tree.len())
            .map(|u| {
                s.get(&u).cloned().ok_or_else(|| {
                    TreeError::Invariant(format!("process {name:?} is undefined at node {:?}", self.tree.id(u)))
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(AdaptedProcess::new(values))
    }

    /// A process defined at every non-leaf node (leaf values ignored).
    pub fn predictable(&self, name: &str) -> Result<PredictableProcess, TreeError> {
        let s = self.series(name)?;
        let tree = &self.tree;
        let mut missing = None;
        let f = PredictableProcess::from_fn(tree, |u| match s.get(&u) {
            Some(v) => v.clone(),
            None => {
                missing.get_or_insert(u);
                Rational::default()
            }
        });
        match missing {
            Some(u) => Err(TreeError::Invariant(format!(
                "integrand {name:?} is undefined at non-leaf node {:?}",
                tree.id(u)
            ))),
            None => Ok(f),
        }
    }

    pub fn assets(&self) -> Result<Vec<AdaptedProcess>, TreeError> {
        self.asset_names.iter().map(|n| self.adapted(n)).collect()
    }

    pub fn measure(&self) -> MeasureVector {
        MeasureVector::from_tree(&self.tree)
    }

    pub fn to_json(&self) -> Value {
        let named: Vec<(String, AdaptedProcess)> = self
            .processes
            .iter()
            .map(|(name, s)| {
                let values = (0..self.tree.len()).map(|u| s.get(&u).cloned().unwrap_or_default()).collect();
                (name.clone(), AdaptedProcess::new(values))
            })
            .collect();
        let mut v = tree_to_json(&self.tree, &named);
        v["assets"] = json!(self.asset_names);
        v
    }
}

fn node_map(tree: &ScenarioTree, series: &Value) -> Result<BTreeMap<NodeId, Rational>, TreeError> {
    let obj = series.as_object().ok_or_else(|| parse_err("process series must be an object"))?;
    obj.iter()
        .map(|(id, v)| {
            let u = tree
                .node(id)
                .ok_or_else(|| TreeError::Invariant(format!("value given for unknown node {id:?}")))?;
            Ok((u, rational_from_value(v)?))
        })
        .collect()
}

/// Leaf-indexed values from `{"leaf-id": "p/q", ...}`, optionally wrapped in
/// a single top-level key such as `"claim"` or `"measure"`.
pub fn parse_leaf_values(tree: &ScenarioTree, text: &str) -> Result<Vec<Rational>, TreeError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    let mut obj = doc.as_object().ok_or_else(|| parse_err("leaf document must be an object"))?;
    for wrapper in ["claim", "measure", "values"] {
        if let Some(Value::Object(inner)) = obj.get(wrapper) {
            obj = inner;
            break;
        }
    }
    let mut out: Vec<Option<Rational>> = vec![None; tree.leaf_count()];
    for (id, v) in obj {
        let u = tree
            .node(id)
            .ok_or_else(|| TreeError::Invariant(format!("unknown node {id:?}")))?;
        let pos = tree
            .leaf_position(u)
            .ok_or_else(|| TreeError::Invariant(format!("node {id:?} is not a leaf")))?;
        out[pos] = Some(rational_from_value(v)?);
    }
    out.into_iter()
        .enumerate()
        .map(|(pos, v)| {
            v.ok_or_else(|| {
                TreeError::Invariant(format!("no value for leaf {:?}", tree.id(tree.leaves()[pos])))
            })
        })
        .collect()
}

pub fn leaf_values_json(tree: &ScenarioTree, values: &[Rational]) -> Value {
    let map: Map<String, Value> = tree
        .leaves()
        .iter()
        .zip(values)
        .map(|(&l, v)| (tree.id(l).to_string(), rational_value(v)))
        .collect();
    Value::Object(map)
}

pub fn leaf_floats_json(tree: &ScenarioTree, values: &[f64]) -> Value {
    let map: Map<String, Value> = tree
        .leaves()
        .iter()
        .zip(values)
        .map(|(&l, v)| (tree.id(l).to_string(), float_value(*v)))
        .collect();
    Value::Object(map)
}

pub fn adapted_json(tree: &ScenarioTree, x: &AdaptedProcess) -> Value {
    let map: Map<String, Value> = (0..tree.len())
        .map(|u| (tree.id(u).to_string(), rational_value(&x.values[u])))
        .collect();
    Value::Object(map)
}

pub fn adapted_f64_json(tree: &ScenarioTree, x: &AdaptedProcess<f64>) -> Value {
    let map: Map<String, Value> = (0..tree.len())
        .map(|u| (tree.id(u).to_string(), float_value(x.values[u])))
        .collect();
    Value::Object(map)
}

pub fn predictable_json(tree: &ScenarioTree, f: &PredictableProcess) -> Value {
    let map: Map<String, Value> = tree
        .non_leaves()
        .map(|u| (tree.id(u).to_string(), rational_value(&f.values[u])))
        .collect();
    Value::Object(map)
}

pub fn predictable_f64_json(tree: &ScenarioTree, f: &PredictableProcess<f64>) -> Value {
    let map: Map<String, Value> = tree
        .non_leaves()
        .map(|u| (tree.id(u).to_string(), float_value(f.values[u])))
        .collect();
    Value::Object(map)
}

/// Serializes a tree and named processes in the document format.
pub fn tree_to_json(tree: &ScenarioTree, processes: &[(String, AdaptedProcess)]) -> Value {
    let nodes: Vec<Value> = (0..tree.len())
        .map(|u| {
            json!({
                "id": tree.id(u),
                "parent": tree.parent(u).map(|p| tree.id(p).to_string()),
            })
        })
        .collect();
    let prob: Map<String, Value> = (1..tree.len())
        .map(|u| (tree.id(u).to_string(), rational_value(tree.branch_prob(u))))
        .collect();
    let procs: Map<String, Value> = processes
        .iter()
        .map(|(name, x)| (name.clone(), adapted_json(tree, x)))
        .collect();
    json!({
        "T": tree.horizon(),
        "nodes": nodes,
        "prob": prob,
        "processes": procs,
    })
}
