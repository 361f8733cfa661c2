use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use martrep_core::corpus::{self, CorpusParams};
use martrep_core::diagonalization;
use martrep_core::emery::{self, EmeryModel};
use martrep_core::emm::{self, EmmMode};
use martrep_core::io::{self, TreeDocument};
use martrep_core::rational::{self, Rational};
use martrep_core::reconstruct::{self, ReconstructOptions};
use martrep_core::representation;
use martrep_core::sft::{self, MarketInstance, SftError};
use martrep_core::sigma;
use martrep_core::tree::{self, MeasureVector, StoppingTime, ZeroMass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Debug, Parser)]
#[command(name = "martrep", version, about = "Martingale representation and market completeness on scenario trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: Format,
    /// Float tolerance.
    #[arg(long, global = true, default_value_t = 1e-9)]
    tolerance: f64,
    /// Worker threads for parallel stages.
    #[arg(long, global = true, default_value_t = 1)]
    shards: usize,
    /// Random seed; MARTREP_SEED takes precedence.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check that a process is a martingale.
    CheckMartingale {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        process: String,
        /// Leaf measure file; defaults to the tree's P.
        #[arg(long)]
        measure: Option<PathBuf>,
    },
    /// Stochastic integral and quadratic variation.
    Integrate {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        integrand: String,
        #[arg(long)]
        process: String,
        /// Stop at this constant time.
        #[arg(long)]
        stop_at: Option<usize>,
    },
    /// Set of equivalent martingale measures.
    Emm {
        #[arg(long)]
        market: PathBuf,
        /// Allow measures with null leaves.
        #[arg(long)]
        abs_continuous: bool,
    },
    /// Whether a martingale measure is extreme.
    Extreme {
        #[arg(long)]
        market: PathBuf,
        /// Measure to test; defaults to the reference martingale measure.
        #[arg(long)]
        measure: Option<PathBuf>,
    },
    /// Two-stage representation of a claim.
    Represent {
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        claim: PathBuf,
        #[arg(long)]
        measure: Option<PathBuf>,
        #[arg(long)]
        expect_representable: bool,
    },
    /// Limit reconstruction from a perturbed approximating sequence.
    Reconstruct {
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        claim: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
    /// Diagonalization of the covariation measures.
    Diagonalize {
        #[arg(long)]
        market: PathBuf,
    },
    /// Sigma-martingale witness for a process.
    Sigma {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        process: String,
        #[arg(long)]
        measure: Option<PathBuf>,
    },
    /// Emery's example: truncated expectation by quadrature and Monte Carlo.
    Emery {
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        #[arg(long, default_value_t = 1.0)]
        cap: f64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Also search for an epsilon whose truncated expectation exceeds this.
        #[arg(long)]
        bound: Option<f64>,
    },
    /// Density-process checks for a martingale under a changed measure.
    Lemma53 {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        process: String,
        /// The measure Q, equivalent to the tree's P.
        #[arg(long)]
        measure: PathBuf,
    },
    /// Replicate a bounded claim.
    Hedge {
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        claim: PathBuf,
        #[arg(long)]
        bound: String,
        #[arg(long)]
        expect_hedgeable: bool,
    },
    /// Completeness against uniqueness on a random corpus.
    Sweep {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 3)]
        max_depth: usize,
        #[arg(long, default_value_t = 4)]
        max_branch: usize,
        #[arg(long, default_value_t = 3)]
        max_assets: usize,
    },
    /// Compare representability, extremality and uniqueness for one market.
    Crosscheck {
        #[arg(long)]
        market: PathBuf,
    },
}

enum Failure {
    Input(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.to_string())
    }
}

struct Outcome {
    reports: Vec<Value>,
    ok: bool,
}

impl Outcome {
    fn single(report: Value, ok: bool) -> Self {
        Self { reports: vec![report], ok }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load_tree(path: &Path) -> Result<TreeDocument, Failure> {
    Ok(TreeDocument::parse(&read(path)?)?)
}

fn load_market(path: &Path) -> Result<MarketInstance, Failure> {
    Ok(MarketInstance::from_document(&load_tree(path)?)?)
}

fn load_measure(doc: &TreeDocument, path: Option<&Path>) -> Result<MeasureVector, Failure> {
    match path {
        None => Ok(doc.measure()),
        Some(p) => {
            let q = MeasureVector::new(io::parse_leaf_values(&doc.tree, &read(p)?)?);
            q.validate(&doc.tree)?;
            Ok(q)
        }
    }
}

fn run(cli: &Cli, seed: u64) -> Result<Outcome, Failure> {
    match &cli.command {
        Command::CheckMartingale { tree, process, measure } => {
            let doc = load_tree(tree)?;
            let q = load_measure(&doc, measure.as_deref())?;
            let x = doc.adapted(process)?;
            let v = tree::is_martingale(&doc.tree, &q, &x, ZeroMass::Ignore)?;
            let report = json!({
                "martingale": v.holds,
                "worst_node": v.worst_node.map(|u| doc.tree.id(u).to_string()),
                "worst_violation": io::rational_value(&v.worst_violation),
            });
            Ok(Outcome::single(report, v.holds))
        }
        Command::Integrate { tree, integrand, process, stop_at } => {
            let doc = load_tree(tree)?;
            let t = &doc.tree;
            let f = doc.predictable(integrand)?;
            let x = doc.adapted(process)?;
            let (f, x) = match stop_at {
                Some(s) => {
                    let tau = StoppingTime::constant(t, *s);
                    (tree::stop_integrand(t, &f, &tau), tree::stop_process(t, &x, &tau))
                }
                None => (f, x),
            };
            let integral = tree::stoch_integral(t, &f, &x);
            let qv = tree::quad_covar(t, &integral, &integral);
            let report = json!({
                "integral": io::adapted_json(t, &integral),
                "quadratic_variation": io::adapted_json(t, &qv),
            });
            Ok(Outcome::single(report, true))
        }
        Command::Emm { market, abs_continuous } => {
            let doc = load_tree(market)?;
            let mode = if *abs_continuous { EmmMode::AbsContinuous } else { EmmMode::Equivalent };
            let set = emm::emm_affine_hull(&doc.tree, &doc.assets()?, mode)?;
            Ok(Outcome::single(set.to_json(&doc.tree), true))
        }
        Command::Extreme { market, measure } => {
            let doc = load_tree(market)?;
            let assets = doc.assets()?;
            let set = emm::emm_affine_hull(&doc.tree, &assets, EmmMode::Equivalent)?;
            let q = match measure {
                Some(_) => load_measure(&doc, measure.as_deref())?,
                None => set.reference.clone(),
            };
            let extreme = emm::is_extreme(&q, &doc.tree, &assets)?;
            let split = if extreme {
                None
            } else if q == set.reference {
                emm::split_along_hull(&set).map(|(_, _, a, b)| (a, b))
            } else {
                None
            };
            let report = json!({
                "measure": io::leaf_values_json(&doc.tree, &q.leaf_mass),
                "extreme": extreme,
                "split": split.map(|(a, b)| json!([
                    io::leaf_values_json(&doc.tree, &a.leaf_mass),
                    io::leaf_values_json(&doc.tree, &b.leaf_mass),
                ])),
            });
            Ok(Outcome::single(report, true))
        }
        Command::Represent { market, claim, measure, expect_representable } => {
            let doc = load_tree(market)?;
            let assets = doc.assets()?;
            let xi = io::parse_leaf_values(&doc.tree, &read(claim)?)?;
            let q = match measure {
                Some(_) => load_measure(&doc, measure.as_deref())?,
                None => emm::emm_affine_hull(&doc.tree, &assets, EmmMode::Equivalent)?.reference,
            };
            let m = representation::kt_membership(&doc.tree, &xi, &assets, &q)?;
            let ok = m.representable || !expect_representable;
            Ok(Outcome::single(m.to_json(&doc.tree), ok))
        }
        Command::Reconstruct { market, claim, count } => {
            let m = load_market(market)?;
            let t = &m.tree;
            let xi = io::parse_leaf_values(t, &read(claim)?)?;
            let q = m.reference_measure()?;
            let z = tree::martingale_of(t, &q, &xi)?;
            let exact = match representation::represent_one_stage(t, &z, &m.assets, &q) {
                Ok(g) => g,
                Err(representation::RepresentationError::NotRepresentable { node, .. }) => {
                    let report = json!({"representable": false, "witness": node});
                    return Ok(Outcome::single(report, false));
                }
                Err(e) => return Err(e.into()),
            };
            let mut rng = corpus::instance_rng(seed, 0);
            let perturbation: Vec<_> = m.assets.iter().map(|_| corpus::random_predictable(&mut rng, t, 2)).collect();
            let tau = StoppingTime::horizon(t);
            let approximants = reconstruct::geometric_approximants(t, &q, &m.assets, &exact, &perturbation, &tau, *count);
            let options = ReconstructOptions { tolerance: cli.tolerance, ..ReconstructOptions::default() };
            let trace = reconstruct::reconstruct(t, &q, &m.assets, &z, &approximants, &tau, &options)?;
            let ok = trace.exact.replay_exact && trace.pairs_hold();
            Ok(Outcome::single(trace.to_json(t), ok))
        }
        Command::Diagonalize { market } => {
            let m = load_market(market)?;
            let t = &m.tree;
            let q = m.reference_measure()?;
            let tau = StoppingTime::horizon(t);
            let diag = diagonalization::diagonalize(t, &m.assets, &tau, &q)?;
            let n = diagonalization::orthogonalize(t, &m.assets, &diag);
            let h: Vec<_> = (0..n.len()).map(|_| tree::PredictableProcess::constant(t, 1.0)).collect();
            let orth = diagonalization::verify_orthogonality(t, &n, &tau, &q.to_f64(), &h);
            let ok = diag.max_residual() <= cli.tolerance && orth.gap <= cli.tolerance;
            let mut report = diag.to_json(t);
            report["orthogonality_gap"] = io::float_value(orth.gap);
            report["orthogonal"] = json!(n.iter().map(|x| io::adapted_f64_json(t, x)).collect::<Vec<_>>());
            Ok(Outcome::single(report, ok))
        }
        Command::Sigma { tree, process, measure } => {
            let doc = load_tree(tree)?;
            let q = load_measure(&doc, measure.as_deref())?;
            let w = sigma::sigma_witness(&doc.tree, &q, &doc.adapted(process)?)?;
            let ok = w.verdict;
            Ok(Outcome::single(w.to_json(&doc.tree), ok))
        }
        Command::Emery { epsilon, cap, samples, bound } => {
            let model = EmeryModel::new(*epsilon, *cap, *samples, seed);
            let r = emery::emery_simulate(&model, cli.shards)?;
            let mut report = r.to_json();
            if let Some(b) = bound {
                report["divergence"] = emery::emery_divergence(*b, *cap)?.to_json();
            }
            Ok(Outcome::single(report, true))
        }
        Command::Lemma53 { tree, process, measure } => {
            let doc = load_tree(tree)?;
            let q = load_measure(&doc, Some(measure))?;
            let r = sigma::lemma53_report(&doc.tree, &doc.adapted(process)?, &q, &doc.measure())?;
            let ok = r.all_hold();
            Ok(Outcome::single(r.to_json(&doc.tree), ok))
        }
        Command::Hedge { market, claim, bound, expect_hedgeable } => {
            let m = load_market(market)?;
            let xi = io::parse_leaf_values(&m.tree, &read(claim)?)?;
            let k: Rational = rational::parse(bound)?;
            match sft::hedge_claim(&m, &xi, &k) {
                Ok(h) => Ok(Outcome::single(h.to_json(&m.tree), true)),
                Err(SftError::NotHedgeable { node }) => {
                    let report = json!({"hedgeable": false, "error": "NotHedgeable", "node": node});
                    Ok(Outcome::single(report, !expect_hedgeable))
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::Sweep { count, max_depth, max_branch, max_assets } => {
            let params = CorpusParams {
                max_depth: *max_depth,
                max_branch: *max_branch,
                max_assets: *max_assets,
                count: *count,
            };
            let markets = sft::corpus_generate(seed, &params)?;
            let (rows, summary) = sft::sweep(&markets)?;
            let mut reports: Vec<Value> = rows.iter().map(|r| r.to_json(&markets[r.index])).collect();
            reports.push(summary.to_json());
            Ok(Outcome { reports, ok: summary.failures == 0 })
        }
        Command::Crosscheck { market } => {
            let m = load_market(market)?;
            let c = sft::theorem56_crosscheck(&m)?;
            let v = sft::second_ftap_verdict(&m)?;
            let mut report = c.to_json(&m.tree);
            report["second_ftap"] = v.to_json(&m.tree);
            Ok(Outcome::single(report, c.agree && v.agree))
        }
    }
}

fn text(value: &Value) -> String {
    match value {
        Value::Object(map) => map
            .iter()
            .map(|(k, v)| match v {
                Value::String(s) => format!("{k}: {s}"),
                other => format!("{k}: {other}"),
            })
            .collect::<Vec<_>>()
            .join("\n"),
        other => other.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = match std::env::var("MARTREP_SEED") {
        Ok(s) => match s.trim().parse::<u64>() {
            Ok(v) => v,
            Err(e) => {
                eprintln!("error: MARTREP_SEED: {e}");
                return ExitCode::from(2);
            }
        },
        Err(_) => cli.seed,
    };
    if !(cli.tolerance > 0.0 && cli.tolerance.is_finite()) {
        eprintln!("error: tolerance must be positive");
        return ExitCode::from(2);
    }
    if cli.shards == 0 {
        eprintln!("error: shards must be at least 1");
        return ExitCode::from(2);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.shards).build();
    let outcome = match pool {
        Ok(pool) => pool.install(|| run(&cli, seed)),
        Err(e) => Err(Failure::Input(e.to_string())),
    };
    match outcome {
        Ok(outcome) => {
            for report in &outcome.reports {
                match cli.format {
                    Format::Json if outcome.reports.len() > 1 => println!("{report}"),
                    Format::Json => println!("{}", serde_json::to_string_pretty(report).expect("serializable")),
                    Format::Text => println!("{}", text(report)),
                }
            }
            if outcome.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
