//! Experiment runner: config files and presets, the meta-learning loop over
//! a task stream, independent baselines, entropy metrics and CSV/JSON output.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit_learners::{run_task_blo, run_task_mab_guaranteed, run_task_mab_implicit, TaskOutcome};
use crate::bounds::{eval_terms, lambert_w, BoundSpec, Regime, SlackForm};
use crate::domains::{vertex, Domain, DomainKind};
use crate::environments::{load_graph_text, FlowGraph, Generator, TaskStream};
use crate::error::{Error, Result};
use crate::meta_learner::{family_for, task_similarity_v, uniform_grid, Family, MetaState, Mode};
use crate::regularizers::tsallis_entropy;
use crate::rng::{stream as rng_stream, Purpose};

pub const RECORDS_VERSION: &str = "metabandit-records v1";
pub const SUMMARY_VERSION: &str = "metabandit-summary v1";
/// Upper clamp for recipe values of `rho` and `eps` that would leave (0,1).
pub const RECIPE_CAP: f64 = 0.9;

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Configuration(msg.into()))
}

/// Parameter recipes of the corollaries, as functions of `(d, m, T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    /// Exp3 only: `beta = 1`.
    One,
    /// `beta in [1/2, 1]`.
    Half,
    /// `beta in [1/log d, 1]`.
    LogD,
    /// Guaranteed exploration with a known gap.
    Guaranteed,
    Sphere,
    Path,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    IndependentTsallisHalf,
    IndependentExp3,
    IndependentBlo,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::IndependentTsallisHalf => "independent_tsallis_half",
            Baseline::IndependentExp3 => "independent_exp3",
            Baseline::IndependentBlo => "independent_blo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "independent_tsallis_half" => Ok(Baseline::IndependentTsallisHalf),
            "independent_exp3" => Ok(Baseline::IndependentExp3),
            "independent_blo" => Ok(Baseline::IndependentBlo),
            _ => config_err(format!("unknown baseline {s}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Arm count or ambient dimension; ignored for shortest path.
    pub d: usize,
    pub m: usize,
    pub tasks: usize,
    pub seed: u64,
    pub replicas: usize,
    #[serde(default)]
    pub baselines: Vec<Baseline>,
    #[serde(default = "default_betas")]
    pub entropy_betas: Vec<f64>,
}

fn default_betas() -> Vec<f64> {
    vec![0.5, 1.0]
}

/// Meta parameters. Unset values come from `recipe`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<Recipe>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_hi: Option<f64>,
    /// Shrink offset (MAB); unused for BLO where `theta` is the offset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Where the running similarity column is evaluated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity_theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

/// A full experiment description; reads and writes as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub run: RunConfig,
    #[serde(default)]
    pub meta: MetaConfig,
    pub environment: Generator,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Concrete values after applying the recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub mode: Mode,
    pub d: usize,
    pub m: usize,
    pub tasks: usize,
    pub rho: f64,
    pub k: usize,
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub eps: f64,
    pub gamma: f64,
    pub similarity_theta: f64,
}

pub const PRESETS: &[&str] =
    &["smoke", "cor-mab-one", "cor-mab-halfbeta", "cor-mab-logd", "cor-guaranteed", "cor-sphere", "cor-path"];

fn mab_run(mode: Mode, d: usize, m: usize, tasks: usize, replicas: usize, baselines: Vec<Baseline>) -> RunConfig {
    RunConfig { mode, d, m, tasks, seed: 1, replicas, baselines, entropy_betas: default_betas() }
}

fn with_recipe(recipe: Recipe) -> MetaConfig {
    MetaConfig { recipe: Some(recipe), ..Default::default() }
}

/// Named presets after the corollaries.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    use Baseline::*;
    let sparse = |s: usize, delta: f64, noise: f64| Generator::SparseMab { s, delta, noise };
    let cfg = match name {
        "smoke" => ExperimentConfig {
            name: name.into(),
            run: mab_run(Mode::MabImplicit, 4, 200, 20, 2, vec![IndependentTsallisHalf]),
            meta: with_recipe(Recipe::Half),
            environment: sparse(2, 0.3, 0.2),
            output: OutputConfig::default(),
        },
        "cor-mab-one" | "cor-mab-halfbeta" | "cor-mab-logd" => {
            let recipe = match name {
                "cor-mab-one" => Recipe::One,
                "cor-mab-halfbeta" => Recipe::Half,
                _ => Recipe::LogD,
            };
            ExperimentConfig {
                name: name.into(),
                run: mab_run(Mode::MabImplicit, 16, 500, 400, 8, vec![IndependentTsallisHalf, IndependentExp3]),
                meta: with_recipe(recipe),
                environment: sparse(2, 0.3, 0.2),
                output: OutputConfig::default(),
            }
        }
        "cor-guaranteed" => ExperimentConfig {
            name: name.into(),
            run: mab_run(Mode::MabGuaranteed, 4, 12_000, 100, 2, vec![IndependentTsallisHalf]),
            meta: with_recipe(Recipe::Guaranteed),
            environment: sparse(1, 0.5, 0.25),
            output: OutputConfig::default(),
        },
        "cor-sphere" => ExperimentConfig {
            name: name.into(),
            run: RunConfig {
                mode: Mode::Blo,
                d: 8,
                m: 400,
                tasks: 200,
                seed: 1,
                replicas: 2,
                baselines: vec![IndependentBlo],
                entropy_betas: vec![],
            },
            meta: with_recipe(Recipe::Sphere),
            environment: Generator::SphereBlo { concentration: 8.0, scale: 0.5, noise: 0.3 },
            output: OutputConfig::default(),
        },
        "cor-path" => ExperimentConfig {
            name: name.into(),
            run: RunConfig {
                mode: Mode::Blo,
                d: 0,
                m: 200,
                tasks: 100,
                seed: 1,
                replicas: 2,
                baselines: vec![IndependentBlo],
                entropy_betas: default_betas(),
            },
            meta: with_recipe(Recipe::Path),
            environment: Generator::ShortestPath { graph: "grid6".into(), s: 1, lo: 0.2, hi: 0.8, noise: 0.1 },
            output: OutputConfig::default(),
        },
        _ => return config_err(format!("unknown preset {name}; known: {}", PRESETS.join(", "))),
    };
    Ok(cfg)
}

fn recipe_values(recipe: Recipe, d: usize, m: usize, tasks: usize, gen: &Generator) -> Result<MetaConfig> {
    let (df, mf, tf) = (d as f64, m as f64, tasks as f64);
    let gamma = Some(1.0 / (df * mf * tf).sqrt());
    let logd_lo = (1.0 / df.ln()).min(1.0);
    let k_quarter = Some(((df.powf(0.25) * tf.sqrt()).ceil() as usize).max(1));
    let cap = |v: f64| Some(v.min(RECIPE_CAP));
    Ok(match recipe {
        Recipe::One => MetaConfig {
            rho: cap(tf.powf(-1.0 / 3.0)),
            k: Some(1),
            theta_lo: Some(1.0),
            theta_hi: Some(1.0),
            eps: cap((df * df / (mf * tf)).cbrt()),
            gamma,
            ..Default::default()
        },
        Recipe::Half => MetaConfig {
            rho: cap(tf.powf(-0.25)),
            k: k_quarter,
            theta_lo: Some(0.5),
            theta_hi: Some(1.0),
            eps: cap(df.powf(5.0 / 7.0) / (mf * tf).powf(2.0 / 7.0)),
            gamma,
            ..Default::default()
        },
        Recipe::LogD => MetaConfig {
            rho: cap(tf.powf(-0.25)),
            k: k_quarter,
            theta_lo: Some(logd_lo),
            theta_hi: Some(1.0),
            eps: cap(df.powf(0.75) / (mf * tf).powf(0.25)),
            gamma,
            ..Default::default()
        },
        Recipe::Guaranteed => {
            let delta = match gen {
                Generator::SparseMab { delta, .. } | Generator::OutlierMab { delta, .. } => *delta,
                _ => return config_err("the guaranteed recipe needs a gapped MAB generator"),
            };
            MetaConfig {
                rho: cap(1.0 / (df.cbrt() * (mf * tf).powf(1.0 / 6.0))),
                k: Some(((df * df * mf * tf).cbrt().ceil() as usize).max(1)),
                theta_lo: Some(logd_lo),
                theta_hi: Some(1.0),
                eps: cap(75.0 * df / (delta * delta * mf) * lambert_w(mf / 75.0)?),
                gamma: None,
                ..Default::default()
            }
        }
        Recipe::Sphere | Recipe::Path => {
            let rho = if recipe == Recipe::Sphere {
                tf.powf(-0.25)
            } else {
                (df / tf).powf(0.25) * mf.powf(1.0 / 6.0)
            };
            MetaConfig {
                rho: cap(rho),
                k: Some((tf.sqrt().ceil() as usize).max(1)),
                theta_lo: Some(1.0 / mf),
                theta_hi: Some(1.0),
                ..Default::default()
            }
        }
    })
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Dimension of the action body (edge count for shortest path).
    pub fn body_dim(&self) -> Result<usize> {
        match &self.environment {
            Generator::ShortestPath { graph, .. } => Ok(FlowGraph::parse(&load_graph_text(graph)?)?.edges.len()),
            _ => Ok(self.run.d),
        }
    }

    /// Applies the recipe and checks every value against its legal range.
    pub fn resolve(&self) -> Result<Resolved> {
        let r = &self.run;
        if r.m == 0 || r.tasks == 0 || r.replicas == 0 {
            return config_err("m, tasks and replicas must be positive");
        }
        if r.tasks > u32::MAX as usize - 1 || r.replicas > 1 << 20 {
            return config_err("too many tasks or replicas for the stream layout");
        }
        if r.mode.is_mab() != self.environment.is_mab() {
            return config_err(format!("mode {:?} does not match the {:?} generator", r.mode, self.environment));
        }
        if r.entropy_betas.iter().any(|b| !(*b > 0.0 && *b <= 1.0)) {
            return config_err("entropy betas must lie in (0,1]");
        }
        let d = self.body_dim()?;
        let base = match self.meta.recipe {
            Some(recipe) => recipe_values(recipe, d, r.m, r.tasks, &self.environment)?,
            None => MetaConfig::default(),
        };
        let m = &self.meta;
        let need = |name: &str, v: Option<f64>, b: Option<f64>| -> Result<f64> {
            v.or(b).map_or_else(|| config_err(format!("meta.{name} is required without a recipe")), Ok)
        };
        let rho = need("rho", m.rho, base.rho)?;
        let k = m.k.or(base.k).map_or_else(|| config_err("meta.k is required without a recipe"), Ok)?;
        let theta_lo = need("theta_lo", m.theta_lo, base.theta_lo)?;
        let theta_hi = need("theta_hi", m.theta_hi, base.theta_hi)?;
        if !(rho > 0.0 && rho < 1.0) {
            return config_err(format!("rho must lie in (0,1), got {rho}"));
        }
        if k == 0 {
            return config_err("k must be at least 1");
        }
        if !(theta_lo > 0.0 && theta_lo <= theta_hi && theta_hi <= 1.0) {
            return config_err(format!("need 0 < theta_lo <= theta_hi <= 1, got [{theta_lo}, {theta_hi}]"));
        }
        if k > 1 && theta_lo == theta_hi {
            return config_err("k > 1 needs theta_lo < theta_hi");
        }
        let (eps, gamma) = match r.mode {
            Mode::MabImplicit => {
                let eps = need("eps", m.eps, base.eps)?;
                let gamma = need("gamma", m.gamma, base.gamma)?;
                if !(gamma > 0.0 && gamma < 1.0) {
                    return config_err(format!("gamma must lie in (0,1), got {gamma}"));
                }
                (eps, gamma)
            }
            Mode::MabGuaranteed => (need("eps", m.eps, base.eps)?, 0.0),
            Mode::Blo => (theta_lo, 0.0),
        };
        if !(eps > 0.0 && eps < 1.0) {
            return config_err(format!("eps must lie in (0,1), got {eps}"));
        }
        let similarity_theta = m.similarity_theta.unwrap_or(0.5 * (theta_lo + theta_hi));
        if !(similarity_theta > 0.0 && similarity_theta <= 1.0) {
            return config_err("similarity_theta must lie in (0,1]");
        }
        Ok(Resolved {
            mode: r.mode,
            d,
            m: r.m,
            tasks: r.tasks,
            rho,
            k,
            theta_lo,
            theta_hi,
            eps,
            gamma,
            similarity_theta,
        })
    }
}

/// One row per (replica, task).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub replica: u32,
    pub task: usize,
    pub theta: f64,
    pub eta: f64,
    /// Expected regret against the true optimum (each round's loss replaced
    /// by its mean under the played distribution).
    pub regret: f64,
    pub realized_regret: f64,
    pub estimated_regret: f64,
    pub upper_bound: f64,
    pub identified: Option<bool>,
    pub estimated_index: Option<usize>,
    pub true_index: Option<usize>,
    /// Mean of `regret` over tasks `0..=task`.
    pub avg_regret: f64,
    /// Entropy of the estimated optima so far, one per configured beta.
    pub running_h: Vec<f64>,
    pub running_v: f64,
    pub estimated_optimum: Vec<f64>,
    pub status: String,
}

impl ExperimentRecord {
    fn failed(replica: u32, task: usize, betas: usize, err: &Error) -> Self {
        Self {
            replica,
            task,
            theta: f64::NAN,
            eta: f64::NAN,
            regret: f64::NAN,
            realized_regret: f64::NAN,
            estimated_regret: f64::NAN,
            upper_bound: f64::NAN,
            identified: None,
            estimated_index: None,
            true_index: None,
            avg_regret: f64::NAN,
            running_h: vec![f64::NAN; betas],
            running_v: f64::NAN,
            estimated_optimum: vec![],
            status: format!("error: {err}"),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn records_header(betas: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = [
        "replica",
        "task",
        "theta",
        "eta",
        "regret",
        "realized_regret",
        "estimated_regret",
        "upper_bound",
        "identified",
        "estimated_index",
        "true_index",
        "avg_regret",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend(betas.iter().map(|b| format!("h_{b}")));
    h.extend(["v_hat", "xhat", "status"].iter().map(|s| s.to_string()));
    h
}

/// Writes records as CSV: a version comment line, then a header row.
pub fn write_records<W: Write>(mut out: W, betas: &[f64], records: &[ExperimentRecord]) -> Result<()> {
    writeln!(out, "# {RECORDS_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(records_header(betas))?;
    for r in records {
        let mut row = vec![
            r.replica.to_string(),
            r.task.to_string(),
            fmt_f(r.theta),
            fmt_f(r.eta),
            fmt_f(r.regret),
            fmt_f(r.realized_regret),
            fmt_f(r.estimated_regret),
            fmt_f(r.upper_bound),
            fmt_opt(r.identified.map(u8::from)),
            fmt_opt(r.estimated_index),
            fmt_opt(r.true_index),
            fmt_f(r.avg_regret),
        ];
        row.extend(r.running_h.iter().map(|v| fmt_f(*v)));
        row.push(fmt_f(r.running_v));
        row.push(r.estimated_optimum.iter().map(|v| fmt_f(*v)).collect::<Vec<_>>().join(";"));
        row.push(r.status.clone());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Configuration(format!("bad float {s:?} in records")))
}

fn parse_opt<T: std::str::FromStr>(s: &str) -> Result<Option<T>> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| Error::Configuration(format!("bad field {s:?} in records")))
    }
}

/// Reads records written by `write_records`; returns the entropy betas too.
pub fn read_records<R: Read>(input: R) -> Result<(Vec<f64>, Vec<ExperimentRecord>)> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    let betas: Vec<f64> =
        header.iter().filter_map(|h| h.strip_prefix("h_")).map(parse_f).collect::<Result<_>>()?;
    if header != records_header(&betas) {
        return config_err("records header does not match the v1 schema");
    }
    let nb = betas.len();
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let f = |i: usize| row.get(i).unwrap_or("");
        let identified: Option<u8> = parse_opt(f(8))?;
        let xhat = f(13 + nb);
        out.push(ExperimentRecord {
            replica: parse_opt(f(0))?.unwrap_or(0),
            task: parse_opt(f(1))?.unwrap_or(0),
            theta: parse_f(f(2))?,
            eta: parse_f(f(3))?,
            regret: parse_f(f(4))?,
            realized_regret: parse_f(f(5))?,
            estimated_regret: parse_f(f(6))?,
            upper_bound: parse_f(f(7))?,
            identified: identified.map(|v| v == 1),
            estimated_index: parse_opt(f(9))?,
            true_index: parse_opt(f(10))?,
            avg_regret: parse_f(f(11))?,
            running_h: (0..nb).map(|j| parse_f(f(12 + j))).collect::<Result<_>>()?,
            running_v: parse_f(f(12 + nb))?,
            estimated_optimum: if xhat.is_empty() {
                vec![]
            } else {
                xhat.split(';').map(parse_f).collect::<Result<_>>()?
            },
            status: f(14 + nb).to_string(),
        });
    }
    Ok((betas, out))
}

/// Tsallis entropies of a histogram of indices.
pub fn histogram_entropy(counts: &[usize], beta: f64) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Ok(0.0);
    }
    let p: Vec<f64> = counts.iter().map(|c| *c as f64 / total as f64).collect();
    Ok(tsallis_entropy(&p, beta)?.max(0.0))
}

fn option_count(stream: &TaskStream) -> Option<usize> {
    match stream.graph() {
        Some(g) => Some(g.paths.len()),
        None => matches!(stream.domain().kind(), DomainKind::Simplex).then(|| stream.dim()),
    }
}

/// Tracks the running entropy and similarity columns.
struct Running {
    betas: Vec<f64>,
    counts: Option<Vec<usize>>,
    psi_sum: f64,
    sum: Vec<f64>,
    n: usize,
    regret_sum: f64,
}

impl Running {
    fn new(betas: &[f64], options: Option<usize>, d: usize) -> Self {
        Self { betas: betas.to_vec(), counts: options.map(|n| vec![0; n]), psi_sum: 0.0, sum: vec![0.0; d], n: 0, regret_sum: 0.0 }
    }

    /// Pushes one outcome; `sim` evaluates the similarity at a fixed theta.
    fn push(
        &mut self,
        outcome: &TaskOutcome,
        sim: Option<(&Family, &Domain, f64)>,
    ) -> Result<(f64, Vec<f64>, f64)> {
        self.n += 1;
        self.regret_sum += outcome.expected_regret;
        self.sum.iter_mut().zip(&outcome.estimated_optimum).for_each(|(s, v)| *s += v);
        let h = match (&mut self.counts, outcome.estimated_index) {
            (Some(c), Some(i)) => {
                c[i] += 1;
                self.betas.iter().map(|b| histogram_entropy(c, *b)).collect::<Result<_>>()?
            }
            _ => vec![f64::NAN; self.betas.len()],
        };
        let v = match sim {
            Some((family, domain, theta)) => {
                let reg = family.regularizer(domain, theta)?;
                self.psi_sum += reg.value(&family.project(domain, theta, &outcome.estimated_optimum)?)?;
                let mean: Vec<f64> = self.sum.iter().map(|s| s / self.n as f64).collect();
                let psi_mean = reg.value(&family.project(domain, theta, &mean)?)?;
                (self.psi_sum / self.n as f64 - psi_mean).max(0.0)
            }
            None => f64::NAN,
        };
        Ok((self.regret_sum / self.n as f64, h, v))
    }
}

fn run_learner(res: &Resolved, domain: &Domain, theta: f64, eta: f64, init: &[f64], task: &crate::environments::Task, rng: &mut crate::rng::StreamRng) -> Result<TaskOutcome> {
    match res.mode {
        Mode::MabImplicit => run_task_mab_implicit(init, eta, theta, res.eps, res.gamma, task, rng),
        Mode::MabGuaranteed => run_task_mab_guaranteed(init, eta, theta, res.eps, task, rng),
        Mode::Blo => run_task_blo(domain, init, eta, theta, task, rng),
    }
}

/// Output of one replica of one arm (meta or a baseline).
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaRun {
    pub replica: u32,
    pub records: Vec<ExperimentRecord>,
    /// Final MW distribution (meta runs only).
    pub distribution: Vec<f64>,
    /// Estimated optima in task order.
    pub estimates: Vec<Vec<f64>>,
    pub error: Option<String>,
}

/// Algorithm 1 over one replica's task stream.
pub fn run_meta_replica(cfg: &ExperimentConfig, res: &Resolved, seed: u64, replica: u32) -> ReplicaRun {
    let betas = &cfg.run.entropy_betas;
    let mut out = ReplicaRun { replica, records: vec![], distribution: vec![], estimates: vec![], error: None };
    let fail = |out: &mut ReplicaRun, t: usize, e: Error| {
        out.records.push(ExperimentRecord::failed(replica, t, betas.len(), &e));
        out.error = Some(e.to_string());
    };
    let setup = (|| -> Result<(TaskStream, Family, MetaState)> {
        let stream = TaskStream::new(cfg.environment.clone(), cfg.run.d, res.m, res.tasks, seed, replica)?;
        let family = family_for(res.mode, stream.domain(), res.eps)?;
        let grid = uniform_grid(res.theta_lo, res.theta_hi, res.k)?;
        let state = MetaState::new(res.mode, family, res.m, res.tasks, res.rho, &grid)?;
        Ok((stream, family, state))
    })();
    let (stream, family, mut state) = match setup {
        Ok(v) => v,
        Err(e) => {
            fail(&mut out, 0, e);
            return out;
        }
    };
    let domain = stream.shared_domain();
    let mut running = Running::new(betas, option_count(&stream), stream.dim());
    for t in 0..res.tasks {
        let step = (|| -> Result<ExperimentRecord> {
            let task = stream.task(t)?;
            let u = stream_u(seed, replica, t);
            let prop = state.propose(&domain, u)?;
            let mut rng = rng_stream(seed, replica, t as u32, Purpose::WithinTask);
            let outcome = run_learner(res, &domain, prop.theta, prop.eta, &prop.init, &task, &mut rng)?;
            let report = state.meta_step(&domain, &prop, &outcome.estimated_optimum)?;
            let (avg, h, v) = running.push(&outcome, Some((&family, &domain, res.similarity_theta)))?;
            Ok(ExperimentRecord {
                replica,
                task: t,
                theta: prop.theta,
                eta: prop.eta,
                regret: outcome.expected_regret,
                realized_regret: outcome.realized_regret,
                estimated_regret: outcome.estimated_regret,
                upper_bound: report.bounds[prop.index],
                identified: outcome.identified(),
                estimated_index: outcome.estimated_index,
                true_index: outcome.true_index,
                avg_regret: avg,
                running_h: h,
                running_v: v,
                estimated_optimum: outcome.estimated_optimum,
                status: "ok".into(),
            })
        })();
        match step {
            Ok(r) => {
                out.estimates.push(r.estimated_optimum.clone());
                out.records.push(r);
            }
            Err(e) => {
                fail(&mut out, t, e);
                break;
            }
        }
    }
    out.distribution = state.distribution();
    out
}

fn stream_u(seed: u64, replica: u32, t: usize) -> f64 {
    rng_stream(seed, replica, t as u32, Purpose::MetaSample).random::<f64>()
}

/// Step size and entropy parameter of a baseline on a `d`-dimensional body.
pub fn baseline_params(b: Baseline, d: usize, m: usize) -> (f64, f64) {
    let (df, mf) = (d as f64, m as f64);
    match b {
        Baseline::IndependentTsallisHalf => (0.5, (0.5 / (df.sqrt() * mf)).sqrt()),
        Baseline::IndependentExp3 => (1.0, (df.ln() / (df * mf)).sqrt()),
        Baseline::IndependentBlo => (1.0, 1.0 / (8.0 * df * mf.sqrt())),
    }
}

/// Runs a baseline on one replica's stream: center initialization, fixed
/// step size, no learning across tasks.
pub fn run_baseline(b: Baseline, cfg: &ExperimentConfig, res: &Resolved, seed: u64, replica: u32) -> ReplicaRun {
    let betas = &cfg.run.entropy_betas;
    let mut out = ReplicaRun { replica, records: vec![], distribution: vec![], estimates: vec![], error: None };
    let is_blo = b == Baseline::IndependentBlo;
    let stream = if is_blo == res.mode.is_mab() {
        Err(Error::Configuration(format!("baseline {} does not match mode {:?}", b.name(), res.mode)))
    } else {
        TaskStream::new(cfg.environment.clone(), cfg.run.d, res.m, res.tasks, seed, replica)
    };
    let stream = match stream {
        Ok(s) => s,
        Err(e) => {
            out.records.push(ExperimentRecord::failed(replica, 0, betas.len(), &e));
            out.error = Some(e.to_string());
            return out;
        }
    };
    let domain = stream.shared_domain();
    let (beta, eta) = baseline_params(b, stream.dim(), res.m);
    let mut running = Running::new(betas, option_count(&stream), stream.dim());
    let center = domain.center().to_vec();
    for t in 0..res.tasks {
        let step = (|| -> Result<ExperimentRecord> {
            let task = stream.task(t)?;
            let mut rng = rng_stream(seed, replica, t as u32, Purpose::Baseline);
            let outcome = match (b, res.mode) {
                (Baseline::IndependentBlo, _) => run_task_blo(&domain, &center, eta, 1.0, &task, &mut rng)?,
                (_, Mode::MabGuaranteed) => run_task_mab_guaranteed(&center, eta, beta, res.eps, &task, &mut rng)?,
                _ => run_task_mab_implicit(&center, eta, beta, res.eps, res.gamma, &task, &mut rng)?,
            };
            let (avg, h, _) = running.push(&outcome, None)?;
            Ok(ExperimentRecord {
                replica,
                task: t,
                theta: beta,
                eta,
                regret: outcome.expected_regret,
                realized_regret: outcome.realized_regret,
                estimated_regret: outcome.estimated_regret,
                upper_bound: f64::NAN,
                identified: outcome.identified(),
                estimated_index: outcome.estimated_index,
                true_index: outcome.true_index,
                avg_regret: avg,
                running_h: h,
                running_v: f64::NAN,
                estimated_optimum: outcome.estimated_optimum,
                status: "ok".into(),
            })
        })();
        match step {
            Ok(r) => {
                out.estimates.push(r.estimated_optimum.clone());
                out.records.push(r);
            }
            Err(e) => {
                out.records.push(ExperimentRecord::failed(replica, t, betas.len(), &e));
                out.error = Some(e.to_string());
                break;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSummary {
    pub replica: u32,
    pub avg_regret: f64,
    pub final_quartile_regret: f64,
    pub identification_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distribution: Vec<f64>,
    pub final_h: Vec<f64>,
    pub final_v: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub avg_regret: Stat,
    pub final_quartile_regret: Stat,
    pub identification_rate: Option<Stat>,
    pub replicas: Vec<ReplicaSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub format: String,
    pub name: String,
    pub seed: u64,
    pub resolved: Resolved,
    pub grid: Vec<f64>,
    pub entropy_betas: Vec<f64>,
    pub meta: Option<ArmSummary>,
    pub baselines: BTreeMap<String, ArmSummary>,
}

/// First task of the final quartile.
pub fn final_quartile_start(tasks: usize) -> usize {
    tasks - (tasks / 4).max(1)
}

pub fn summarize_replica(run: &ReplicaRun, tasks: usize) -> ReplicaSummary {
    let ok: Vec<&ExperimentRecord> = run.records.iter().filter(|r| r.is_ok()).collect();
    let start = final_quartile_start(tasks);
    let tail: Vec<f64> = ok.iter().filter(|r| r.task >= start).map(|r| r.regret).collect();
    let ids: Vec<bool> = ok.iter().filter_map(|r| r.identified).collect();
    let last = ok.last();
    ReplicaSummary {
        replica: run.replica,
        avg_regret: last.map_or(f64::NAN, |r| r.avg_regret),
        final_quartile_regret: if tail.is_empty() { f64::NAN } else { tail.iter().sum::<f64>() / tail.len() as f64 },
        identification_rate: (!ids.is_empty()).then(|| ids.iter().filter(|v| **v).count() as f64 / ids.len() as f64),
        distribution: run.distribution.clone(),
        final_h: last.map_or_else(Vec::new, |r| r.running_h.clone()),
        final_v: last.map_or(f64::NAN, |r| r.running_v),
        error: run.error.clone(),
    }
}

pub fn summarize_arm(runs: &[ReplicaRun], tasks: usize) -> ArmSummary {
    let replicas: Vec<ReplicaSummary> = runs.iter().map(|r| summarize_replica(r, tasks)).collect();
    let good: Vec<&ReplicaSummary> = replicas.iter().filter(|r| r.error.is_none()).collect();
    let ids: Vec<f64> = good.iter().filter_map(|r| r.identification_rate).collect();
    ArmSummary {
        avg_regret: Stat::of(&good.iter().map(|r| r.avg_regret).collect::<Vec<_>>()),
        final_quartile_regret: Stat::of(&good.iter().map(|r| r.final_quartile_regret).collect::<Vec<_>>()),
        identification_rate: (!ids.is_empty()).then(|| Stat::of(&ids)),
        replicas,
    }
}

/// Everything an experiment produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub resolved: Resolved,
    pub meta: Vec<ReplicaRun>,
    pub baselines: BTreeMap<String, Vec<ReplicaRun>>,
    pub summary: Summary,
}

impl ExperimentResult {
    pub fn meta_records(&self) -> Vec<ExperimentRecord> {
        self.meta.iter().flat_map(|r| r.records.iter().cloned()).collect()
    }
}

fn over_replicas<F>(replicas: usize, parallel: bool, f: F) -> Vec<ReplicaRun>
where
    F: Fn(u32) -> ReplicaRun + Sync + Send,
{
    if parallel {
        (0..replicas as u32).into_par_iter().map(&f).collect()
    } else {
        (0..replicas as u32).map(&f).collect()
    }
}

/// What to run: the meta-learner, the configured baselines, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arms {
    All,
    MetaOnly,
    BaselinesOnly,
}

/// Runs every replica (concurrently when `parallel`) and aggregates after
/// all of them finish. Output does not depend on `parallel`.
pub fn run_experiment(cfg: &ExperimentConfig, parallel: bool) -> Result<ExperimentResult> {
    run_arms(cfg, Arms::All, parallel)
}

pub fn run_arms(cfg: &ExperimentConfig, arms: Arms, parallel: bool) -> Result<ExperimentResult> {
    let res = cfg.resolve()?;
    let seed = cfg.run.seed;
    let meta = if arms == Arms::BaselinesOnly {
        vec![]
    } else {
        over_replicas(cfg.run.replicas, parallel, |r| run_meta_replica(cfg, &res, seed, r))
    };
    let mut baselines = BTreeMap::new();
    if arms != Arms::MetaOnly {
        let list: Vec<Baseline> = if cfg.run.baselines.is_empty() && arms == Arms::BaselinesOnly {
            if res.mode.is_mab() {
                vec![Baseline::IndependentTsallisHalf, Baseline::IndependentExp3]
            } else {
                vec![Baseline::IndependentBlo]
            }
        } else {
            cfg.run.baselines.clone()
        };
        for b in list {
            let runs = over_replicas(cfg.run.replicas, parallel, |r| run_baseline(b, cfg, &res, seed, r));
            baselines.insert(b.name().to_string(), runs);
        }
    }
    let summary = Summary {
        format: SUMMARY_VERSION.into(),
        name: cfg.name.clone(),
        seed,
        resolved: res.clone(),
        grid: uniform_grid(res.theta_lo, res.theta_hi, res.k)?,
        entropy_betas: cfg.run.entropy_betas.clone(),
        meta: (!meta.is_empty()).then(|| summarize_arm(&meta, res.tasks)),
        baselines: baselines.iter().map(|(k, v)| (k.clone(), summarize_arm(v, res.tasks))).collect(),
    };
    Ok(ExperimentResult { config: cfg.clone(), resolved: res, meta, baselines, summary })
}

/// Entropies of estimated and true optima, and the similarity at each beta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub replica: u32,
    pub beta: f64,
    pub estimated: f64,
    pub truth: f64,
    /// Similarity of the vertex estimates at shrink `eps`.
    pub v_hat: f64,
}

/// Entropy tables from records with discrete optima. `options` is the arm
/// (or path) count; `eps` the shrink used for the similarity column.
pub fn compute_entropy_metrics(records: &[ExperimentRecord], options: usize, betas: &[f64], eps: f64) -> Result<Vec<EntropyRow>> {
    let mut by_replica: BTreeMap<u32, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        let e = by_replica.entry(r.replica).or_insert_with(|| (vec![0; options], vec![0; options]));
        if let Some(i) = r.estimated_index {
            if i >= options {
                return config_err(format!("estimated index {i} exceeds option count {options}"));
            }
            e.0[i] += 1;
        }
        if let Some(i) = r.true_index {
            if i >= options {
                return config_err(format!("true index {i} exceeds option count {options}"));
            }
            e.1[i] += 1;
        }
    }
    let simplex = Domain::simplex(options)?;
    let family = Family::Mab { d: options, eps };
    let mut rows = Vec::new();
    for (replica, (est, tru)) in by_replica {
        let vertices: Vec<Vec<f64>> =
            est.iter().enumerate().flat_map(|(i, c)| std::iter::repeat_n(vertex(options, i), *c)).collect();
        for &beta in betas {
            let v_hat = if vertices.is_empty() {
                f64::NAN
            } else {
                task_similarity_v(&family, &simplex, beta, &vertices)?
            };
            rows.push(EntropyRow {
                replica,
                beta,
                estimated: histogram_entropy(&est, beta)?,
                truth: histogram_entropy(&tru, beta)?,
                v_hat,
            });
        }
    }
    Ok(rows)
}

/// Bounds relevant to a finished experiment, from its pooled optima.
pub fn experiment_bounds(result: &ExperimentResult) -> Result<Vec<(String, crate::bounds::BoundValue)>> {
    let res = &result.resolved;
    let recs = result.meta_records();
    let ok: Vec<&ExperimentRecord> = recs.iter().filter(|r| r.is_ok()).collect();
    let mut out = Vec::new();
    if ok.is_empty() {
        return Ok(out);
    }
    let hist = |f: &dyn Fn(&ExperimentRecord) -> Option<usize>, n: usize| {
        let mut h = vec![0.0; n];
        ok.iter().filter_map(|r| f(r)).for_each(|i| h[i] += 1.0);
        h
    };
    match (&result.config.environment, res.mode) {
        (_, Mode::MabImplicit) => {
            let est = hist(&|r| r.estimated_index, res.d);
            if est.iter().sum::<f64>() > 0.0 {
                let regime = if res.theta_lo >= 1.0 {
                    Regime::One
                } else if res.theta_lo >= 0.5 {
                    Regime::Half
                } else {
                    Regime::LogD
                };
                let spec = BoundSpec::Implicit { regime, d: res.d, m: res.m, tasks: res.tasks, optima: est.clone() };
                out.push(("implicit".into(), eval_terms(&spec)?));
                out.push(("main_term".into(), eval_terms(&BoundSpec::MainTerm { d: res.d, m: res.m, optima: est })?));
            }
        }
        (Generator::SparseMab { delta, .. } | Generator::OutlierMab { delta, .. }, Mode::MabGuaranteed) => {
            let tru = hist(&|r| r.true_index, res.d);
            for (label, slack) in [("conditional_per_dm", SlackForm::PerDm), ("conditional_per_d", SlackForm::PerD)] {
                let spec = BoundSpec::Conditional {
                    d: res.d,
                    m: res.m,
                    eps: res.eps,
                    gap: *delta,
                    beta_lo: res.theta_lo,
                    beta_hi: res.theta_hi,
                    optima: tru.clone(),
                    slack,
                };
                out.push((label.into(), eval_terms(&spec)?));
            }
            let spec = BoundSpec::GuaranteedKnownGap {
                d: res.d,
                m: res.m,
                tasks: res.tasks,
                gap: *delta,
                beta_lo: res.theta_lo,
                optima: tru,
            };
            out.push(("guaranteed_known_gap".into(), eval_terms(&spec)?));
        }
        (Generator::SphereBlo { .. }, _) => {
            let mut norms = Vec::new();
            for run in &result.meta {
                if run.estimates.is_empty() {
                    continue;
                }
                let mean = crate::linalg::mean(&run.estimates);
                norms.push(crate::linalg::dot(&mean, &mean));
            }
            let r2 = (norms.iter().sum::<f64>() / norms.len().max(1) as f64).min(1.0);
            let spec = BoundSpec::Sphere { d: res.d, m: res.m, tasks: res.tasks, mean_sq_norm: r2 };
            out.push(("sphere".into(), eval_terms(&spec)?));
        }
        (Generator::ShortestPath { graph, .. }, _) => {
            let g = FlowGraph::parse(&load_graph_text(graph)?)?;
            let body = g.domain.polytope_body().expect("flow domain is a polytope");
            let estimates: Vec<Vec<f64>> = result.meta.iter().flat_map(|r| r.estimates.iter().cloned()).collect();
            let spec = BoundSpec::Path {
                m: res.m,
                tasks: res.tasks,
                constraints: body.inequalities.clone(),
                center: g.domain.center().to_vec(),
                estimates,
            };
            out.push(("path".into(), eval_terms(&spec)?));
        }
        _ => {}
    }
    Ok(out)
}

pub fn write_bounds<W: Write>(out: W, rows: &[(String, crate::bounds::BoundValue)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bound", "leading", "remainder", "total", "argmin"])?;
    for (name, v) in rows {
        w.write_record([name.clone(), fmt_f(v.leading), fmt_f(v.remainder), fmt_f(v.total()), fmt_opt(v.argmin.map(fmt_f))])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `records.csv`, one `baseline_<name>.csv` per baseline,
/// `summary.json`, `bounds.csv` and the resolved `config.toml`.
pub fn write_outputs(dir: &Path, result: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    let betas = &result.config.run.entropy_betas;
    if !result.meta.is_empty() {
        write_records(fs::File::create(dir.join("records.csv"))?, betas, &result.meta_records())?;
    }
    for (name, runs) in &result.baselines {
        let recs: Vec<ExperimentRecord> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
        write_records(fs::File::create(dir.join(format!("baseline_{name}.csv")))?, betas, &recs)?;
    }
    let mut s = serde_json::to_string_pretty(&result.summary)?;
    s.push('\n');
    fs::write(dir.join("summary.json"), s)?;
    write_bounds(fs::File::create(dir.join("bounds.csv"))?, &experiment_bounds(result)?)?;
    fs::write(dir.join("config.toml"), result.config.to_toml()?)?;
    Ok(())
}
