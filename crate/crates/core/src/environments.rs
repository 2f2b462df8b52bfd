//! Task generators. Every task's loss table is built in full before the
//! learner sees round 1, so the adversary is oblivious within a task.
//!
//! Streams are lazy: construction draws only the per-task plan (optimal arm,
//! signal direction or target path); `TaskStream::task` builds one task's
//! table from its own random stream on demand.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::Write;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domains::{Constraint, Domain};
use crate::error::{param, Error, Result};
use crate::linalg;
use crate::rng::{stream, Purpose, StreamRng};

/// Hard cap on enumerated simple paths.
pub const MAX_PATHS: usize = 10_000;
/// Tolerance for the per-task gap assertion (floating-point slack only).
pub const GAP_TOL: f64 = 1e-12;
const FLOW_TOL: f64 = 1e-8;
const RESIDUAL_EPS: f64 = 1e-12;
/// Task index reserved for the per-stream plan.
const PLAN_TASK: u32 = u32::MAX;

/// Generator and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Optimal arms drawn from a fixed `s`-subset; gap `delta` on every task.
    SparseMab { s: usize, delta: f64, noise: f64 },
    /// As `SparseMab`, but `ceil(T^p)` tasks get an optimum uniform over all arms.
    OutlierMab { s: usize, delta: f64, noise: f64, p: f64 },
    /// Per-task signal `normalize(concentration * g + z)` around a global
    /// direction `g` (`z` standard normal; `inf` gives `g` exactly).
    SphereBlo { concentration: f64, scale: f64, noise: f64 },
    /// Edges on the task's target path weigh `lo`, others `hi`, both
    /// perturbed by `noise`; targets come from a fixed `s`-subset of paths.
    ShortestPath { graph: String, s: usize, lo: f64, hi: f64, noise: f64 },
}

impl Generator {
    pub fn is_mab(&self) -> bool {
        matches!(self, Self::SparseMab { .. } | Self::OutlierMab { .. })
    }
}

/// How the learner observes a round.
#[derive(Debug, Clone)]
pub enum Feedback {
    /// Loss of the pulled arm.
    Arms,
    /// `<l, y>` at the played point of the unit ball.
    Sphere,
    /// Loss of a path sampled from the played flow.
    Paths(Arc<FlowGraph>),
}

/// One task: `m` loss vectors (arm losses for MAB, linear losses for BLO).
#[derive(Debug, Clone)]
pub struct Task {
    pub index: usize,
    pub losses: Vec<Vec<f64>>,
    /// `argmin_x sum_i <l_i, x>` over the body (lowest index on ties).
    pub true_optimum: Vec<f64>,
    /// Arm or path index of the true optimum, when the body is discrete.
    pub optimal_index: Option<usize>,
    pub feedback: Feedback,
}

impl Task {
    pub fn rounds(&self) -> usize {
        self.losses.len()
    }

    pub fn dim(&self) -> usize {
        self.true_optimum.len()
    }

    pub fn mab_loss(&self, round: usize, arm: usize) -> Result<f64> {
        let l = self.losses[round][arm];
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::EnvironmentContract(format!("MAB loss {l} outside [0,1]")));
        }
        Ok(l)
    }

    /// Expected loss `<l_i, x>`.
    pub fn linear_loss(&self, round: usize, x: &[f64]) -> f64 {
        linalg::dot(&self.losses[round], x)
    }

    /// Plays `y` and returns the observed loss, with the sampled path index
    /// for shortest-path tasks.
    pub fn play_linear(&self, round: usize, y: &[f64], rng: &mut StreamRng) -> Result<(f64, Option<usize>)> {
        let loss = match &self.feedback {
            Feedback::Arms => return Err(Error::Configuration("MAB task played as BLO".into())),
            Feedback::Sphere => (self.linear_loss(round, y), None),
            Feedback::Paths(g) => {
                let p = sample_path_from_flow(g, y, rng)?;
                (self.linear_loss(round, &g.indicators[p]), Some(p))
            }
        };
        if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&loss.0) {
            return Err(Error::EnvironmentContract(format!("BLO loss {} outside [-1,1]", loss.0)));
        }
        Ok(loss)
    }

    /// `sum_i <l_i, x>`.
    pub fn total_loss(&self, x: &[f64]) -> f64 {
        self.losses.iter().map(|l| linalg::dot(l, x)).sum()
    }

    /// Per-arm average loss minus the optimal arm's, minimized over
    /// suboptimal arms.
    pub fn empirical_gap(&self) -> Option<f64> {
        let best = self.optimal_index?;
        let d = self.dim();
        let m = self.rounds() as f64;
        let means: Vec<f64> = (0..d).map(|a| self.losses.iter().map(|r| r[a]).sum::<f64>() / m).collect();
        (0..d).filter(|&a| a != best).map(|a| means[a] - means[best]).reduce(f64::min)
    }

    /// Writes the loss table as CSV (`round,c0,c1,...`).
    pub fn dump_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["round".to_string()];
        header.extend((0..self.dim()).map(|j| format!("c{j}")));
        w.write_record(&header)?;
        for (i, row) in self.losses.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Plan {
    Arms { subset: Vec<usize>, optimal: Vec<usize>, outliers: Vec<bool> },
    Sphere { global: Vec<f64>, signals: Vec<Vec<f64>> },
    Paths { subset: Vec<usize>, targets: Vec<usize> },
}

/// A lazily generated sequence of `T` tasks with `m` rounds each.
#[derive(Debug, Clone)]
pub struct TaskStream {
    pub generator: Generator,
    pub m: usize,
    pub tasks: usize,
    pub seed: u64,
    pub replica: u32,
    domain: Arc<Domain>,
    graph: Option<Arc<FlowGraph>>,
    plan: Plan,
}

impl TaskStream {
    /// `d` is ignored for shortest-path streams (the edge count sets it).
    pub fn new(generator: Generator, d: usize, m: usize, tasks: usize, seed: u64, replica: u32) -> Result<Self> {
        if m == 0 || tasks == 0 {
            return param("m and T must be positive");
        }
        let mut rng = stream(seed, replica, PLAN_TASK, Purpose::Environment);
        let (domain, graph, plan) = match &generator {
            Generator::SparseMab { s, delta, noise } | Generator::OutlierMab { s, delta, noise, .. } => {
                check_gap_params(d, *s, *delta, *noise)?;
                let subset = index::sample(&mut rng, d, *s).into_vec();
                let mut optimal: Vec<usize> = (0..tasks).map(|_| subset[rng.random_range(0..*s)]).collect();
                let mut outliers = vec![false; tasks];
                if let Generator::OutlierMab { p, .. } = generator {
                    if !(0.0..1.0).contains(&p) {
                        return param(format!("outlier exponent must lie in [0,1), got {p}"));
                    }
                    for t in index::sample(&mut rng, tasks, outlier_count(tasks, p)) {
                        outliers[t] = true;
                        optimal[t] = rng.random_range(0..d);
                    }
                }
                (Domain::simplex(d)?, None, Plan::Arms { subset, optimal, outliers })
            }
            Generator::SphereBlo { concentration, scale, noise } => {
                if !(*concentration >= 0.0) {
                    return param("concentration must be non-negative");
                }
                if !(*scale > 0.0 && *noise >= 0.0 && scale + noise <= 1.0) {
                    return param(format!("need scale > 0, noise >= 0, scale + noise <= 1 (got {scale}, {noise})"));
                }
                let global = unit_normal(&mut rng, d);
                let signals = (0..tasks)
                    .map(|_| {
                        if concentration.is_infinite() {
                            global.clone()
                        } else {
                            let z = standard_normal(&mut rng, d);
                            normalize(&linalg::add_scaled(&z, *concentration, &global))
                        }
                    })
                    .collect();
                (Domain::sphere(d)?, None, Plan::Sphere { global, signals })
            }
            Generator::ShortestPath { graph, s, lo, hi, noise } => {
                if !(*lo >= *noise && *hi + *noise <= 1.0 && lo < hi && *noise >= 0.0) {
                    return param(format!("need noise <= lo < hi <= 1 - noise (got {lo}, {hi}, {noise})"));
                }
                let g = Arc::new(FlowGraph::parse(&load_graph_text(graph)?)?);
                if *s == 0 || *s > g.paths.len() {
                    return param(format!("s = {s} but the graph has {} paths", g.paths.len()));
                }
                let subset = index::sample(&mut rng, g.paths.len(), *s).into_vec();
                let targets = (0..tasks).map(|_| subset[rng.random_range(0..*s)]).collect();
                (g.domain.clone(), Some(g), Plan::Paths { subset, targets })
            }
        };
        Ok(Self { generator, m, tasks, seed, replica, domain: Arc::new(domain), graph, plan })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn shared_domain(&self) -> Arc<Domain> {
        self.domain.clone()
    }

    pub fn graph(&self) -> Option<&Arc<FlowGraph>> {
        self.graph.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Planned optimal arms (MAB) or target paths (shortest path).
    pub fn planned_optima(&self) -> Option<&[usize]> {
        match &self.plan {
            Plan::Arms { optimal, .. } => Some(optimal),
            Plan::Paths { targets, .. } => Some(targets),
            Plan::Sphere { .. } => None,
        }
    }

    /// The fixed subset optimal arms or target paths are drawn from.
    pub fn support(&self) -> Option<&[usize]> {
        match &self.plan {
            Plan::Arms { subset, .. } | Plan::Paths { subset, .. } => Some(subset),
            Plan::Sphere { .. } => None,
        }
    }

    pub fn outliers(&self) -> Option<&[bool]> {
        match &self.plan {
            Plan::Arms { outliers, .. } => Some(outliers),
            _ => None,
        }
    }

    pub fn global_direction(&self) -> Option<&[f64]> {
        match &self.plan {
            Plan::Sphere { global, .. } => Some(global),
            _ => None,
        }
    }

    pub fn task(&self, t: usize) -> Result<Task> {
        if t >= self.tasks {
            return param(format!("task index {t} out of range"));
        }
        let mut rng = stream(self.seed, self.replica, t as u32, Purpose::Environment);
        let m = self.m;
        let d = self.dim();
        match (&self.plan, &self.generator) {
            (Plan::Arms { optimal, .. }, Generator::SparseMab { delta, noise, .. } | Generator::OutlierMab { delta, noise, .. }) => {
                let best = optimal[t];
                let mut losses = vec![vec![0.0; d]; m];
                for a in 0..d {
                    let mean = if a == best { 0.5 - delta / 2.0 } else { 0.5 + delta / 2.0 };
                    for (i, v) in antithetic_column(&mut rng, m, mean, *noise).into_iter().enumerate() {
                        losses[i][a] = v;
                    }
                }
                let task = Task {
                    index: t,
                    losses,
                    true_optimum: crate::domains::vertex(d, best),
                    optimal_index: Some(best),
                    feedback: Feedback::Arms,
                };
                let gap = task.empirical_gap().unwrap_or(f64::INFINITY);
                if gap < delta - GAP_TOL {
                    return Err(Error::InvariantViolation(format!("task {t} gap {gap} below {delta}")));
                }
                Ok(task)
            }
            (Plan::Sphere { signals, .. }, Generator::SphereBlo { scale, noise, .. }) => {
                let v = &signals[t];
                let losses: Vec<Vec<f64>> = (0..m)
                    .map(|_| {
                        let mut l = linalg::scale(v, -scale);
                        if *noise > 0.0 {
                            let dir = unit_normal(&mut rng, d);
                            let r = rng.random::<f64>().powf(1.0 / d as f64);
                            l = linalg::add_scaled(&l, noise * r, &dir);
                        }
                        l
                    })
                    .collect();
                let mut sum = vec![0.0; d];
                for l in &losses {
                    sum.iter_mut().zip(l).for_each(|(s, v)| *s += v);
                }
                let n = linalg::norm(&sum);
                let true_optimum = if n > 0.0 { linalg::scale(&sum, -1.0 / n) } else { vec![0.0; d] };
                Ok(Task { index: t, losses, true_optimum, optimal_index: None, feedback: Feedback::Sphere })
            }
            (Plan::Paths { targets, .. }, Generator::ShortestPath { lo, hi, noise, .. }) => {
                let g = self.graph.as_ref().expect("path stream has a graph");
                let on_target: HashSet<usize> = g.paths[targets[t]].iter().copied().collect();
                let scale = 1.0 / g.max_path_len() as f64;
                let losses: Vec<Vec<f64>> = (0..m)
                    .map(|_| {
                        (0..d)
                            .map(|e| {
                                let base = if on_target.contains(&e) { *lo } else { *hi };
                                (base + noise * (2.0 * rng.random::<f64>() - 1.0)) * scale
                            })
                            .collect()
                    })
                    .collect();
                let mut sum = vec![0.0; d];
                for l in &losses {
                    sum.iter_mut().zip(l).for_each(|(s, v)| *s += v);
                }
                let best = g.best_path(&sum);
                Ok(Task {
                    index: t,
                    losses,
                    true_optimum: g.indicators[best].clone(),
                    optimal_index: Some(best),
                    feedback: Feedback::Paths(g.clone()),
                })
            }
            _ => unreachable!("plan always matches its generator"),
        }
    }
}

fn check_gap_params(d: usize, s: usize, delta: f64, noise: f64) -> Result<()> {
    if d < 2 {
        return param("MAB needs d >= 2");
    }
    if s == 0 || s > d {
        return param(format!("need 1 <= s <= d, got s = {s}"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return param(format!("gap must lie in (0,1), got {delta}"));
    }
    if !(noise >= 0.0) || delta + 2.0 * noise > 1.0 {
        return param(format!("infeasible noise: delta + 2 noise = {} > 1", delta + 2.0 * noise));
    }
    Ok(())
}

/// `ceil(T^p)`, guarded against `powf` rounding just above an integer.
pub fn outlier_count(tasks: usize, p: f64) -> usize {
    ((tasks as f64).powf(p) - 1e-9).ceil().max(1.0) as usize
}

/// `m` values with mean exactly `mean` (up to rounding): shuffled
/// antithetic pairs `mean +- noise * u`, plus `mean` itself when `m` is odd.
fn antithetic_column(rng: &mut StreamRng, m: usize, mean: f64, noise: f64) -> Vec<f64> {
    let mut col = Vec::with_capacity(m);
    for _ in 0..m / 2 {
        let u = noise * rng.random::<f64>();
        col.push(mean + u);
        col.push(mean - u);
    }
    if m % 2 == 1 {
        col.push(mean);
    }
    col.shuffle(rng);
    col
}

fn standard_normal(rng: &mut StreamRng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_normal(rng: &mut StreamRng, d: usize) -> Vec<f64> {
    loop {
        let z = standard_normal(rng, d);
        if linalg::norm(&z) > 1e-12 {
            return normalize(&z);
        }
    }
}

fn normalize(x: &[f64]) -> Vec<f64> {
    linalg::scale(x, 1.0 / linalg::norm(x))
}

pub fn gen_sparse_mab(d: usize, m: usize, tasks: usize, s: usize, delta: f64, noise: f64, seed: u64) -> Result<TaskStream> {
    TaskStream::new(Generator::SparseMab { s, delta, noise }, d, m, tasks, seed, 0)
}

pub fn gen_outlier_mab(
    d: usize,
    m: usize,
    tasks: usize,
    s: usize,
    delta: f64,
    noise: f64,
    p: f64,
    seed: u64,
) -> Result<TaskStream> {
    TaskStream::new(Generator::OutlierMab { s, delta, noise, p }, d, m, tasks, seed, 0)
}

pub fn gen_sphere_blo(d: usize, m: usize, tasks: usize, concentration: f64, seed: u64) -> Result<TaskStream> {
    TaskStream::new(Generator::SphereBlo { concentration, scale: 0.5, noise: 0.3 }, d, m, tasks, seed, 0)
}

pub fn gen_shortest_path(
    graph: &str,
    m: usize,
    tasks: usize,
    s: usize,
    lo: f64,
    hi: f64,
    noise: f64,
    seed: u64,
) -> Result<(Arc<FlowGraph>, TaskStream)> {
    let generator = Generator::ShortestPath { graph: graph.to_string(), s, lo, hi, noise };
    let stream = TaskStream::new(generator, 0, m, tasks, seed, 0)?;
    Ok((stream.graph.clone().expect("path stream has a graph"), stream))
}

/// Builtin graphs by name; anything else is read as a file path.
pub fn load_graph_text(name: &str) -> Result<String> {
    Ok(match name {
        "parallel" => PARALLEL.to_string(),
        "diamond" => DIAMOND.to_string(),
        "grid6" => GRID6.to_string(),
        path => std::fs::read_to_string(path)?,
    })
}

pub const PARALLEL: &str = "SOURCE u\nSINK v\nu v\nu v\n";
pub const DIAMOND: &str = "SOURCE u\nSINK v\nu a\na v\nu b\nb v\n";
/// Six nodes, eight edges, four source-sink paths.
pub const GRID6: &str = "\
SOURCE s
SINK t
s a
s b
a b
a c
b d
c d
c t
d t
";

/// Directed graph with its source-sink flow polytope.
///
/// Only edges lying on some source-sink path are kept. The polytope is
/// `{x >= 0 : out(w) - in(w) = [w = source] - [w = sink] for every vertex w}`
/// over the kept edges; for an acyclic graph its vertices are exactly the
/// path indicators.
#[derive(Debug, Clone)]
pub struct FlowGraph {
    pub vertices: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    pub source: usize,
    pub sink: usize,
    /// Simple source-sink paths as lists of edge indices.
    pub paths: Vec<Vec<usize>>,
    pub indicators: Vec<Vec<f64>>,
    pub domain: Domain,
    lookup: HashMap<Vec<usize>, usize>,
}

impl FlowGraph {
    /// Parses `SOURCE u` / `SINK v` header lines and `from to` edge lines;
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut ids: HashMap<String, usize> = HashMap::new();
        let mut intern = |s: &str, names: &mut Vec<String>| -> usize {
            *ids.entry(s.to_string()).or_insert_with(|| {
                names.push(s.to_string());
                names.len() - 1
            })
        };
        let (mut source, mut sink) = (None, None);
        let mut raw_edges = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["SOURCE", v] => source = Some(intern(v, &mut names)),
                ["SINK", v] => sink = Some(intern(v, &mut names)),
                [a, b] => {
                    let (a, b) = (intern(a, &mut names), intern(b, &mut names));
                    if a == b {
                        return Err(Error::Graph(format!("self-loop on line {}", n + 1)));
                    }
                    raw_edges.push((a, b));
                }
                _ => return Err(Error::Graph(format!("cannot parse line {}: {line:?}", n + 1))),
            }
        }
        let source = source.ok_or_else(|| Error::Graph("missing SOURCE line".into()))?;
        let sink = sink.ok_or_else(|| Error::Graph("missing SINK line".into()))?;
        if source == sink {
            return Err(Error::Graph("source and sink coincide".into()));
        }
        Self::build(names, raw_edges, source, sink)
    }

    fn build(vertices: Vec<String>, raw_edges: Vec<(usize, usize)>, source: usize, sink: usize) -> Result<Self> {
        let nv = vertices.len();
        let reach = |start: usize, forward: bool| -> Vec<bool> {
            let mut seen = vec![false; nv];
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(w) = queue.pop_front() {
                for &(a, b) in &raw_edges {
                    let (from, to) = if forward { (a, b) } else { (b, a) };
                    if from == w && !seen[to] {
                        seen[to] = true;
                        queue.push_back(to);
                    }
                }
            }
            seen
        };
        let from_source = reach(source, true);
        let to_sink = reach(sink, false);
        let edges: Vec<(usize, usize)> =
            raw_edges.iter().copied().filter(|&(a, b)| from_source[a] && to_sink[b]).collect();
        if edges.is_empty() {
            return Err(Error::Graph("no source-sink path".into()));
        }
        // Kahn's algorithm on the pruned graph
        let mut indeg = vec![0usize; nv];
        for &(_, b) in &edges {
            indeg[b] += 1;
        }
        let mut queue: VecDeque<usize> = (0..nv).filter(|&w| indeg[w] == 0).collect();
        let mut removed = 0;
        while let Some(w) = queue.pop_front() {
            removed += 1;
            for &(a, b) in &edges {
                if a == w {
                    indeg[b] -= 1;
                    if indeg[b] == 0 {
                        queue.push_back(b);
                    }
                }
            }
        }
        if removed < nv {
            return Err(Error::Graph("cycle among source-sink edges; the flow polytope would be unbounded".into()));
        }
        let paths = enumerate_paths(&edges, nv, source, sink)?;
        let ne = edges.len();
        let indicators: Vec<Vec<f64>> = paths
            .iter()
            .map(|p| {
                let mut x = vec![0.0; ne];
                p.iter().for_each(|&e| x[e] = 1.0);
                x
            })
            .collect();
        let mut touched: Vec<usize> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
        touched.sort_unstable();
        touched.dedup();
        let equalities = touched
            .iter()
            .map(|&w| {
                let a: Vec<f64> = edges
                    .iter()
                    .map(|&(from, to)| if from == w { 1.0 } else if to == w { -1.0 } else { 0.0 })
                    .collect();
                let b = if w == source { 1.0 } else if w == sink { -1.0 } else { 0.0 };
                Constraint::new(a, b)
            })
            .collect();
        let inequalities = (0..ne)
            .map(|e| {
                let mut a = vec![0.0; ne];
                a[e] = -1.0;
                Constraint::new(a, 0.0)
            })
            .collect();
        let domain = Domain::polytope(inequalities, equalities, indicators.clone())?;
        let lookup = paths.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        Ok(Self { vertices, edges, source, sink, paths, indicators, domain, lookup })
    }

    pub fn constraint_count(&self) -> usize {
        let body = self.domain.polytope_body().expect("flow domain is a polytope");
        body.inequalities.len() + body.equalities.len()
    }

    pub fn max_path_len(&self) -> usize {
        self.paths.iter().map(Vec::len).max().unwrap_or(1)
    }

    /// Path minimizing `<w, indicator>`, lowest index on ties.
    pub fn best_path(&self, w: &[f64]) -> usize {
        let costs: Vec<f64> = self.paths.iter().map(|p| p.iter().map(|&e| w[e]).sum()).collect();
        (0..costs.len()).fold(0, |b, i| if costs[i] < costs[b] { i } else { b })
    }

    /// Path-weight decomposition of a flow: repeatedly walks from the source
    /// along the largest-residual edge and extracts the bottleneck.
    pub fn decompose(&self, flow: &[f64]) -> Result<Vec<(usize, f64)>> {
        if flow.len() != self.edges.len() {
            return Err(Error::Flow("flow has the wrong dimension".into()));
        }
        if !self.domain.contains(flow, FLOW_TOL) {
            return Err(Error::Flow(format!("{flow:?} violates the flow constraints")));
        }
        let mut residual: Vec<f64> = flow.iter().map(|v| v.max(0.0)).collect();
        let mut parts: Vec<(usize, f64)> = Vec::new();
        let mut extracted = 0.0;
        for _ in 0..self.edges.len() {
            if extracted >= 1.0 - FLOW_TOL {
                break;
            }
            let mut w = self.source;
            let mut path = Vec::new();
            while w != self.sink {
                let next = (0..self.edges.len())
                    .filter(|&e| self.edges[e].0 == w && residual[e] > RESIDUAL_EPS)
                    .fold(None, |best: Option<usize>, e| match best {
                        Some(b) if residual[b] >= residual[e] => Some(b),
                        _ => Some(e),
                    });
                let e = next.ok_or_else(|| Error::Flow("walk reached a dead end".into()))?;
                path.push(e);
                w = self.edges[e].1;
            }
            let amount = path.iter().map(|&e| residual[e]).fold(f64::INFINITY, f64::min);
            path.iter().for_each(|&e| residual[e] -= amount);
            let idx = *self.lookup.get(&path).ok_or_else(|| Error::Flow("walk produced an unknown path".into()))?;
            match parts.iter_mut().find(|(p, _)| *p == idx) {
                Some(entry) => entry.1 += amount,
                None => parts.push((idx, amount)),
            }
            extracted += amount;
        }
        if extracted < 1.0 - 1e-6 {
            return Err(Error::Flow(format!("only {extracted} of the unit flow decomposed")));
        }
        Ok(parts)
    }
}

/// Simple source-sink paths by depth-first search in edge order.
fn enumerate_paths(edges: &[(usize, usize)], nv: usize, source: usize, sink: usize) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    let mut visited = vec![false; nv];
    let mut path = Vec::new();
    fn dfs(
        w: usize,
        sink: usize,
        edges: &[(usize, usize)],
        visited: &mut [bool],
        path: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) -> Result<()> {
        if w == sink {
            if out.len() >= MAX_PATHS {
                return Err(Error::Size(format!("more than {MAX_PATHS} simple paths")));
            }
            out.push(path.clone());
            return Ok(());
        }
        visited[w] = true;
        for (e, &(a, b)) in edges.iter().enumerate() {
            if a == w && !visited[b] {
                path.push(e);
                dfs(b, sink, edges, visited, path, out)?;
                path.pop();
            }
        }
        visited[w] = false;
        Ok(())
    }
    dfs(source, sink, edges, &mut visited, &mut path, &mut out)?;
    if out.is_empty() {
        return Err(Error::Graph("no source-sink path".into()));
    }
    Ok(out)
}

/// Samples a path index with probability equal to its weight in the flow
/// decomposition, so the expected indicator equals the flow.
pub fn sample_path_from_flow(graph: &FlowGraph, flow: &[f64], rng: &mut StreamRng) -> Result<usize> {
    let parts = graph.decompose(flow)?;
    let weights: Vec<f64> = parts.iter().map(|(_, w)| *w).collect();
    Ok(parts[crate::rng::sample_index(&weights, rng.random::<f64>())].0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_stream_examples() {
        let st = gen_sparse_mab(5, 101, 30, 1, 0.3, 0.2, 7).unwrap();
        let opts = st.planned_optima().unwrap();
        assert!(opts.iter().all(|&a| a == opts[0]));
        for t in 0..30 {
            let task = st.task(t).unwrap();
            assert!(task.losses.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
            assert!(task.empirical_gap().unwrap() >= 0.3 - GAP_TOL);
        }
        assert!(gen_sparse_mab(5, 10, 3, 1, 0.5, 0.3, 0).is_err());
    }

    #[test]
    fn regeneration_is_identical() {
        let a = gen_sparse_mab(4, 50, 5, 2, 0.2, 0.3, 99).unwrap().task(3).unwrap();
        let b = gen_sparse_mab(4, 50, 5, 2, 0.2, 0.3, 99).unwrap().task(3).unwrap();
        assert_eq!(a.losses, b.losses);
        let s1 = gen_sphere_blo(3, 20, 4, 1.0, 5).unwrap().task(2).unwrap();
        let s2 = gen_sphere_blo(3, 20, 4, 1.0, 5).unwrap().task(2).unwrap();
        assert_eq!(s1.losses, s2.losses);
    }

    #[test]
    fn outlier_counts() {
        assert_eq!(outlier_count(256, 0.0), 1);
        assert_eq!(outlier_count(256, 0.5), 16);
        assert_eq!(outlier_count(1000, 0.5), 32);
        let st = gen_outlier_mab(8, 4, 256, 2, 0.2, 0.1, 0.5, 3).unwrap();
        assert_eq!(st.outliers().unwrap().iter().filter(|o| **o).count(), 16);
    }

    #[test]
    fn sphere_losses_are_bounded() {
        let st = gen_sphere_blo(4, 200, 5, 0.0, 1).unwrap();
        for t in 0..5 {
            let task = st.task(t).unwrap();
            assert!(task.losses.iter().all(|l| linalg::norm(l) <= 1.0 + 1e-12));
            assert!((linalg::norm(&task.true_optimum) - 1.0).abs() < 1e-12);
        }
        let st = TaskStream::new(
            Generator::SphereBlo { concentration: f64::INFINITY, scale: 0.5, noise: 0.0 },
            3,
            10,
            6,
            2,
            0,
        )
        .unwrap();
        let first = st.task(0).unwrap().true_optimum;
        for t in 1..6 {
            let x = st.task(t).unwrap().true_optimum;
            assert!(linalg::norm(&linalg::sub(&x, &first)) < 1e-12);
        }
    }

    #[test]
    fn diamond_graph() {
        let g = FlowGraph::parse(DIAMOND).unwrap();
        assert_eq!(g.paths.len(), 2);
        assert_eq!(g.constraint_count(), 8);
        for x in &g.indicators {
            assert!(g.domain.contains(x, 1e-12));
        }
        // analytic center splits the unit flow evenly
        assert!(g.domain.center().iter().all(|v| (v - 0.5).abs() < 1e-9));
        let parts = g.decompose(&[0.3, 0.3, 0.7, 0.7]).unwrap();
        assert_eq!(parts.len(), 2);
        assert!(parts.iter().any(|(p, w)| g.paths[*p] == vec![2, 3] && (w - 0.7).abs() < 1e-12));
        assert!(matches!(g.decompose(&[0.3, 0.3, 0.3, 0.3]), Err(Error::Flow(_))));
    }

    #[test]
    fn parallel_and_pruning() {
        let g = FlowGraph::parse(PARALLEL).unwrap();
        assert_eq!(g.paths, vec![vec![0], vec![1]]);
        let g = FlowGraph::parse("SOURCE u\nSINK v\nu v\nv w\nx u\n# dangling edges are pruned\n").unwrap();
        assert_eq!(g.edges.len(), 1);
        assert!(matches!(FlowGraph::parse("SOURCE u\nSINK v\nu a\n"), Err(Error::Graph(_))));
        assert!(matches!(
            FlowGraph::parse("SOURCE u\nSINK v\nu a\na b\nb a\nb v\n"),
            Err(Error::Graph(_))
        ));
        let g = FlowGraph::parse(GRID6).unwrap();
        assert_eq!(g.paths.len(), 4);
        assert!(g.domain.is_strictly_interior(g.domain.center()));
    }

    #[test]
    fn path_sampling_single_path() {
        let g = FlowGraph::parse(GRID6).unwrap();
        let mut rng = stream(1, 0, 0, Purpose::Test);
        for p in 0..g.paths.len() {
            for _ in 0..5 {
                assert_eq!(sample_path_from_flow(&g, &g.indicators[p], &mut rng).unwrap(), p);
            }
        }
    }

    #[test]
    fn path_stream_optimum() {
        let (g, st) = gen_shortest_path("diamond", 50, 4, 1, 0.2, 0.8, 0.1, 4).unwrap();
        let target = st.planned_optima().unwrap()[0];
        for t in 0..4 {
            let task = st.task(t).unwrap();
            assert_eq!(task.optimal_index, Some(target));
            assert_eq!(task.true_optimum, g.indicators[target]);
            for l in &task.losses {
                for x in &g.indicators {
                    assert!(linalg::dot(l, x).abs() <= 1.0);
                }
            }
        }
    }
}
