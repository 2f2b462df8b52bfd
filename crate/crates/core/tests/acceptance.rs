//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Reference values come from brute-force computations written here
//! rather than from the library's own helpers.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use metabandit::bandit_learners::{barrier_for, ix_estimator, DikinAxes};
use metabandit::domains::{simplex_shrink, vertex, Constraint, Domain};
use metabandit::environments::{load_graph_text, sample_path_from_flow, FlowGraph, Generator, TaskStream};
use metabandit::harness::{preset, run_arms, run_experiment, write_outputs, Arms, ExperimentResult};
use metabandit::meta_learner::{ewoo_eta, task_similarity_v, Family, EWOO_NODES};
use metabandit::mirror_descent::{solve_barrier_newton, solve_tsallis_dual};
use metabandit::regularizers::{bregman, tsallis_entropy, BarrierConstants, Regularizer};
use metabandit::rng::{sample_index, stream, Purpose, StreamRng};
use rand::Rng;

type Outcome = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------- reference implementations ----------

fn psi_tsallis(x: &[f64], beta: f64) -> f64 {
    if beta == 1.0 {
        x.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum()
    } else {
        (1.0 - x.iter().map(|v| v.powf(beta)).sum::<f64>()) / (1.0 - beta)
    }
}

fn grad_tsallis(x: &[f64], beta: f64) -> Vec<f64> {
    if beta == 1.0 {
        x.iter().map(|v| v.ln() + 1.0).collect()
    } else {
        x.iter().map(|v| -beta * v.powf(beta - 1.0) / (1.0 - beta)).collect()
    }
}

fn breg_tsallis(x: &[f64], y: &[f64], beta: f64) -> f64 {
    let g = grad_tsallis(y, beta);
    psi_tsallis(x, beta) - psi_tsallis(y, beta) - x.iter().zip(y).zip(&g).map(|((a, b), c)| c * (a - b)).sum::<f64>()
}

/// Tsallis entropy `-psi_beta` of a histogram.
fn entropy_of_counts(counts: &[usize], beta: f64) -> f64 {
    let n: usize = counts.iter().sum();
    let p: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    -psi_tsallis(&p, beta)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthonormal basis of the row space of `rows` by Gram-Schmidt.
fn row_basis(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        let mut v = r.clone();
        for q in &basis {
            let c = dot(&v, q);
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
        }
        let n = norm(&v);
        if n > 1e-10 {
            basis.push(v.iter().map(|a| a / n).collect());
        }
    }
    basis
}

/// Orthogonal projection onto the null space of the equality rows.
fn project_null(rows: &[Vec<f64>], g: &[f64]) -> Vec<f64> {
    let mut v = g.to_vec();
    for q in row_basis(rows) {
        let c = dot(&v, &q);
        v.iter_mut().zip(&q).for_each(|(a, b)| *a -= c * b);
    }
    v
}

fn random_simplex(rng: &mut StreamRng, d: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..d).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Uniform point of `{x(a) >= eps/d}`.
fn random_floored(rng: &mut StreamRng, d: usize, eps: f64) -> Vec<f64> {
    random_simplex(rng, d).iter().map(|v| (1.0 - eps) * v + eps / d as f64).collect()
}

fn random_ball(rng: &mut StreamRng, d: usize, radius: f64) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..d).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        if norm(&x) < 1.0 {
            return x.iter().map(|v| v * radius).collect();
        }
    }
}

fn cube(d: usize) -> Domain {
    let mut cons = Vec::new();
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut a = vec![0.0; d];
            a[i] = s;
            cons.push(Constraint::new(a, 1.0));
        }
    }
    let verts = (0..1usize << d).map(|m| (0..d).map(|i| if m >> i & 1 == 1 { 1.0 } else { -1.0 }).collect()).collect();
    Domain::polytope(cons, vec![], verts).unwrap()
}

/// Interior point of a flow polytope: a random mixture of every path.
fn random_flow(rng: &mut StreamRng, g: &FlowGraph) -> Vec<f64> {
    let w = random_simplex(rng, g.paths.len());
    let mut f = vec![0.0; g.edges.len()];
    for (p, wp) in g.indicators.iter().zip(&w) {
        f.iter_mut().zip(p).for_each(|(a, b)| *a += wp * b);
    }
    f
}

fn mean_where(values: impl Iterator<Item = (usize, f64)>, keep: impl Fn(usize) -> bool) -> f64 {
    let (s, n) = values.filter(|(t, _)| keep(*t)).fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
    s / n as f64
}

// ---------- criteria ----------

fn c1_bregman() -> Outcome {
    let mut rng = stream(101, 0, 0, Purpose::Test);
    let cube3 = cube(3);
    let fams: Vec<(String, Regularizer, usize)> = vec![
        ("tsallis 0.3".into(), Regularizer::tsallis(0.3).map_err(err)?, 5),
        ("tsallis 0.5".into(), Regularizer::tsallis(0.5).map_err(err)?, 5),
        ("shannon".into(), Regularizer::tsallis(1.0).map_err(err)?, 5),
        ("ball barrier".into(), Regularizer::SphereBarrier, 4),
        ("cube barrier".into(), barrier_for(&cube3).map_err(err)?, 3),
    ];
    let mut worst_identity = 0.0f64;
    let mut worst_formula = 0.0f64;
    let mut negatives = 0usize;
    for (_, reg, d) in &fams {
        let beta = match reg {
            Regularizer::Tsallis { beta } => Some(*beta),
            _ => None,
        };
        for _ in 0..200 {
            let pts: Vec<Vec<f64>> = (0..8)
                .map(|_| if beta.is_some() { random_floored(&mut rng, *d, 0.1) } else { random_ball(&mut rng, *d, 0.95) })
                .collect();
            let mut mean = vec![0.0; *d];
            for p in &pts {
                mean.iter_mut().zip(p).for_each(|(a, b)| *a += b / 8.0);
            }
            let y = if beta.is_some() { random_floored(&mut rng, *d, 0.1) } else { random_ball(&mut rng, *d, 0.95) };
            // sum B(x_t||y) - sum B(x_t||mean) = T B(mean||y)
            let mut lhs = 0.0;
            for p in &pts {
                let a = bregman(reg, p, &y).map_err(err)?;
                let b = bregman(reg, p, &mean).map_err(err)?;
                if a < -1e-12 || b < -1e-12 {
                    negatives += 1;
                }
                lhs += a - b;
            }
            let rhs = 8.0 * bregman(reg, &mean, &y).map_err(err)?;
            worst_identity = worst_identity.max((lhs - rhs).abs() / (1.0 + rhs.abs()));
            if let Some(b) = beta {
                let own = breg_tsallis(&pts[0], &y, b);
                worst_formula = worst_formula.max((own - bregman(reg, &pts[0], &y).map_err(err)?).abs());
            }
        }
    }
    // beta-Lipschitzness of the entropy on the floored simplex
    let eps = 0.1;
    let mut violations = 0usize;
    let mut max_ratio = 0.0f64;
    for d in [2usize, 8, 32] {
        let lip = d as f64 * (d as f64 / eps).ln();
        let mut points: Vec<Vec<f64>> = (0..200).map(|_| random_floored(&mut rng, d, eps)).collect();
        points.push(vec![1.0 / d as f64; d]);
        points.push(simplex_shrink(&vertex(d, 0), eps).map_err(err)?);
        let h = 1e-5;
        for x in &points {
            for k in 0..100 {
                let b = 0.005 + 0.0099 * k as f64;
                let slope = (tsallis_entropy(x, b + h).map_err(err)? - tsallis_entropy(x, b - h).map_err(err)?) / (2.0 * h);
                max_ratio = max_ratio.max(slope.abs() / lip);
                if slope.abs() > lip {
                    violations += 1;
                }
            }
        }
    }
    Ok((
        worst_identity <= 1e-9 && worst_formula <= 1e-9 && negatives == 0 && violations == 0,
        format!(
            "identity err {worst_identity:.1e}, formula err {worst_formula:.1e}, negative {negatives}, \
             lipschitz violations {violations} (max slope/bound {max_ratio:.3})"
        ),
    ))
}

/// Zooming grid search over `{x in simplex_3 : x >= lo}`.
fn tsallis_grid_oracle(x1: &[f64], eta_l: &[f64], beta: f64, lo: f64) -> Vec<f64> {
    let obj = |p: &[f64]| dot(eta_l, p) + breg_tsallis(p, x1, beta);
    let (mut c0, mut c1, mut half) = (1.0 / 3.0, 1.0 / 3.0, 0.5f64);
    let n = 60;
    for _ in 0..14 {
        let mut best = (f64::INFINITY, c0, c1);
        for i in 0..=n {
            for j in 0..=n {
                let a = c0 - half + 2.0 * half * i as f64 / n as f64;
                let b = c1 - half + 2.0 * half * j as f64 / n as f64;
                let c = 1.0 - a - b;
                if a < lo || b < lo || c < lo || a <= 0.0 || b <= 0.0 || c <= 0.0 {
                    continue;
                }
                let v = obj(&[a, b, c]);
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        c0 = best.1;
        c1 = best.2;
        half *= 0.3;
    }
    vec![c0, c1, 1.0 - c0 - c1]
}

fn c2_solvers() -> Outcome {
    let mut rng = stream(102, 0, 0, Purpose::Test);
    let mut worst = 0.0f64;
    let mut count = 0;
    for i in 0..100 {
        let beta = [0.3, 0.5, 1.0][i % 3];
        let floor = if (i / 3) % 2 == 0 { 0.0 } else { 0.3 };
        let x1 = random_floored(&mut rng, 3, 0.3);
        let eta_l: Vec<f64> = (0..3).map(|_| 4.0 * rng.random::<f64>()).collect();
        let x = solve_tsallis_dual(&x1, &eta_l, beta, floor).map_err(err)?;
        let oracle = tsallis_grid_oracle(&x1, &eta_l, beta, floor / 3.0);
        let dev = x.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(dev);
        count += 1;
    }
    // barrier Newton: first-order optimality with hand-written gradients
    let mut worst_grad = 0.0f64;
    let ball = Domain::sphere(4).map_err(err)?;
    let cube3 = cube(3);
    let diamond = FlowGraph::parse(&load_graph_text("grid6").map_err(err)?).map_err(err)?;
    let body = diamond.domain.polytope_body().unwrap();
    let eq_rows: Vec<Vec<f64>> = body.equalities.iter().map(|c| c.a.clone()).collect();
    for i in 0..60 {
        let scale = 0.5 + 5.0 * rng.random::<f64>();
        let (dom, x1): (&Domain, Vec<f64>) = match i % 3 {
            0 => (&ball, random_ball(&mut rng, 4, 0.7)),
            1 => (&cube3, random_ball(&mut rng, 3, 0.7)),
            _ => (&diamond.domain, random_flow(&mut rng, &diamond)),
        };
        let d = x1.len();
        let eta_l: Vec<f64> = (0..d).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
        let reg = barrier_for(dom).map_err(err)?;
        let x = solve_barrier_newton(dom, &reg, &x1, &eta_l).map_err(err)?;
        let grad = |z: &[f64]| -> Vec<f64> {
            match i % 3 {
                0 => {
                    let s = 1.0 - dot(z, z);
                    z.iter().map(|v| 2.0 * v / s).collect()
                }
                1 => (0..3).map(|k| 1.0 / (1.0 - z[k]) - 1.0 / (1.0 + z[k])).collect(),
                _ => z.iter().map(|v| -1.0 / v).collect(),
            }
        };
        let (gx, g1) = (grad(&x), grad(&x1));
        let full: Vec<f64> = (0..d).map(|k| eta_l[k] + gx[k] - g1[k]).collect();
        let r = if i % 3 == 2 { norm(&project_null(&eq_rows, &full)) } else { norm(&full) };
        worst_grad = worst_grad.max(r);
    }
    Ok((
        worst <= 1e-3 && worst_grad <= 1e-8,
        format!("{count} dual solves, max |x - grid| {worst:.1e}; barrier Newton max gradient {worst_grad:.1e}"),
    ))
}

fn c3_estimators() -> Outcome {
    let mut rng = stream(103, 0, 0, Purpose::Test);
    let x = [0.4, 0.25, 0.2, 0.1, 0.05];
    let loss = [0.9, 0.3, 0.6, 0.2, 0.8];
    let n = 1_000_000usize;
    let mut max_z = 0.0f64;
    for gamma in [0.01, 0.0] {
        let mut sum = [0.0; 5];
        for _ in 0..n {
            let a = sample_index(&x, rng.random::<f64>());
            let e = ix_estimator(5, a, loss[a], x[a], gamma);
            sum.iter_mut().zip(&e).for_each(|(s, v)| *s += v);
        }
        for a in 0..5 {
            // lhat(a) = l(a)/(x(a)+gamma) w.p. x(a), else 0
            let v = loss[a] / (x[a] + gamma);
            let mean = v * x[a];
            let sd = (v * v * x[a] - mean * mean).sqrt() / (n as f64).sqrt();
            max_z = max_z.max((sum[a] / n as f64 - mean).abs() / sd);
        }
    }
    let grid6 = FlowGraph::parse(&load_graph_text("grid6").map_err(err)?).map_err(err)?;
    let body = grid6.domain.polytope_body().unwrap();
    let eq_rows: Vec<Vec<f64>> = body.equalities.iter().map(|c| c.a.clone()).collect();
    let flow_reg = barrier_for(&grid6.domain).map_err(err)?;
    let mut worst_bias = 0.0f64;
    for k in 0..50 {
        let (reg, tangent, x, l, target) = if k % 2 == 0 {
            let x = random_ball(&mut rng, 5, 0.9);
            let l = random_ball(&mut rng, 5, 1.0);
            (Regularizer::SphereBarrier, None, x, l.clone(), l)
        } else {
            let x = random_flow(&mut rng, &grid6);
            let l: Vec<f64> = (0..x.len()).map(|_| rng.random::<f64>()).collect();
            let target = project_null(&eq_rows, &l);
            (flow_reg.clone(), grid6.domain.tangent(), x, l, target)
        };
        let dk = DikinAxes::at(&reg, tangent, &x).map_err(err)?;
        let outcomes = 2 * dk.rank();
        let mut avg = vec![0.0; x.len()];
        for j in 0..dk.rank() {
            for s in [1.0, -1.0] {
                let y = dk.probe(j, s);
                let e = dk.estimate(j, s, dot(&l, &y));
                avg.iter_mut().zip(&e).for_each(|(a, v)| *a += v / outcomes as f64);
            }
        }
        let bias = norm(&avg.iter().zip(&target).map(|(a, b)| a - b).collect::<Vec<_>>());
        worst_bias = worst_bias.max(bias / (1.0 + norm(&target)));
    }
    Ok((
        max_z <= 3.0 && worst_bias <= 1e-9,
        format!("IX/unbiased max z {max_z:.2} over 2x{n} draws; BLO max relative bias {worst_bias:.1e} at 50 states"),
    ))
}

fn c4_ewoo_ftl() -> Outcome {
    let tasks = 512usize;
    let mut rng = stream(104, 0, 0, Purpose::Test);
    let mut min_slack = f64::INFINITY;
    for (rho, dd, g) in [(0.1, 1.0, 1.0), (0.5, 2.0, 3.0), (1.0, 0.5, 2.0)] {
        for pattern in 0..3 {
            let bs: Vec<f64> = (0..tasks)
                .map(|t| match pattern {
                    0 => dd * rng.random::<f64>(),
                    1 => if t % 2 == 0 { 0.0 } else { dd },
                    _ => if t < tasks / 2 { 0.0 } else { dd },
                })
                .collect();
            let (lo, hi, alpha) = (rho * dd / g, dd * (1.0 + rho * rho).sqrt() / g, 2.0 * rho * rho / (dd * g));
            let mut a_sum = 0.0;
            let mut played = 0.0;
            for (t, b) in bs.iter().enumerate() {
                let x = if t == 0 { 0.5 * (lo + hi) } else { ewoo_eta(a_sum, g * g * t as f64, lo, hi, alpha, EWOO_NODES).map_err(err)? };
                played += b * b / x + g * g * x;
                a_sum += b * b + rho * rho * dd * dd;
            }
            let b2: f64 = bs.iter().map(|b| b * b).sum();
            let tf = tasks as f64;
            let tail = dd * g * (1.0 + (tf + 1.0).ln()) / (2.0 * rho * rho);
            for i in 1..=100_000 {
                let x = 20.0 * dd / g * i as f64 / 100_000.0;
                let regret = played - (b2 / x + g * g * x * tf);
                let bound = (rho * rho * dd * dd / x).min(rho * dd * g) * tf + tail;
                min_slack = min_slack.min(bound - regret);
            }
        }
    }
    // FTL over Tsallis divergences on the floored simplex, d = 3
    let (d, eps) = (3usize, 0.2);
    let mut ftl_worst = f64::NEG_INFINITY;
    for beta in [0.3, 0.5, 1.0] {
        for pattern in 0..2 {
            let pts: Vec<Vec<f64>> = (0..tasks)
                .map(|t| {
                    let a = if pattern == 0 { rng.random_range(0..d) } else { t % d };
                    (0..d).map(|b| if a == b { 1.0 - eps + eps / d as f64 } else { eps / d as f64 }).collect()
                })
                .collect();
            let mut y = vec![1.0 / d as f64; d];
            let mut sum = vec![0.0; d];
            let mut played = 0.0;
            for (t, p) in pts.iter().enumerate() {
                played += breg_tsallis(p, &y, beta);
                sum.iter_mut().zip(p).for_each(|(s, v)| *s += v);
                y = sum.iter().map(|s| s / (t + 1) as f64).collect();
            }
            // comparator: best over a dense grid of the floored simplex and the mean
            let lo = eps / d as f64;
            let cost = |q: &[f64]| pts.iter().map(|p| breg_tsallis(p, q, beta)).sum::<f64>();
            let mut best = cost(&y);
            let n = 150;
            for i in 0..=n {
                for j in 0..=(n - i) {
                    let q = [i as f64 / n as f64, j as f64 / n as f64, (n - i - j) as f64 / n as f64];
                    if q.iter().all(|v| *v >= lo) {
                        best = best.min(cost(&q));
                    }
                }
            }
            let s = beta * (d as f64 / eps).powf(2.0 - beta);
            let bound = 8.0 * s * (1.0 + (tasks as f64).ln());
            ftl_worst = ftl_worst.max((played - best) / bound);
        }
    }
    Ok((
        min_slack >= 0.0 && ftl_worst <= 1.0,
        format!("EWOO min slack {min_slack:.3} over 9 sequences; FTL max regret/bound {ftl_worst:.2e}"),
    ))
}

fn c5_identification() -> Outcome {
    let mut cfg = preset("cor-guaranteed").map_err(err)?;
    cfg.run.replicas = 8;
    cfg.run.tasks = 250;
    cfg.run.m = 12000;
    cfg.run.d = 4;
    cfg.meta.eps = Some(0.1);
    cfg.environment = Generator::SparseMab { s: 4, delta: 0.5, noise: 0.25 };
    let res = run_arms(&cfg, Arms::MetaOnly, true).map_err(err)?;
    let recs = res.meta_records();
    if let Some(r) = recs.iter().find(|r| !r.is_ok()) {
        return Err(format!("run failed: {}", r.status));
    }
    let n = recs.len();
    let misses = recs.iter().filter(|r| r.estimated_index != r.true_index).count();
    let (d, eps, gap, m) = (4.0f64, 0.1, 0.5, 12000.0);
    let dk = d * (-3.0 * eps * gap * gap * m / (28.0 * d)).exp();
    let limit = dk + 3.0 * (dk * (1.0 - dk) / n as f64).sqrt();
    let rate = misses as f64 / n as f64;
    Ok((n == 2000 && rate <= limit, format!("{misses}/{n} misidentified (rate {rate:.2e}) vs limit {limit:.2e} (d kappa {dk:.3e})")))
}

fn final_quartile(result: &ExperimentResult, runs: &[metabandit::harness::ReplicaRun]) -> f64 {
    let tasks = result.resolved.tasks;
    let start = tasks - tasks / 4;
    mean_where(runs.iter().flat_map(|r| r.records.iter().map(|x| (x.task, x.regret))), |t| t >= start)
}

fn c6_benefit() -> Outcome {
    let cfg = preset("cor-mab-halfbeta").map_err(err)?;
    let res = run_experiment(&cfg, true).map_err(err)?;
    if let Some(e) = res.meta.iter().find_map(|r| r.error.clone()) {
        return Err(e);
    }
    let meta = final_quartile(&res, &res.meta);
    let base = final_quartile(&res, &res.baselines["independent_tsallis_half"]);
    let (d, m) = (cfg.run.d as f64, cfg.run.m as f64);
    let grid: Vec<f64> = (0..res.resolved.k)
        .map(|i| res.resolved.theta_lo + (res.resolved.theta_hi - res.resolved.theta_lo) * i as f64 / (res.resolved.k - 1) as f64)
        .collect();
    // mass on near-optimal grid points, with the entropy of estimated optima
    // (the criterion) and, for reference, of the true optima
    let near_mass = |run: &metabandit::harness::ReplicaRun, pick: fn(&metabandit::ExperimentRecord) -> usize| {
        let mut counts = vec![0usize; cfg.run.d];
        run.records.iter().for_each(|r| counts[pick(r)] += 1);
        let lead: Vec<f64> = grid.iter().map(|&b| (entropy_of_counts(&counts, b) * d.powf(b) * m / b).sqrt()).collect();
        let best = lead.iter().cloned().fold(f64::INFINITY, f64::min);
        (0..grid.len()).filter(|&i| lead[i] <= 1.1 * best).map(|i| run.distribution[i]).sum::<f64>()
    };
    let reps = res.meta.len() as f64;
    let mass = res.meta.iter().map(|r| near_mass(r, |x| x.estimated_index.unwrap())).sum::<f64>() / reps;
    let true_mass = res.meta.iter().map(|r| near_mass(r, |x| x.true_index.unwrap())).sum::<f64>() / reps;
    let reduction = 1.0 - meta / base;
    Ok((
        reduction >= 0.15 && mass >= 0.5,
        format!("final-quartile regret meta {meta:.2} vs tsallis {base:.2} ({:.1}% lower); MW mass near optimum {mass:.3} (true-optima entropy: {true_mass:.3})", 100.0 * reduction),
    ))
}

fn c7_fallback() -> Outcome {
    let mut cfg = preset("cor-mab-halfbeta").map_err(err)?;
    cfg.environment = Generator::SparseMab { s: cfg.run.d, delta: 0.3, noise: 0.2 };
    cfg.run.baselines.retain(|b| b.name() == "independent_tsallis_half");
    let res = run_experiment(&cfg, true).map_err(err)?;
    let meta = final_quartile(&res, &res.meta);
    let base = final_quartile(&res, &res.baselines["independent_tsallis_half"]);
    Ok((meta <= 1.25 * base, format!("s = d: meta {meta:.2} vs independent {base:.2} (ratio {:.3})", meta / base)))
}

fn c8_robust() -> Outcome {
    let (d, s) = (8usize, 2usize);
    let beta = 1.0 / (d as f64).ln();
    let reps = 32u32;
    let mut max_c = 0.0f64;
    let mut monotone = true;
    let mut lines = Vec::new();
    for p in [0.0, 0.5] {
        let mut excess = Vec::new();
        for tasks in [256usize, 1024, 4096] {
            let mut ex = 0.0;
            for r in 0..reps {
                let st = TaskStream::new(Generator::OutlierMab { s, delta: 0.3, noise: 0.1, p }, d, 4, tasks, 108, r).map_err(err)?;
                let opt = st.planned_optima().unwrap();
                let out = st.outliers().unwrap();
                let mut all = vec![0usize; d];
                let mut inliers = vec![0usize; d];
                for (t, &a) in opt.iter().enumerate() {
                    all[a] += 1;
                    if !out[t] {
                        inliers[a] += 1;
                    }
                }
                let h = entropy_of_counts(&all, beta);
                let formula = s as f64 + (d as f64).powf(1.0 - beta) / (tasks as f64).powf(beta * (1.0 - p));
                max_c = max_c.max(h / formula);
                ex += (h - entropy_of_counts(&inliers, beta)) / reps as f64;
            }
            excess.push(ex);
        }
        monotone &= excess.windows(2).all(|w| w[1] < w[0]);
        lines.push(format!("p={p}: excess {:.4} {:.4} {:.4}", excess[0], excess[1], excess[2]));
    }
    Ok((max_c <= 10.0 && monotone, format!("max H/formula {max_c:.3}; {}", lines.join("; "))))
}

fn c9_sphere() -> Outcome {
    let d = 8;
    let eps: f64 = 0.25;
    let dom = Domain::sphere(d).map_err(err)?;
    let fam = Family::Blo { d, constants: BarrierConstants::sphere() };
    let closed = |r: f64| -> f64 {
        let c = (1.0 + eps).powi(-2);
        ((1.0 - c * r * r) / (1.0 - c)).ln()
    };
    let mut worst = 0.0f64;
    for r in [0.0f64, 0.5, 0.99] {
        let q = (1.0 - r * r).sqrt();
        let mut est = Vec::new();
        for sgn in [1.0, -1.0] {
            let mut u = vec![0.0; d];
            u[0] = r;
            u[1] = sgn * q;
            est.push(u);
        }
        let v = task_similarity_v(&fam, &dom, eps, &est).map_err(err)?;
        worst = worst.max((v - closed(r)).abs());
    }
    // concentration -> inf with no noise: every optimum is the global direction
    let st = TaskStream::new(Generator::SphereBlo { concentration: f64::INFINITY, scale: 0.5, noise: 0.0 }, d, 10, 50, 109, 0)
        .map_err(err)?;
    let optima: Vec<Vec<f64>> = (0..50).map(|t| st.task(t).map(|k| k.true_optimum)).collect::<Result<_, _>>().map_err(err)?;
    let r = norm(&optima.iter().fold(vec![0.0; d], |acc, x| acc.iter().zip(x).map(|(a, b)| a + b / 50.0).collect()));
    worst = worst.max((task_similarity_v(&fam, &dom, eps, &optima).map_err(err)? - closed(r)).abs());

    let clustered = preset("cor-sphere").map_err(err)?;
    let mut uniform = clustered.clone();
    uniform.environment = Generator::SphereBlo { concentration: 0.0, scale: 0.5, noise: 0.3 };
    let rc = run_arms(&clustered, Arms::MetaOnly, true).map_err(err)?;
    let ru = run_arms(&uniform, Arms::MetaOnly, true).map_err(err)?;
    let avg = |res: &ExperimentResult| mean_where(res.meta.iter().flat_map(|r| r.records.iter().map(|x| (x.task, x.regret))), |_| true);
    let (c, u) = (avg(&rc), avg(&ru));
    Ok((worst <= 1e-6 && c < u, format!("closed form max err {worst:.1e} (stream r = {r:.6}); meta regret clustered {c:.2} vs uniform {u:.2}")))
}

fn c10_path() -> Outcome {
    let g = FlowGraph::parse(&load_graph_text("diamond").map_err(err)?).map_err(err)?;
    let mut rng = stream(110, 0, 0, Purpose::Test);
    let flow = random_flow(&mut rng, &g);
    let n = 100_000usize;
    let mut hits = vec![0usize; g.edges.len()];
    for _ in 0..n {
        let p = sample_path_from_flow(&g, &flow, &mut rng).map_err(err)?;
        g.paths[p].iter().for_each(|&e| hits[e] += 1);
    }
    let mut max_z = 0.0f64;
    for (e, &h) in hits.iter().enumerate() {
        let f = flow[e];
        let sd = (f * (1.0 - f) / n as f64).sqrt().max(1e-12);
        max_z = max_z.max((h as f64 / n as f64 - f).abs() / sd);
    }
    let cfg = preset("cor-path").map_err(err)?;
    let res = run_arms(&cfg, Arms::MetaOnly, true).map_err(err)?;
    let recs = res.meta_records();
    if let Some(r) = recs.iter().find(|r| !r.is_ok()) {
        return Err(format!("run failed: {}", r.status));
    }
    let shared = res.meta.iter().all(|run| run.records.iter().all(|r| r.true_index == run.records[0].true_index));
    let tasks = res.resolved.tasks;
    let per_task: Vec<f64> = (0..tasks)
        .map(|t| mean_where(recs.iter().map(|r| (r.task, r.regret)), |u| u == t))
        .collect();
    // task-averaged regret after each task
    let mut acc = 0.0;
    let running: Vec<f64> = per_task.iter().enumerate().map(|(t, v)| { acc += v; acc / (t + 1) as f64 }).collect();
    let q = tasks / 4;
    let first = per_task[..q].iter().sum::<f64>() / q as f64;
    let last = per_task[tasks - q..].iter().sum::<f64>() / q as f64;
    let tf: Vec<f64> = (0..tasks).map(|t| t as f64).collect();
    let (mx, my) = (tf.iter().sum::<f64>() / tasks as f64, per_task.iter().sum::<f64>() / tasks as f64);
    let slope = tf.iter().zip(&per_task).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / tf.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    Ok((
        max_z <= 3.0 && shared && last < first && slope < 0.0 && running[tasks - 1] < running[q - 1],
        format!(
            "edge marginal max z {max_z:.2}; shared optimum {shared}; regret first quartile {first:.2} -> last {last:.2}, \
             slope {slope:.4}, task-averaged {:.2} -> {:.2}",
            running[q - 1],
            running[tasks - 1]
        ),
    ))
}

fn read_outputs(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for name in ["records.csv", "summary.json", "bounds.csv"] {
        out.insert(name.to_string(), std::fs::read(dir.join(name)).map_err(err)?);
    }
    Ok(out)
}

fn c11_reproducible() -> Outcome {
    let cfg = preset("smoke").map_err(err)?;
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut files = Vec::new();
    for (i, parallel) in [true, true, false].into_iter().enumerate() {
        let dir = tmp.path().join(format!("run{i}"));
        let res = run_experiment(&cfg, parallel).map_err(err)?;
        write_outputs(&dir, &res).map_err(err)?;
        files.push(read_outputs(&dir)?);
    }
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/smoke_records.csv");
    let golden = std::fs::read(&golden_path).map_err(err)?;
    let same = files[0] == files[1] && files[0] == files[2];
    let matches_golden = files[0]["records.csv"] == golden;
    Ok((
        same && matches_golden,
        format!("two concurrent runs and a serial run identical: {same}; records match golden file: {matches_golden}"),
    ))
}

fn main() -> ExitCode {
    let criteria: Vec<(&str, Duration, fn() -> Outcome)> = vec![
        ("1 bregman/entropy core", Duration::from_secs(30), c1_bregman),
        ("2 solver oracle equivalence", Duration::from_secs(60), c2_solvers),
        ("3 estimator contracts", Duration::from_secs(60), c3_estimators),
        ("4 EWOO and FTL regret lemmas", Duration::from_secs(120), c4_ewoo_ftl),
        ("5 best-arm identification", Duration::from_secs(300), c5_identification),
        ("6 meta-learning benefit", Duration::from_secs(900), c6_benefit),
        ("7 dissimilar-task fallback", Duration::from_secs(900), c7_fallback),
        ("8 robustness scaling", Duration::from_secs(120), c8_robust),
        ("9 BLO sphere similarity", Duration::from_secs(600), c9_sphere),
        ("10 shortest-path pipeline", Duration::from_secs(600), c10_path),
        ("11 reproducibility", Duration::from_secs(60), c11_reproducible),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, limit, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.starts_with(&format!("{p} "))) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok((ok, detail)) => (ok && took <= limit, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} [{name}] {detail} ({:.1}s, limit {}s)",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
