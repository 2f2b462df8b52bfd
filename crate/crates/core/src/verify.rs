//! Quick property suites behind the `verify` command. Each check compares a
//! module against a brute-force computation on random instances.

use rand::Rng;
use serde::Serialize;

use crate::bandit_learners::{ix_estimator, DikinAxes};
use crate::domains::{simplex_shrink, vertex, Constraint, Domain};
use crate::error::Result;
use crate::linalg;
use crate::meta_learner::{ewoo_eta, MetaState, Mode, Family, EWOO_NODES};
use crate::mirror_descent::{solve_barrier_newton, solve_tsallis_dual, stationarity_residual};
use crate::regularizers::{bregman, tsallis_entropy, Regularizer};
use crate::rng::{stream, Purpose, StreamRng};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.into(), passed, detail }
}

fn random_simplex(rng: &mut StreamRng, d: usize, floor: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..d).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = w.iter().sum();
    let p: Vec<f64> = w.iter().map(|v| v / s).collect();
    simplex_shrink(&p, floor).unwrap_or(p)
}

fn random_ball(rng: &mut StreamRng, d: usize, radius: f64) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..d).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        if linalg::norm(&x) < 1.0 {
            return linalg::scale(&x, radius);
        }
    }
}

fn cube(d: usize) -> Domain {
    let mut cons = Vec::new();
    for i in 0..d {
        let mut a = vec![0.0; d];
        a[i] = 1.0;
        cons.push(Constraint::new(a.clone(), 1.0));
        a[i] = -1.0;
        cons.push(Constraint::new(a, 1.0));
    }
    let verts = (0..1usize << d).map(|m| (0..d).map(|i| if m >> i & 1 == 1 { 1.0 } else { -1.0 }).collect()).collect();
    Domain::polytope(cons, vec![], verts).expect("cube is a valid polytope")
}

/// Mean-as-minimizer identity and non-negativity of Bregman divergences.
pub fn bregman_identity(seed: u64, sets: usize) -> Result<Check> {
    let mut rng = stream(seed, 0, 0, Purpose::Test);
    let mut worst = 0.0f64;
    let mut negative = 0;
    let cube3 = cube(3);
    let families: Vec<(Regularizer, usize)> = vec![
        (Regularizer::tsallis(0.3)?, 4),
        (Regularizer::tsallis(0.5)?, 4),
        (Regularizer::tsallis(1.0)?, 4),
        (Regularizer::SphereBarrier, 3),
        (crate::bandit_learners::barrier_for(&cube3)?, 3),
    ];
    for (reg, d) in &families {
        for _ in 0..sets {
            let pts: Vec<Vec<f64>> = (0..8)
                .map(|_| match reg {
                    Regularizer::Tsallis { .. } => random_simplex(&mut rng, *d, 0.05),
                    _ => random_ball(&mut rng, *d, 0.9),
                })
                .collect();
            let mean = linalg::mean(&pts);
            let lhs: f64 = pts.iter().map(|p| bregman(reg, p, &mean)).sum::<Result<f64>>()?;
            let rhs: f64 = pts.iter().map(|p| reg.value(p)).sum::<Result<f64>>()? - 8.0 * reg.value(&mean)?;
            worst = worst.max((lhs - rhs).abs() / (1.0 + rhs.abs()));
            let y = &pts[0];
            if pts.iter().any(|p| bregman(reg, p, y).map_or(true, |b| b < -1e-12)) {
                negative += 1;
            }
        }
    }
    Ok(check(
        "bregman mean-as-minimizer",
        worst <= 1e-9 && negative == 0,
        format!("max relative identity error {worst:.2e}, negative divergences {negative}"),
    ))
}

/// Tsallis entropy is `d log(d/eps)`-Lipschitz in beta on the shrunk simplex.
pub fn tsallis_lipschitz(seed: u64, points: usize) -> Result<Check> {
    let mut rng = stream(seed, 0, 1, Purpose::Test);
    let eps = 0.1;
    let mut violations = 0;
    let mut ratio = 0.0f64;
    for d in [2usize, 8, 32] {
        let lip = d as f64 * (d as f64 / eps).ln();
        for _ in 0..points {
            let x = random_simplex(&mut rng, d, eps);
            for k in 0..20 {
                let b = 0.025 + 0.05 * k as f64;
                let h = 1e-4;
                let slope = (tsallis_entropy(&x, b + h)? - tsallis_entropy(&x, b)?).abs() / h;
                ratio = ratio.max(slope / lip);
                if slope > lip {
                    violations += 1;
                }
            }
        }
    }
    Ok(check("tsallis beta-lipschitz", violations == 0, format!("max slope / bound {ratio:.3}")))
}

/// Dual solve against a grid search over the 3-simplex.
pub fn tsallis_solver(seed: u64, instances: usize) -> Result<Check> {
    let mut rng = stream(seed, 0, 2, Purpose::Test);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let beta = [0.3, 0.5, 1.0][i % 3];
        let floor = if i % 2 == 0 { 0.0 } else { 0.3 };
        let x1 = random_simplex(&mut rng, 3, 0.2);
        let l: Vec<f64> = (0..3).map(|_| 3.0 * rng.random::<f64>()).collect();
        let x = solve_tsallis_dual(&x1, &l, beta, floor)?;
        let reg = Regularizer::tsallis(beta)?;
        let obj = |p: &[f64]| bregman(&reg, p, &x1).map(|b| b + linalg::dot(&l, p)).unwrap_or(f64::INFINITY);
        let lo = floor / 3.0;
        let n = 400;
        let mut best = (f64::INFINITY, vec![]);
        for a in 0..=n {
            for b in 0..=(n - a) {
                let p = [a as f64 / n as f64, b as f64 / n as f64, (n - a - b) as f64 / n as f64];
                if p.iter().any(|v| *v < lo || *v <= 0.0) {
                    continue;
                }
                let v = obj(&p);
                if v < best.0 {
                    best = (v, p.to_vec());
                }
            }
        }
        let dist = linalg::norm(&linalg::sub(&x, &best.1));
        worst = worst.max(dist.min((obj(&x) - best.0).max(0.0).sqrt()).max(if obj(&x) > best.0 + 1e-6 { dist } else { 0.0 }));
    }
    Ok(check("tsallis dual solve vs grid", worst <= 1e-2, format!("max deviation {worst:.2e}")))
}

/// Barrier Newton stationarity on the ball and the cube.
pub fn barrier_solver(seed: u64, instances: usize) -> Result<Check> {
    let mut rng = stream(seed, 0, 3, Purpose::Test);
    let mut worst = 0.0f64;
    let bodies = [Domain::sphere(3)?, cube(3)];
    for i in 0..instances {
        let dom = &bodies[i % 2];
        let reg = crate::bandit_learners::barrier_for(dom)?;
        let x1 = random_ball(&mut rng, 3, 0.5);
        let l: Vec<f64> = (0..3).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
        let x = solve_barrier_newton(dom, &reg, &x1, &l)?;
        let g1 = reg.gradient(&x1)?;
        let lin: Vec<f64> = l.iter().zip(&g1).map(|(a, b)| a - b).collect();
        worst = worst.max(stationarity_residual(&reg, dom.tangent(), &lin, &x)?);
    }
    Ok(check("barrier newton stationarity", worst <= 1e-8, format!("max reduced gradient {worst:.2e}")))
}

/// IX under-estimation in expectation and exact BLO unbiasedness.
pub fn estimators(seed: u64, draws: usize) -> Result<Check> {
    let mut rng = stream(seed, 0, 4, Purpose::Test);
    let x = [0.5, 0.3, 0.2];
    let loss = [0.7, 0.4, 0.9];
    let gamma = 0.05;
    let mut sum = [0.0; 3];
    for _ in 0..draws {
        let a = crate::rng::sample_index(&x, rng.random::<f64>());
        let e = ix_estimator(3, a, loss[a], x[a], gamma);
        sum.iter_mut().zip(&e).for_each(|(s, v)| *s += v);
    }
    let mut z = 0.0f64;
    for a in 0..3 {
        let mean = loss[a] * x[a] / (x[a] + gamma);
        let var = loss[a].powi(2) * x[a] / (x[a] + gamma).powi(2) - mean * mean;
        z = z.max((sum[a] / draws as f64 - mean).abs() / (var / draws as f64).sqrt());
    }
    let reg = Regularizer::SphereBarrier;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let xc = random_ball(&mut rng, 3, 0.8);
        let l = random_ball(&mut rng, 3, 1.0);
        let dk = DikinAxes::at(&reg, None, &xc)?;
        let mut avg = vec![0.0; 3];
        for j in 0..dk.rank() {
            for s in [1.0, -1.0] {
                let y = dk.probe(j, s);
                let e = dk.estimate(j, s, linalg::dot(&l, &y));
                avg.iter_mut().zip(&e).for_each(|(a, v)| *a += v / (2.0 * dk.rank() as f64));
            }
        }
        worst = worst.max(linalg::norm(&linalg::sub(&avg, &l)));
    }
    Ok(check(
        "loss estimators",
        z <= 3.0 && worst <= 1e-9,
        format!("IX max z-score {z:.2}, BLO max bias {worst:.2e}"),
    ))
}

/// EWOO regret against a dense comparator grid.
pub fn ewoo_regret(seed: u64, tasks: usize) -> Result<Check> {
    let mut rng = stream(seed, 0, 5, Purpose::Test);
    let (d, g, rho) = (1.5f64, 2.0f64, 0.5f64);
    let (lo, hi, alpha) = (rho * d / g, d * (1.0 + rho * rho).sqrt() / g, 2.0 * rho * rho / (d * g));
    let b2: Vec<f64> = (0..tasks).map(|_| (d * rng.random::<f64>()).powi(2)).collect();
    let mut a_sum = 0.0;
    let mut played = 0.0;
    for (t, b) in b2.iter().enumerate() {
        let x = if t == 0 { 0.5 * (lo + hi) } else { ewoo_eta(a_sum, g * g * t as f64, lo, hi, alpha, EWOO_NODES)? };
        played += b / x + g * g * x;
        a_sum += b + rho * rho * d * d;
    }
    let total_b: f64 = b2.iter().sum();
    let tf = tasks as f64;
    let mut slack = f64::INFINITY;
    for i in 1..=20_000 {
        let x = 10.0 * d / g * i as f64 / 20_000.0;
        let bound = (rho * rho * d * d / x).min(rho * d * g) * tf + d * g * (1.0 + (tf + 1.0).ln()) / (2.0 * rho * rho);
        slack = slack.min(bound - (played - (total_b / x + g * g * x * tf)));
    }
    Ok(check("ewoo regret lemma", slack >= 0.0, format!("minimum slack {slack:.4}")))
}

/// FTL over Tsallis divergences on vertex streams.
pub fn ftl_regret(seed: u64, tasks: usize) -> Result<Check> {
    let mut rng = stream(seed, 0, 6, Purpose::Test);
    let (d, eps, beta) = (4usize, 0.2, 0.5);
    let reg = Regularizer::tsallis(beta)?;
    let pts: Vec<Vec<f64>> =
        (0..tasks).map(|_| simplex_shrink(&vertex(d, rng.random_range(0..d)), eps)).collect::<Result<_>>()?;
    let mut y = vec![1.0 / d as f64; d];
    let mut sum = vec![0.0; d];
    let mut played = 0.0;
    for (t, p) in pts.iter().enumerate() {
        played += bregman(&reg, p, &y)?;
        sum.iter_mut().zip(p).for_each(|(s, v)| *s += v);
        y = sum.iter().map(|s| s / (t + 1) as f64).collect();
    }
    let best: f64 = pts.iter().map(|p| bregman(&reg, p, &y)).sum::<Result<f64>>()?;
    let s = beta * (d as f64 / eps).powf(2.0 - beta);
    let bound = 8.0 * s * (1.0 + (tasks as f64).ln());
    Ok(check("ftl regret lemma", played - best <= bound, format!("regret {:.4} vs bound {bound:.1}", played - best)))
}

/// Meta steps are deterministic and snapshots restore exactly.
pub fn meta_determinism(seed: u64) -> Result<Check> {
    let dom = Domain::simplex(4)?;
    let run = || -> Result<MetaState> {
        let mut rng = stream(seed, 0, 7, Purpose::Test);
        let mut st = MetaState::new(Mode::MabImplicit, Family::Mab { d: 4, eps: 0.1 }, 50, 10, 0.5, &[0.5, 0.75, 1.0])?;
        for _ in 0..10 {
            let p = st.propose(&dom, rng.random())?;
            st.meta_step(&dom, &p, &vertex(4, rng.random_range(0..4)))?;
        }
        Ok(st)
    };
    let (a, b) = (run()?, run()?);
    let back = MetaState::restore(&a.snapshot()?)?;
    Ok(check("meta determinism", a == b && back == a, "two runs and a snapshot round trip".into()))
}

/// Runs every suite with sizes suited to an interactive command.
pub fn run_all(seed: u64) -> Vec<Check> {
    let suites: Vec<(&str, Box<dyn Fn() -> Result<Check>>)> = vec![
        ("bregman mean-as-minimizer", Box::new(|| bregman_identity(seed, 50))),
        ("tsallis beta-lipschitz", Box::new(|| tsallis_lipschitz(seed, 20))),
        ("tsallis dual solve vs grid", Box::new(|| tsallis_solver(seed, 12))),
        ("barrier newton stationarity", Box::new(|| barrier_solver(seed, 20))),
        ("loss estimators", Box::new(|| estimators(seed, 200_000))),
        ("ewoo regret lemma", Box::new(|| ewoo_regret(seed, 256))),
        ("ftl regret lemma", Box::new(|| ftl_regret(seed, 256))),
        ("meta determinism", Box::new(|| meta_determinism(seed))),
    ];
    suites
        .into_iter()
        .map(|(name, f)| f().unwrap_or_else(|e| check(name, false, format!("error: {e}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn quick_suites_pass() {
        for c in super::run_all(3) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
