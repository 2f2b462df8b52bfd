//! Deterministic inputs shared by the benchmarks.

use metabandit::domains::vertex;
use metabandit::meta_learner::{uniform_grid, Family, MetaState, Mode};
use metabandit::Domain;

/// A strictly positive point of the simplex with uneven coordinates.
pub fn skewed_simplex(d: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..d).map(|i| 1.0 + (i as f64 * 0.7).sin().abs()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Loss vector in `[0, 1]^d`.
pub fn losses(d: usize, phase: f64) -> Vec<f64> {
    (0..d).map(|i| 0.5 + 0.5 * (i as f64 * 1.3 + phase).cos()).collect()
}

/// Interior point of the unit ball at radius `r`.
pub fn ball_point(d: usize, r: f64) -> Vec<f64> {
    let v = losses(d, 0.4).iter().map(|x| x - 0.5).collect::<Vec<_>>();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| r * x / n).collect()
}

/// Meta-learner over a `k`-point beta grid after `warm` tasks whose
/// estimated optima cycle through two arms.
pub fn warm_meta(d: usize, k: usize, warm: usize) -> (Domain, MetaState) {
    let dom = Domain::simplex(d).unwrap();
    let grid = uniform_grid(0.5, 1.0, k).unwrap();
    let mut st = MetaState::new(Mode::MabImplicit, Family::Mab { d, eps: 0.2 }, 500, 400, 0.2, &grid).unwrap();
    for t in 0..warm {
        let p = st.propose(&dom, (t as f64 * 0.37).fract()).unwrap();
        st.meta_step(&dom, &p, &vertex(d, t % 2)).unwrap();
    }
    (dom, st)
}
