//! Within-task bandit learners. Each runs the `m` rounds of one task with a
//! given initialization and step size and reports a `TaskOutcome`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domains::{Domain, DomainKind, MEMBERSHIP_TOL};
use crate::environments::Task;
use crate::error::{param, Error, Result};
use crate::linalg::{self, Mat};
use crate::mirror_descent::{omd_iterate, OmdState};
use crate::regularizers::Regularizer;
use crate::rng::{sample_index, StreamRng};

/// What was played each round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Actions {
    Arms(Vec<usize>),
    Points { points: Vec<Vec<f64>>, paths: Option<Vec<usize>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_index: usize,
    /// `argmin_{x in K} <lhat_t, x>`.
    pub estimated_optimum: Vec<f64>,
    pub estimated_index: Option<usize>,
    pub true_optimum: Vec<f64>,
    pub true_index: Option<usize>,
    /// Observed loss minus `sum_i l_i(true optimum)`.
    pub realized_regret: f64,
    /// Same with each round's loss replaced by its expectation `<l_i, x_i>`.
    pub expected_regret: f64,
    /// Observed loss minus `sum_i l_i(estimated optimum)`.
    pub estimated_regret: f64,
    pub estimator_sum: Vec<f64>,
    pub actions: Actions,
    pub losses: Vec<f64>,
    /// Smallest sampling probability over all rounds (MAB only).
    pub min_probability: Option<f64>,
}

impl TaskOutcome {
    /// Whether the estimated optimum is the true one (discrete bodies only).
    pub fn identified(&self) -> Option<bool> {
        Some(self.estimated_index? == self.true_index?)
    }
}

/// Implicit-exploration estimator: `loss / (prob + gamma)` on the pulled arm.
pub fn ix_estimator(d: usize, arm: usize, loss: f64, prob: f64, gamma: f64) -> Vec<f64> {
    let mut l = vec![0.0; d];
    l[arm] = loss / (prob + gamma);
    l
}

/// Minimizer of `<lhat, x>` over the domain, with the vertex index when the
/// body is discrete. Ties go to the lowest index; the zero vector on the
/// ball maps to the center.
pub fn estimated_optimum(domain: &Domain, lhat: &[f64]) -> Result<(Vec<f64>, Option<usize>)> {
    if lhat.len() != domain.dim() || lhat.iter().any(|v| !v.is_finite()) {
        return param("estimator sum must be finite and match the dimension");
    }
    let argmin = |vals: &[f64]| (0..vals.len()).fold(0, |b, i| if vals[i] < vals[b] { i } else { b });
    Ok(match domain.kind() {
        DomainKind::Simplex => {
            let a = argmin(lhat);
            (crate::domains::vertex(lhat.len(), a), Some(a))
        }
        DomainKind::Sphere => {
            let n = linalg::norm(lhat);
            if n == 0.0 {
                (domain.center().to_vec(), None)
            } else {
                (linalg::scale(lhat, -1.0 / n), None)
            }
        }
        DomainKind::Polytope(p) => {
            if p.vertices.is_empty() {
                return Err(Error::Configuration("polytope has no enumerated vertices".into()));
            }
            let vals: Vec<f64> = p.vertices.iter().map(|v| linalg::dot(v, lhat)).collect();
            let i = argmin(&vals);
            (p.vertices[i].clone(), Some(i))
        }
    })
}

fn check_mab_init(init: &[f64], eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return param(format!("eps must lie in (0,1], got {eps}"));
    }
    let lo = eps / init.len() as f64;
    if let Some(v) = init.iter().find(|v| **v < lo - 1e-12) {
        return Err(Error::DomainMembership(format!("initialization coordinate {v} below eps/d = {lo}")));
    }
    Ok(())
}

fn run_mab(
    init: &[f64],
    eta: f64,
    beta: f64,
    floor: f64,
    gamma: f64,
    task: &Task,
    rng: &mut StreamRng,
) -> Result<TaskOutcome> {
    let d = init.len();
    if task.dim() != d {
        return param("task and initialization dimensions differ");
    }
    let domain = Domain::simplex(d)?;
    let mut state = OmdState::new(&domain, Regularizer::tsallis(beta)?, init.to_vec(), eta, floor)?;
    let m = task.rounds();
    let mut arms = Vec::with_capacity(m);
    let mut losses = Vec::with_capacity(m);
    let mut expected = 0.0;
    let mut min_prob = f64::INFINITY;
    let lo = floor / d as f64;
    for i in 0..m {
        let x = state.iterate().to_vec();
        let pmin = x.iter().cloned().fold(f64::INFINITY, f64::min);
        if floor > 0.0 && pmin < lo - 1e-12 {
            return Err(Error::InvariantViolation(format!("sampling probability {pmin} below floor {lo}")));
        }
        min_prob = min_prob.min(pmin);
        let arm = sample_index(&x, rng.random::<f64>());
        let loss = task.mab_loss(i, arm)?;
        expected += task.linear_loss(i, &x);
        arms.push(arm);
        losses.push(loss);
        omd_iterate(&mut state, &ix_estimator(d, arm, loss, x[arm], gamma))?;
    }
    finish(&domain, task, state.cumulative().to_vec(), Actions::Arms(arms), losses, expected, Some(min_prob))
}

fn finish(
    domain: &Domain,
    task: &Task,
    estimator_sum: Vec<f64>,
    actions: Actions,
    losses: Vec<f64>,
    expected: f64,
    min_probability: Option<f64>,
) -> Result<TaskOutcome> {
    let (estimated_optimum, estimated_index) = estimated_optimum(domain, &estimator_sum)?;
    let observed: f64 = losses.iter().sum();
    let best = task.total_loss(&task.true_optimum);
    Ok(TaskOutcome {
        task_index: task.index,
        estimated_regret: observed - task.total_loss(&estimated_optimum),
        estimated_optimum,
        estimated_index,
        true_optimum: task.true_optimum.clone(),
        true_index: task.optimal_index,
        realized_regret: observed - best,
        expected_regret: expected - best,
        estimator_sum,
        actions,
        losses,
        min_probability,
    })
}

/// Tsallis OMD with implicit-exploration estimators (`gamma > 0`).
pub fn run_task_mab_implicit(
    init: &[f64],
    eta: f64,
    beta: f64,
    eps: f64,
    gamma: f64,
    task: &Task,
    rng: &mut StreamRng,
) -> Result<TaskOutcome> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return param(format!("implicit exploration needs gamma > 0, got {gamma}"));
    }
    check_mab_init(init, eps)?;
    run_mab(init, eta, beta, 0.0, gamma, task, rng)
}

/// Tsallis OMD with unbiased estimators on the floored simplex `x(a) >= eps/d`.
pub fn run_task_mab_guaranteed(
    init: &[f64],
    eta: f64,
    beta: f64,
    eps: f64,
    task: &Task,
    rng: &mut StreamRng,
) -> Result<TaskOutcome> {
    if !(eps > 0.0 && eps < 1.0) {
        return param(format!("guaranteed exploration needs eps in (0,1), got {eps}"));
    }
    check_mab_init(init, eps)?;
    run_mab(init, eta, beta, eps, 0.0, task, rng)
}

/// The log-barrier of a ball or polytope domain.
pub fn barrier_for(domain: &Domain) -> Result<Regularizer> {
    match domain.kind() {
        DomainKind::Sphere => Ok(Regularizer::SphereBarrier),
        DomainKind::Polytope(p) => Ok(Regularizer::PolytopeBarrier { constraints: p.inequalities.clone() }),
        DomainKind::Simplex => param("the simplex uses the Tsallis family, not a barrier"),
    }
}

/// Principal axes of the Dikin ellipsoid at `x`, restricted to the affine
/// hull of the body: `axes[j] = N v_j` with `N^T H N = sum_j lambda_j v_j v_j^T`.
#[derive(Debug, Clone)]
pub struct DikinAxes {
    pub center: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub axes: Vec<Vec<f64>>,
}

impl DikinAxes {
    pub fn at(reg: &Regularizer, tangent: Option<&Mat>, x: &[f64]) -> Result<Self> {
        let h = reg.hessian(x)?;
        let reduced = match tangent {
            Some(n) => h.congruence(n),
            None => h,
        };
        let eig = linalg::jacobi_eigen(&reduced)?;
        if let Some(v) = eig.values.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Numerical(format!("barrier Hessian not positive definite (eigenvalue {v:e})")));
        }
        let axes = (0..eig.values.len())
            .map(|j| {
                let v = eig.vectors.column(j);
                match tangent {
                    Some(n) => n.matvec(&v),
                    None => v,
                }
            })
            .collect();
        Ok(Self { center: x.to_vec(), eigenvalues: eig.values, axes })
    }

    pub fn rank(&self) -> usize {
        self.axes.len()
    }

    /// `x + s lambda_j^(-1/2) u_j`.
    pub fn probe(&self, j: usize, sign: f64) -> Vec<f64> {
        linalg::add_scaled(&self.center, sign / self.eigenvalues[j].sqrt(), &self.axes[j])
    }

    /// `r * loss * s * lambda_j^(1/2) u_j`, unbiased for the loss projected
    /// onto the affine hull when `(j, s)` is uniform.
    pub fn estimate(&self, j: usize, sign: f64, loss: f64) -> Vec<f64> {
        linalg::scale(&self.axes[j], self.rank() as f64 * loss * sign * self.eigenvalues[j].sqrt())
    }
}

/// Barrier OMD with one-point Dikin-ellipsoid estimators.
pub fn run_task_blo(domain: &Domain, init: &[f64], eta: f64, eps: f64, task: &Task, rng: &mut StreamRng) -> Result<TaskOutcome> {
    if !(eps > 0.0 && eps <= 1.0) {
        return param(format!("eps must lie in (0,1], got {eps}"));
    }
    if task.dim() != domain.dim() {
        return param("task and domain dimensions differ");
    }
    let reg = barrier_for(domain)?;
    let tangent = domain.tangent().cloned();
    let mut state = OmdState::new(domain, reg.clone(), init.to_vec(), eta, 0.0)?;
    let m = task.rounds();
    let mut points = Vec::with_capacity(m);
    let mut paths = Vec::with_capacity(m);
    let mut losses = Vec::with_capacity(m);
    let mut expected = 0.0;
    for i in 0..m {
        let x = state.iterate().to_vec();
        let dikin = DikinAxes::at(&reg, tangent.as_ref(), &x)?;
        let j = rng.random_range(0..dikin.rank());
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let y = dikin.probe(j, sign);
        let inside = match domain.kind() {
            DomainKind::Sphere => reg.value(&y).is_ok(),
            _ => domain.contains(&y, MEMBERSHIP_TOL),
        };
        if !inside {
            return Err(Error::InvariantViolation(format!("played point {y:?} left the body")));
        }
        let (loss, path) = task.play_linear(i, &y, rng)?;
        expected += task.linear_loss(i, &x);
        omd_iterate(&mut state, &dikin.estimate(j, sign, loss))?;
        points.push(y);
        if let Some(p) = path {
            paths.push(p);
        }
        losses.push(loss);
    }
    let paths = (!paths.is_empty()).then_some(paths);
    finish(domain, task, state.cumulative().to_vec(), Actions::Points { points, paths }, losses, expected, None)
}
