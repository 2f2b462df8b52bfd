//! Lazy online mirror descent:
//!
//! ```text
//!   x_{i+1} = argmin_{x in K}  B(x || x1) + eta * <L_i, x>,   L_i = sum_{j<=i} lhat_j
//! ```
//!
//! solved from scratch against the task initialization after every round.
//! The simplex case reduces to a one-dimensional dual search (with an
//! optional floor `x(a) >= eps/d`), the barrier case to damped Newton.

use crate::domains::{Domain, DomainKind};
use crate::error::{param, Error, Result};
use crate::linalg::{self, CompensatedSum, Mat};
use crate::regularizers::{is_shannon, Regularizer};

const DUAL_MAX_ITER: usize = 200;
const NEWTON_MAX_ITER: usize = 200;
const ARMIJO: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const INTERIOR_FRACTION: f64 = 0.95;
/// Newton decrement below which the full step is taken without line search.
const QUADRATIC_REGION: f64 = 0.25;
/// Default decrement tolerance for OMD barrier solves.
pub const NEWTON_TOL: f64 = 1e-10;

/// Single-task OMD state.
#[derive(Debug, Clone)]
pub struct OmdState {
    regularizer: Regularizer,
    tangent: Option<Mat>,
    init: Vec<f64>,
    init_grad: Vec<f64>,
    eta: f64,
    floor: f64,
    cumulative: CompensatedSum,
    iterate: Vec<f64>,
}

impl OmdState {
    /// `floor` is the guaranteed-exploration offset: every coordinate of a
    /// simplex iterate stays at or above `floor / d`.
    pub fn new(domain: &Domain, regularizer: Regularizer, init: Vec<f64>, eta: f64, floor: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return param(format!("step size must be positive, got {eta}"));
        }
        if !(0.0..1.0).contains(&floor) {
            return param(format!("floor must lie in [0,1), got {floor}"));
        }
        if init.len() != domain.dim() {
            return param("initialization has the wrong dimension");
        }
        let init_grad = match (&regularizer, domain.kind()) {
            (Regularizer::Tsallis { .. }, DomainKind::Simplex) => {
                let lo = floor / init.len() as f64;
                if !domain.contains(&init, 1e-9) || init.iter().any(|v| *v <= 0.0 || *v < lo - 1e-12) {
                    return Err(Error::DomainMembership(format!("initialization {init:?} not in the floored simplex")));
                }
                Vec::new()
            }
            (Regularizer::Tsallis { .. }, _) => return param("Tsallis regularizer needs the simplex"),
            (_, DomainKind::Simplex) => return param("barrier regularizers need the sphere or a polytope"),
            _ => {
                if floor != 0.0 {
                    return param("floors apply to the simplex only");
                }
                if !domain.is_strictly_interior(&init) {
                    return Err(Error::Boundary(format!("initialization {init:?}")));
                }
                regularizer.gradient(&init)?
            }
        };
        let d = init.len();
        Ok(Self {
            regularizer,
            tangent: domain.tangent().cloned(),
            iterate: init.clone(),
            init,
            init_grad,
            eta,
            floor,
            cumulative: CompensatedSum::new(d),
        })
    }

    pub fn iterate(&self) -> &[f64] {
        &self.iterate
    }

    pub fn cumulative(&self) -> &[f64] {
        self.cumulative.value()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn init(&self) -> &[f64] {
        &self.init
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.regularizer
    }

    /// One-shot solve against an arbitrary cumulative estimator sum.
    pub fn solve(&self, cumulative: &[f64], warm: Option<&[f64]>) -> Result<Vec<f64>> {
        if cumulative.len() != self.init.len() || cumulative.iter().any(|v| !v.is_finite()) {
            return param("estimator sum must be finite and match the dimension");
        }
        let scaled = linalg::scale(cumulative, self.eta);
        match &self.regularizer {
            Regularizer::Tsallis { beta } => solve_tsallis_dual(&self.init, &scaled, *beta, self.floor),
            reg => {
                let linear = linalg::sub(&scaled, &self.init_grad);
                newton_minimize(reg, self.tangent.as_ref(), &linear, warm.unwrap_or(&self.init), NEWTON_TOL)
            }
        }
    }
}

/// Adds `estimator` to the cumulative sum and re-solves; returns the new iterate.
pub fn omd_iterate(state: &mut OmdState, estimator: &[f64]) -> Result<Vec<f64>> {
    if estimator.len() != state.init.len() || estimator.iter().any(|v| !v.is_finite()) {
        return param("estimator must be finite and match the dimension");
    }
    state.cumulative.add(estimator);
    let next = state.solve(state.cumulative.value(), Some(&state.iterate))?;
    state.iterate = next.clone();
    Ok(next)
}

/// Per-coordinate dual parametrization of the simplex solution.
///
/// Tsallis: `x(a) = (q(a) + z)^(-1/(1-beta))` with
/// `q(a) = x1(a)^(beta-1) + (1-beta) eta L(a) / beta`.
/// Shannon: `x(a) = exp(w(a) - z)` with `w(a) = log x1(a) - eta L(a)`.
/// In both, larger `key` means smaller coordinate at any `z`.
enum Dual {
    Tsallis { q: Vec<f64>, power: f64, one_minus_beta: f64 },
    Shannon { w: Vec<f64> },
}

impl Dual {
    fn key(&self, a: usize) -> f64 {
        match self {
            Dual::Tsallis { q, .. } => q[a],
            Dual::Shannon { w } => -w[a],
        }
    }

    fn value(&self, a: usize, z: f64) -> f64 {
        match self {
            Dual::Tsallis { q, power, .. } => {
                let base = q[a] + z;
                if base <= 0.0 {
                    f64::INFINITY
                } else {
                    (-power * base.ln()).exp()
                }
            }
            Dual::Shannon { w } => (w[a] - z).exp(),
        }
    }

    /// Multiplier `z` with `sum_{a in free} x(a) = mass`.
    fn solve(&self, free: &[usize], mass: f64) -> Result<f64> {
        match self {
            Dual::Shannon { w } => {
                let mx = free.iter().map(|&a| w[a]).fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = free.iter().map(|&a| (w[a] - mx).exp()).sum();
                Ok(mx + s.ln() - mass.ln())
            }
            Dual::Tsallis { q, power, one_minus_beta } => {
                let n = free.len() as f64;
                let qmin = free.iter().map(|&a| q[a]).fold(f64::INFINITY, f64::min);
                let mut lo = -qmin;
                let mut hi = (n / mass).powf(*one_minus_beta) - qmin;
                let f = |z: f64| -> (f64, f64) {
                    let mut s = 0.0;
                    let mut ds = 0.0;
                    for &a in free {
                        let base = q[a] + z;
                        let v = (-power * base.ln()).exp();
                        s += v;
                        ds -= power * v / base;
                    }
                    (s - mass, ds)
                };
                let mut z = hi;
                for _ in 0..DUAL_MAX_ITER {
                    let (fz, dfz) = f(z);
                    if fz.abs() <= 1e-15 * mass {
                        return Ok(z);
                    }
                    if fz > 0.0 {
                        lo = z;
                    } else {
                        hi = z;
                    }
                    let newton = z - fz / dfz;
                    z = if newton.is_finite() && newton > lo && newton < hi {
                        newton
                    } else {
                        0.5 * (lo + hi)
                    };
                    if hi - lo <= 4.0 * f64::EPSILON * z.abs().max(1e-300) {
                        return Ok(z);
                    }
                }
                let (fz, _) = f(z);
                if fz.abs() <= 1e-10 * mass {
                    Ok(z)
                } else {
                    Err(Error::Numerical(format!(
                        "Tsallis dual search stalled: residual {fz:e}, bracket [{lo:e}, {hi:e}]"
                    )))
                }
            }
        }
    }
}

/// Solves the simplex OMD problem
/// `argmin psi_beta(x) - <grad psi_beta(x1), x> + <eta_l, x>` over
/// `{x in simplex : x(a) >= floor/d}` by a dual search on the normalization
/// multiplier, clamping the smallest coordinates to the floor one at a time.
pub fn solve_tsallis_dual(x1: &[f64], eta_l: &[f64], beta: f64, floor: f64) -> Result<Vec<f64>> {
    let d = x1.len();
    if !(beta > 0.0 && beta <= 1.0) {
        return param(format!("beta must lie in (0,1], got {beta}"));
    }
    if !(0.0..1.0).contains(&floor) {
        return param(format!("floor must lie in [0,1), got {floor}"));
    }
    if eta_l.len() != d || d == 0 {
        return param("dimension mismatch");
    }
    if x1.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Boundary(format!("initialization {x1:?} must be strictly positive")));
    }
    // shifting the losses leaves the solution unchanged; centering keeps q well scaled
    let shift = eta_l.iter().cloned().fold(f64::INFINITY, f64::min);
    let dual = if is_shannon(beta) {
        Dual::Shannon { w: x1.iter().zip(eta_l).map(|(x, l)| x.ln() - (l - shift)).collect() }
    } else {
        let omb = 1.0 - beta;
        Dual::Tsallis {
            q: x1.iter().zip(eta_l).map(|(x, l)| x.powf(beta - 1.0) + omb * (l - shift) / beta).collect(),
            power: 1.0 / omb,
            one_minus_beta: omb,
        }
    };
    let level = floor / d as f64;
    // candidates for clamping, smallest unconstrained coordinate first
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| dual.key(b).total_cmp(&dual.key(a)).then(a.cmp(&b)));
    let mut best: Option<(f64, Vec<f64>)> = None;
    for clamped in 0..d {
        if clamped > 0 && level == 0.0 {
            break;
        }
        let free: Vec<usize> = order[clamped..].to_vec();
        let mass = 1.0 - clamped as f64 * level;
        let z = dual.solve(&free, mass)?;
        let mut x = vec![level; d];
        for &a in &free {
            x[a] = dual.value(a, z);
        }
        // complementary slackness: free coordinates above the floor, clamped
        // coordinates would fall below it if released
        let free_violation = free.iter().map(|&a| (level - x[a]).max(0.0)).fold(0.0, f64::max);
        let clamp_violation = order[..clamped]
            .iter()
            .map(|&a| (dual.value(a, z) - level).max(0.0))
            .fold(0.0, f64::max);
        let violation = free_violation.max(clamp_violation);
        let s: f64 = free.iter().map(|&a| x[a]).sum();
        for &a in &free {
            x[a] *= mass / s;
        }
        if violation <= 1e-13 {
            return Ok(x);
        }
        if best.as_ref().is_none_or(|(v, _)| violation < *v) {
            best = Some((violation, x));
        }
        if free_violation == 0.0 {
            break;
        }
    }
    match best {
        Some((v, mut x)) if v <= 1e-9 => {
            for xa in x.iter_mut() {
                *xa = xa.max(level);
            }
            let s: f64 = x.iter().sum();
            x.iter_mut().for_each(|v| *v /= s);
            Ok(x)
        }
        Some((v, _)) => Err(Error::Numerical(format!("floored simplex solve left KKT violation {v:e}"))),
        None => Err(Error::Numerical("floored simplex solve produced no candidate".into())),
    }
}

/// Barrier OMD: minimizes `<eta_l, x> + B(x || x1)` with damped Newton.
pub fn solve_barrier_newton(domain: &Domain, reg: &Regularizer, x1: &[f64], eta_l: &[f64]) -> Result<Vec<f64>> {
    let linear = linalg::sub(eta_l, &reg.gradient(x1)?);
    newton_minimize(reg, domain.tangent(), &linear, x1, NEWTON_TOL)
}

/// Minimizes `F(x) = <linear, x> + psi(x)` over `start + span(tangent)` by
/// damped Newton. Steps are capped at 95% of the distance to the boundary
/// and backtracked with an Armijo rule until the Newton decrement drops
/// below `0.25`, after which full steps are taken. Stops once the reduced
/// gradient norm is at most `tol`.
pub fn newton_minimize(
    reg: &Regularizer,
    tangent: Option<&Mat>,
    linear: &[f64],
    start: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    let objective = |x: &[f64]| -> f64 {
        match reg.value(x) {
            Ok(v) => linalg::dot(linear, x) + v,
            Err(_) => f64::INFINITY,
        }
    };
    let mut x = start.to_vec();
    let mut fx = objective(&x);
    if !fx.is_finite() {
        return Err(Error::Boundary(format!("Newton start {start:?} is not interior")));
    }
    let mut last = (f64::NAN, f64::NAN);
    for _ in 0..NEWTON_MAX_ITER {
        let (_, grad, hess) = reg.barrier_derivatives(&x)?;
        let full_grad: Vec<f64> = grad.iter().zip(linear).map(|(g, l)| g + l).collect();
        let (g, h) = match tangent {
            Some(n) => (n.tmatvec(&full_grad), hess.congruence(n)),
            None => (full_grad, hess),
        };
        let gnorm = linalg::norm(&g);
        if gnorm <= tol || g.is_empty() {
            return Ok(x);
        }
        let step = linalg::cholesky_solve(&h, &g)?;
        let decrement2 = linalg::dot(&g, &step);
        last = (gnorm, decrement2.max(0.0).sqrt());
        let dir: Vec<f64> = match tangent {
            Some(n) => n.matvec(&step).iter().map(|v| -v).collect(),
            None => step.iter().map(|v| -v).collect(),
        };
        let t_max = reg.max_step(&x, &dir);
        let mut t = (INTERIOR_FRACTION * t_max).min(1.0);
        if last.1 < QUADRATIC_REGION {
            let trial = linalg::add_scaled(&x, t, &dir);
            if reg.barrier_derivatives(&trial).is_err() {
                return Err(Error::Numerical("full Newton step left the interior".into()));
            }
            x = trial;
            fx = objective(&x);
            continue;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let trial = linalg::add_scaled(&x, t, &dir);
            let ft = objective(&trial);
            if ft <= fx - ARMIJO * t * decrement2 {
                x = trial;
                fx = ft;
                accepted = true;
                break;
            }
            t *= SHRINK;
        }
        if !accepted {
            return Err(Error::Numerical(format!(
                "line search failed: gradient norm {gnorm:e}, decrement {:e}",
                last.1
            )));
        }
    }
    Err(Error::Numerical(format!(
        "Newton did not converge in {NEWTON_MAX_ITER} iterations: gradient norm {:e}, decrement {:e}",
        last.0, last.1
    )))
}

/// Reduced gradient norm of `<linear, x> + psi(x)` at `x`.
pub fn stationarity_residual(reg: &Regularizer, tangent: Option<&Mat>, linear: &[f64], x: &[f64]) -> Result<f64> {
    let grad: Vec<f64> = reg.gradient(x)?.iter().zip(linear).map(|(g, l)| g + l).collect();
    Ok(match tangent {
        Some(n) => linalg::norm(&n.tmatvec(&grad)),
        None => linalg::norm(&grad),
    })
}
