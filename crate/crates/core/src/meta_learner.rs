//! The meta-learner: FTL over initializations, EWOO over step sizes and
//! multiplicative weights over a grid of regularizer parameters `theta`.
//!
//! For MAB, `theta` is the Tsallis exponent `beta` and the projection is the
//! simplex shrink with a fixed `eps`. For BLO, `theta` is the offset `eps`
//! itself and the regularizer is the body's log-barrier.
//!
//! Per task, every grid point is charged the upper bound
//!
//! ```text
//!   U(x, eta, theta) = B_theta(c_theta(xhat) || x) / eta + eta g(theta) m + f(theta) m
//! ```
//!
//! at its own FTL initialization; EWOO sees the regularized version with
//! `rho^2 D_theta^2 / eta` added, MW the plain one.

use serde::{Deserialize, Serialize};

use crate::domains::{simplex_shrink, Domain, DomainKind};
use crate::error::{param, Error, Result};
use crate::linalg::{self, CompensatedSum};
use crate::regularizers::{bregman, divergence_radius, BarrierConstants, RadiusFamily, Regularizer};
use crate::rng::sample_index;

/// Quadrature nodes for the EWOO integrals (odd, for Simpson's rule).
pub const EWOO_NODES: usize = 2049;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    MabImplicit,
    MabGuaranteed,
    Blo,
}

impl Mode {
    pub fn is_mab(self) -> bool {
        !matches!(self, Mode::Blo)
    }
}

/// `(eta_lo, eta_hi, alpha)` for one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub eta_lo: f64,
    pub eta_hi: f64,
    pub alpha: f64,
}

/// `eta_lo = rho D / sqrt(g m)`, `eta_hi = D sqrt((1 + rho^2) / (g m))`,
/// `alpha = 2 rho^2 / (D sqrt(g m))`, with `D^2 = d2`.
pub fn hyperparam_schedule(d2: f64, g: f64, m: usize, rho: f64) -> Result<Schedule> {
    if !(rho > 0.0 && rho < 1.0) {
        return param(format!("rho must lie in (0,1), got {rho}"));
    }
    if !(d2 > 0.0 && g > 0.0 && m > 0) {
        return param("schedule needs D^2 > 0, g > 0, m > 0");
    }
    let dd = d2.sqrt();
    let gm = g * m as f64;
    Ok(Schedule {
        eta_lo: rho * dd / gm.sqrt(),
        eta_hi: dd * ((1.0 + rho * rho) / gm).sqrt(),
        alpha: 2.0 * rho * rho / (dd * gm.sqrt()),
    })
}

/// MW step `lambda = (M (1/rho + sqrt(1 + rho^2)) + F m)^(-1) sqrt(log k / (2T))`.
pub fn mw_rate(big_m: f64, big_f: f64, rho: f64, m: usize, k: usize, tasks: usize) -> f64 {
    let denom = big_m * (1.0 / rho + (1.0 + rho * rho).sqrt()) + big_f * m as f64;
    ((k as f64).ln() / (2.0 * tasks as f64)).sqrt() / denom
}

/// Per-mode constants of the upper bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Family {
    /// Tsallis OMD on the simplex with the fixed shrink offset `eps`.
    Mab { d: usize, eps: f64 },
    /// Barrier OMD; `theta` is the projection offset.
    Blo { d: usize, constants: BarrierConstants },
}

impl Family {
    pub fn g(&self, theta: f64) -> f64 {
        match self {
            Family::Mab { d, .. } => (*d as f64).powf(theta) / theta,
            Family::Blo { d, .. } => 32.0 * (*d as f64).powi(2),
        }
    }

    pub fn f(&self, theta: f64) -> f64 {
        match self {
            Family::Mab { .. } => 0.0,
            Family::Blo { .. } => theta,
        }
    }

    pub fn d2(&self, theta: f64) -> Result<f64> {
        match self {
            Family::Mab { d, .. } => divergence_radius(RadiusFamily::Tsallis { d: *d }, theta),
            Family::Blo { constants, .. } => divergence_radius(RadiusFamily::Barrier(*constants), theta),
        }
    }

    /// `M` of the MW rate: `d sqrt(m)` for MAB and
    /// `12 d sqrt(2 K m / eps_lo) (nu^3 S_1)^(1/4)` for BLO.
    pub fn big_m(&self, m: usize, theta_lo: f64) -> f64 {
        let m = m as f64;
        match self {
            Family::Mab { d, .. } => *d as f64 * m.sqrt(),
            Family::Blo { d, constants } => {
                12.0 * *d as f64 * (2.0 * constants.radius * m / theta_lo).sqrt()
                    * (constants.nu.powi(3) * constants.s1).powf(0.25)
            }
        }
    }

    pub fn big_f(&self) -> f64 {
        match self {
            Family::Mab { .. } => 0.0,
            Family::Blo { .. } => 1.0,
        }
    }

    pub fn regularizer(&self, domain: &Domain, theta: f64) -> Result<Regularizer> {
        match self {
            Family::Mab { .. } => Regularizer::tsallis(theta),
            Family::Blo { .. } => crate::bandit_learners::barrier_for(domain),
        }
    }

    /// `c_theta(x)`: the simplex shrink by `eps` for MAB, the center
    /// projection with offset `theta` for BLO.
    pub fn project(&self, domain: &Domain, theta: f64, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Family::Mab { eps, .. } => simplex_shrink(x, *eps),
            Family::Blo { .. } => domain.project_center(x, theta),
        }
    }

    /// FTL initialization: the projected mean of past estimated optima, or
    /// the center before any task.
    pub fn ftl_init(&self, domain: &Domain, theta: f64, mean: Option<&[f64]>) -> Result<Vec<f64>> {
        match mean {
            None => Ok(domain.center().to_vec()),
            Some(x) => self.project(domain, theta, x),
        }
    }
}

/// Builds the family matching a mode and domain.
pub fn family_for(mode: Mode, domain: &Domain, eps: f64) -> Result<Family> {
    match (mode, domain.kind()) {
        (Mode::MabImplicit | Mode::MabGuaranteed, DomainKind::Simplex) => {
            if !(eps > 0.0 && eps <= 1.0) {
                return param(format!("eps must lie in (0,1], got {eps}"));
            }
            Ok(Family::Mab { d: domain.dim(), eps })
        }
        (Mode::Blo, DomainKind::Sphere) => Ok(Family::Blo { d: domain.dim(), constants: BarrierConstants::sphere() }),
        (Mode::Blo, DomainKind::Polytope(p)) => Ok(Family::Blo {
            d: domain.dim(),
            constants: BarrierConstants::polytope(&p.inequalities, domain.center(), domain.euclidean_radius())?,
        }),
        _ => param(format!("mode {mode:?} does not match the domain")),
    }
}

/// `B_theta(c_theta(xhat) || x) / eta + eta g m + f m`, plus
/// `rho^2 D_theta^2 / eta` when `rho` is given.
pub fn upper_bound(
    family: &Family,
    domain: &Domain,
    x: &[f64],
    eta: f64,
    theta: f64,
    xhat: &[f64],
    m: usize,
    rho: Option<f64>,
) -> Result<f64> {
    if !(eta > 0.0) {
        return param(format!("eta must be positive, got {eta}"));
    }
    let reg = family.regularizer(domain, theta)?;
    let div = bregman(&reg, &family.project(domain, theta, xhat)?, x)?;
    let reg_term = match rho {
        Some(r) => r * r * family.d2(theta)?,
        None => 0.0,
    };
    let m = m as f64;
    Ok((div + reg_term) / eta + eta * family.g(theta) * m + family.f(theta) * m)
}

/// EWOO step size: the mean of `v` under the density proportional to
/// `exp(-alpha (a / v + g v))` on `[lo, hi]`, by composite Simpson on
/// `nodes` points with the exponent shifted by its maximum.
pub fn ewoo_eta(a: f64, g: f64, lo: f64, hi: f64, alpha: f64, nodes: usize) -> Result<f64> {
    if !(lo > 0.0 && hi > lo) || nodes < 3 || nodes % 2 == 0 {
        return param("EWOO needs 0 < lo < hi and an odd node count >= 3");
    }
    let h = (hi - lo) / (nodes - 1) as f64;
    let expo: Vec<f64> = (0..nodes)
        .map(|i| {
            let v = lo + i as f64 * h;
            -alpha * (a / v + g * v)
        })
        .collect();
    let top = expo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::Numerical(format!("EWOO exponent not finite (a = {a}, g = {g})")));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (i, e) in expo.iter().enumerate() {
        let w = if i == 0 || i == nodes - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let p = w * (e - top).exp();
        num += p * (lo + i as f64 * h);
        den += p;
    }
    let eta = num / den;
    if !eta.is_finite() {
        return Err(Error::Numerical("EWOO integrals not finite".into()));
    }
    Ok(eta.clamp(lo, hi))
}

/// Softmax of MW log-weights.
pub fn mw_distribution(w: &[f64]) -> Vec<f64> {
    let top = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = w.iter().map(|v| (v - top).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Inverse-CDF draw from the MW distribution given a uniform `u`.
pub fn mw_sample(w: &[f64], u: f64) -> usize {
    sample_index(&mw_distribution(w), u)
}

pub fn mw_update(w: &mut [f64], lambda: f64, losses: &[f64]) {
    w.iter_mut().zip(losses).for_each(|(w, l)| *w -= lambda * l);
}

/// Averaged Bregman gap `(1/T) sum_t psi(c(xhat_t)) - psi(c(mean))`.
pub fn task_similarity_v(family: &Family, domain: &Domain, theta: f64, estimates: &[Vec<f64>]) -> Result<f64> {
    if estimates.is_empty() {
        return param("task similarity needs at least one estimate");
    }
    let reg = family.regularizer(domain, theta)?;
    let mut total = 0.0;
    for x in estimates {
        total += reg.value(&family.project(domain, theta, x)?)?;
    }
    let mean = linalg::mean(estimates);
    Ok((total / estimates.len() as f64 - reg.value(&family.project(domain, theta, &mean)?)?).max(0.0))
}

/// One grid point and its fixed schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub theta: f64,
    pub d2: f64,
    pub g: f64,
    pub f: f64,
    pub schedule: Schedule,
}

/// Sufficient statistics of one EWOO copy: the exponent at `v` is
/// `-alpha (a_sum / v + g_sum v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwooState {
    pub a_sum: f64,
    pub g_sum: f64,
    pub eta: f64,
}

/// What the learner should run on the next task.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub index: usize,
    pub theta: f64,
    pub eta: f64,
    pub init: Vec<f64>,
}

/// Per-task bookkeeping returned by `meta_step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Unregularized upper bound at each grid point (the MW losses).
    pub bounds: Vec<f64>,
    /// Regularized bound at the sampled grid point.
    pub sampled_bound: f64,
}

/// Full meta-learner state; serializes to a JSON snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaState {
    pub mode: Mode,
    pub family: Family,
    pub m: usize,
    pub tasks: usize,
    pub rho: f64,
    pub lambda: f64,
    pub grid: Vec<GridPoint>,
    pub ewoo: Vec<EwooState>,
    pub log_weights: Vec<f64>,
    pub running_sum: CompensatedSum,
    pub task_count: usize,
}

/// Uniform grid of `k` points over `[lo, hi]`, endpoints included.
pub fn uniform_grid(lo: f64, hi: f64, k: usize) -> Result<Vec<f64>> {
    if k == 0 || !(lo <= hi) {
        return param("grid needs k >= 1 and lo <= hi");
    }
    if k == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..k).map(|i| if i == k - 1 { hi } else { lo + (hi - lo) * i as f64 / (k - 1) as f64 }).collect())
}

impl MetaState {
    pub fn new(mode: Mode, family: Family, m: usize, tasks: usize, rho: f64, thetas: &[f64]) -> Result<Self> {
        if thetas.is_empty() {
            return param("empty theta grid");
        }
        let mut grid = Vec::with_capacity(thetas.len());
        for &theta in thetas {
            let d2 = family.d2(theta)?;
            let g = family.g(theta);
            grid.push(GridPoint { theta, d2, g, f: family.f(theta), schedule: hyperparam_schedule(d2, g, m, rho)? });
        }
        let theta_lo = thetas.iter().cloned().fold(f64::INFINITY, f64::min);
        let lambda = mw_rate(family.big_m(m, theta_lo), family.big_f(), rho, m, thetas.len(), tasks);
        let ewoo = grid
            .iter()
            .map(|p| EwooState { a_sum: 0.0, g_sum: 0.0, eta: 0.5 * (p.schedule.eta_lo + p.schedule.eta_hi) })
            .collect();
        let d = match family {
            Family::Mab { d, .. } | Family::Blo { d, .. } => d,
        };
        Ok(Self {
            mode,
            family,
            m,
            tasks,
            rho,
            lambda,
            grid,
            ewoo,
            log_weights: vec![0.0; thetas.len()],
            running_sum: CompensatedSum::new(d),
            task_count: 0,
        })
    }

    pub fn mean_estimate(&self) -> Option<Vec<f64>> {
        (self.task_count > 0)
            .then(|| self.running_sum.value().iter().map(|v| v / self.task_count as f64).collect())
    }

    pub fn distribution(&self) -> Vec<f64> {
        mw_distribution(&self.log_weights)
    }

    /// FTL initialization for grid point `i`.
    pub fn init_for(&self, domain: &Domain, i: usize) -> Result<Vec<f64>> {
        self.family.ftl_init(domain, self.grid[i].theta, self.mean_estimate().as_deref())
    }

    /// Samples `theta_t` from MW (with uniform `u`) and returns what to run.
    pub fn propose(&self, domain: &Domain, u: f64) -> Result<Proposal> {
        let index = mw_sample(&self.log_weights, u);
        Ok(Proposal {
            index,
            theta: self.grid[index].theta,
            eta: self.ewoo[index].eta,
            init: self.init_for(domain, index)?,
        })
    }

    /// Updates FTL, every EWOO copy and every MW weight with the task's
    /// estimated optimum.
    pub fn meta_step(&mut self, domain: &Domain, proposal: &Proposal, xhat: &[f64]) -> Result<StepReport> {
        let mut bounds = Vec::with_capacity(self.grid.len());
        let mut sampled_bound = f64::NAN;
        let m = self.m as f64;
        for i in 0..self.grid.len() {
            let p = self.grid[i].clone();
            let init = self.init_for(domain, i)?;
            let reg = self.family.regularizer(domain, p.theta)?;
            let div = bregman(&reg, &self.family.project(domain, p.theta, xhat)?, &init)?;
            let eta = self.ewoo[i].eta;
            bounds.push(div / eta + eta * p.g * m + p.f * m);
            if i == proposal.index {
                sampled_bound = bounds[i] + self.rho * self.rho * p.d2 / eta;
            }
            let e = &mut self.ewoo[i];
            e.a_sum += div + self.rho * self.rho * p.d2;
            e.g_sum += p.g * m;
            e.eta = ewoo_eta(e.a_sum, e.g_sum, p.schedule.eta_lo, p.schedule.eta_hi, p.schedule.alpha, EWOO_NODES)?;
        }
        mw_update(&mut self.log_weights, self.lambda, &bounds);
        self.running_sum.add(xhat);
        self.task_count += 1;
        Ok(StepReport { bounds, sampled_bound })
    }

    pub fn snapshot(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn restore(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Lipschitz helper for grid sizing in the MAB corollaries:
/// `(log(d/eps)/eta + eta m log^2 d) d`.
pub fn lipschitz_eta(d: usize, m: usize, eps: f64, eta: f64) -> f64 {
    let d = d as f64;
    ((d / eps).ln() / eta + eta * m as f64 * d.ln().powi(2)) * d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_example() {
        let d2 = divergence_radius(RadiusFamily::Tsallis { d: 4 }, 0.5).unwrap();
        let g = 4f64.powf(0.5) / 0.5;
        let s = hyperparam_schedule(d2, g, 100, 0.5).unwrap();
        assert!((s.eta_lo - 2f64.sqrt() / 40.0).abs() < 1e-15);
        assert!((s.eta_hi - 2f64.sqrt() * 1.25f64.sqrt() / 20.0).abs() < 1e-15);
        assert!((s.alpha - 0.5 / (20.0 * 2f64.sqrt())).abs() < 1e-15);
        assert!((s.eta_lo - 0.035_355_3).abs() < 1e-7);
        assert!((s.eta_hi - 0.079_056_9).abs() < 1e-7);
        assert!((s.alpha - 0.017_677_7).abs() < 1e-7);
        let r = hyperparam_schedule(2.0, 3.0, 10, 0.999_999).unwrap();
        assert!((r.eta_hi / r.eta_lo - 2f64.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn lambda_example() {
        let (d, m, rho, k, t) = (4usize, 100usize, 0.5, 8usize, 64usize);
        let big_m = d as f64 * (m as f64).sqrt();
        let expected = (8f64.ln() / 128.0).sqrt() / (40.0 * (2.0 + 1.25f64.sqrt()));
        assert!((mw_rate(big_m, 0.0, rho, m, k, t) - expected).abs() < 1e-15);
        assert_eq!(Family::Mab { d, eps: 0.1 }.big_m(m, 0.5), big_m);
    }

    #[test]
    fn upper_bound_examples() {
        let s = Domain::simplex(2).unwrap();
        let fam = Family::Mab { d: 2, eps: 0.5 };
        let u = upper_bound(&fam, &s, &[0.5, 0.5], 0.1, 1.0, &[1.0, 0.0], 10, None).unwrap();
        let kl = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((u - (kl / 0.1 + 2.0)).abs() < 1e-12);
        assert!((u - 3.308_12).abs() < 1e-5);
        // zero divergence leaves the variance term
        let xe = simplex_shrink(&[0.0, 1.0], 0.5).unwrap();
        let u0 = upper_bound(&fam, &s, &xe, 0.1, 0.5, &[0.0, 1.0], 10, None).unwrap();
        assert!((u0 - 0.1 * 2f64.sqrt() * 10.0 / 0.5).abs() < 1e-12);
        let ur = upper_bound(&fam, &s, &[0.5, 0.5], 0.1, 0.5, &[1.0, 0.0], 10, Some(0.3)).unwrap();
        let uu = upper_bound(&fam, &s, &[0.5, 0.5], 0.1, 0.5, &[1.0, 0.0], 10, None).unwrap();
        assert!((ur - uu - 0.09 * fam.d2(0.5).unwrap() / 0.1).abs() < 1e-12);
    }

    #[test]
    fn ewoo_examples() {
        assert!((ewoo_eta(0.0, 0.0, 1.0, 3.0, 0.7, EWOO_NODES).unwrap() - 2.0).abs() < 1e-12);
        assert!((ewoo_eta(5.0, 2.0, 1.0, 3.0, 1e-14, EWOO_NODES).unwrap() - 2.0).abs() < 1e-9);
        // concentration at sqrt(A/G)
        let (a, g) = (400.0, 100.0);
        let eta = ewoo_eta(a * 1000.0, g * 1000.0, 0.5, 5.0, 1.0, EWOO_NODES).unwrap();
        assert!((eta - 2.0).abs() < 1e-3);
        let clipped = ewoo_eta(a * 1000.0, g * 1000.0, 2.5, 5.0, 1.0, EWOO_NODES).unwrap();
        assert!((clipped - 2.5).abs() < 1e-3);
        let fine = ewoo_eta(3.0, 7.0, 0.1, 2.0, 5.0, 8193).unwrap();
        let coarse = ewoo_eta(3.0, 7.0, 0.1, 2.0, 5.0, EWOO_NODES).unwrap();
        assert!(((fine - coarse) / fine).abs() < 1e-6);
    }

    #[test]
    fn mw_examples() {
        assert!(mw_distribution(&[0.0; 3]).iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        let mut w = vec![0.0, 0.0];
        mw_update(&mut w, 0.5, &[1.0, 2.0]);
        let p = mw_distribution(&w);
        assert!((p[0] - 0.622_459).abs() < 1e-6 && (p[1] - 0.377_541).abs() < 1e-6);
        let mut shifted = vec![0.0, 0.0];
        mw_update(&mut shifted, 0.5, &[11.0, 12.0]);
        let q = mw_distribution(&shifted);
        assert!((p[0] - q[0]).abs() < 1e-12);
    }

    #[test]
    fn ftl_examples() {
        let s = Domain::simplex(2).unwrap();
        let fam = Family::Mab { d: 2, eps: 0.3 };
        assert_eq!(fam.ftl_init(&s, 0.5, None).unwrap(), vec![0.5, 0.5]);
        let x = fam.ftl_init(&s, 0.5, Some(&[2.0 / 3.0, 1.0 / 3.0])).unwrap();
        assert!((x[0] - 0.616_667).abs() < 1e-6 && (x[1] - 0.383_333).abs() < 1e-6);
        let fam = Family::Mab { d: 2, eps: 0.2 };
        assert_eq!(fam.ftl_init(&s, 0.5, Some(&[0.5, 0.5])).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn meta_step_tracks_mean() {
        let s = Domain::simplex(2).unwrap();
        let fam = Family::Mab { d: 2, eps: 0.1 };
        let mut st = MetaState::new(Mode::MabImplicit, fam, 50, 10, 0.5, &[0.5, 1.0]).unwrap();
        for xhat in [[1.0, 0.0], [0.0, 1.0]] {
            let prop = st.propose(&s, 0.3).unwrap();
            st.meta_step(&s, &prop, &xhat).unwrap();
        }
        assert_eq!(st.mean_estimate().unwrap(), vec![0.5, 0.5]);
        for (e, p) in st.ewoo.iter().zip(&st.grid) {
            assert!(e.eta >= p.schedule.eta_lo && e.eta <= p.schedule.eta_hi);
        }
        let back = MetaState::restore(&st.snapshot().unwrap()).unwrap();
        assert_eq!(back, st);
    }

    #[test]
    fn similarity_examples() {
        let s = Domain::simplex(2).unwrap();
        let fam = Family::Mab { d: 2, eps: 1e-12 };
        let v = task_similarity_v(&fam, &s, 1.0, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-9);
        assert_eq!(task_similarity_v(&fam, &s, 0.5, &[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap(), 0.0);
        let ball = Domain::sphere(2).unwrap();
        let blo = family_for(Mode::Blo, &ball, 0.0).unwrap();
        let v = task_similarity_v(&blo, &ball, 0.5, &[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert!((v - 1.8f64.ln()).abs() < 1e-12);
        assert!((v - 0.587_787).abs() < 1e-6);
    }
}
