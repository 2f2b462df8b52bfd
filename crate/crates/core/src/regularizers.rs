//! Distance-generating functions: the negative Tsallis entropy family on the
//! simplex and logarithmic barriers for the ball and for polytopes.

use serde::{Deserialize, Serialize};

use crate::domains::{Constraint, BOUNDARY_MARGIN};
use crate::error::{param, Error, Result};
use crate::linalg::{self, Mat};

/// Below this distance from 1 the Shannon limit replaces the Tsallis formula.
pub const SHANNON_SWITCH: f64 = 1e-6;

pub(crate) fn is_shannon(beta: f64) -> bool {
    (1.0 - beta).abs() < SHANNON_SWITCH
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        param(format!("Tsallis beta must lie in (0,1], got {beta}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Regularizer {
    /// `psi(p) = (1 - sum p^beta) / (1 - beta)`, Shannon `sum p log p` at beta = 1.
    Tsallis { beta: f64 },
    /// `psi(x) = -log(1 - |x|^2)` on the unit ball.
    SphereBarrier,
    /// `psi(x) = -sum log(b - <a, x>)`.
    PolytopeBarrier { constraints: Vec<Constraint> },
}

impl Regularizer {
    pub fn tsallis(beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self::Tsallis { beta })
    }

    /// Self-concordance parameter of the barrier families.
    pub fn nu(&self) -> Option<f64> {
        match self {
            Self::Tsallis { .. } => None,
            Self::SphereBarrier => Some(1.0),
            Self::PolytopeBarrier { constraints } => Some(constraints.len() as f64),
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        match self {
            Self::Tsallis { beta } => tsallis_value(x, *beta),
            _ => Ok(self.barrier_derivatives(x)?.0),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Tsallis { beta } => tsallis_gradient(x, *beta),
            _ => Ok(self.barrier_derivatives(x)?.1),
        }
    }

    pub fn hessian(&self, x: &[f64]) -> Result<Mat> {
        match self {
            Self::Tsallis { beta } => {
                let diag = tsallis_hessian_diag(x, *beta)?;
                let mut h = Mat::zeros(x.len(), x.len());
                for (i, v) in diag.into_iter().enumerate() {
                    h[(i, i)] = v;
                }
                Ok(h)
            }
            _ => Ok(self.barrier_derivatives(x)?.2),
        }
    }

    /// Value, gradient and Hessian of a barrier at a strictly interior point.
    pub fn barrier_derivatives(&self, x: &[f64]) -> Result<(f64, Vec<f64>, Mat)> {
        let d = x.len();
        match self {
            Self::Tsallis { .. } => Err(Error::Parameter("not a barrier regularizer".into())),
            Self::SphereBarrier => {
                let slack = 1.0 - linalg::dot(x, x);
                if slack < BOUNDARY_MARGIN {
                    return Err(Error::Boundary(format!("|x|^2 = {}", 1.0 - slack)));
                }
                let grad = linalg::scale(x, 2.0 / slack);
                let mut hess = Mat::identity(d);
                hess.data.iter_mut().for_each(|v| *v *= 2.0 / slack);
                hess.add_outer(4.0 / (slack * slack), x);
                Ok((-slack.ln(), grad, hess))
            }
            Self::PolytopeBarrier { constraints } => {
                let mut value = 0.0;
                let mut grad = vec![0.0; d];
                let mut hess = Mat::zeros(d, d);
                for c in constraints {
                    let s = c.slack(x);
                    if s < BOUNDARY_MARGIN {
                        return Err(Error::Boundary(format!("constraint slack {s:e}")));
                    }
                    value -= s.ln();
                    for (g, a) in grad.iter_mut().zip(&c.a) {
                        *g += a / s;
                    }
                    hess.add_outer(1.0 / (s * s), &c.a);
                }
                Ok((value, grad, hess))
            }
        }
    }

    /// Largest step `s` with `x + s * dir` still inside the barrier's domain
    /// (infinite if the ray never leaves it).
    pub fn max_step(&self, x: &[f64], dir: &[f64]) -> f64 {
        match self {
            Self::Tsallis { .. } => x
                .iter()
                .zip(dir)
                .filter(|(_, d)| **d < 0.0)
                .map(|(v, d)| -v / d)
                .fold(f64::INFINITY, f64::min),
            Self::SphereBarrier => {
                // |x + s d|^2 = 1
                let a = linalg::dot(dir, dir);
                if a == 0.0 {
                    return f64::INFINITY;
                }
                let b = 2.0 * linalg::dot(x, dir);
                let c = linalg::dot(x, x) - 1.0;
                let disc = (b * b - 4.0 * a * c).max(0.0);
                (-b + disc.sqrt()) / (2.0 * a)
            }
            Self::PolytopeBarrier { constraints } => constraints
                .iter()
                .filter_map(|c| {
                    let rate = linalg::dot(&c.a, dir);
                    (rate > 0.0).then(|| c.slack(x) / rate)
                })
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// Negative Tsallis entropy at a strictly positive point.
pub fn tsallis_value(p: &[f64], beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if let Some(v) = p.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Boundary(format!("Tsallis regularizer needs positive coordinates, got {v}")));
    }
    Ok(tsallis_closed(p, beta))
}

/// Tsallis entropy `H_beta = -psi_beta`, continuous up to the boundary
/// (`0^beta = 0`, `0 log 0 = 0`).
pub fn tsallis_entropy(p: &[f64], beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if let Some(v) = p.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::DomainMembership(format!("negative probability {v}")));
    }
    Ok(-tsallis_closed(p, beta))
}

fn tsallis_closed(p: &[f64], beta: f64) -> f64 {
    if is_shannon(beta) {
        p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum()
    } else {
        let s: f64 = p.iter().map(|v| if *v > 0.0 { v.powf(beta) } else { 0.0 }).sum();
        (1.0 - s) / (1.0 - beta)
    }
}

pub fn tsallis_gradient(p: &[f64], beta: f64) -> Result<Vec<f64>> {
    tsallis_value(p, beta)?;
    Ok(if is_shannon(beta) {
        p.iter().map(|v| v.ln() + 1.0).collect()
    } else {
        p.iter().map(|v| -beta / (1.0 - beta) * v.powf(beta - 1.0)).collect()
    })
}

pub fn tsallis_hessian_diag(p: &[f64], beta: f64) -> Result<Vec<f64>> {
    tsallis_value(p, beta)?;
    Ok(if is_shannon(beta) {
        p.iter().map(|v| 1.0 / v).collect()
    } else {
        p.iter().map(|v| beta * v.powf(beta - 2.0)).collect()
    })
}

/// Bregman divergence `B(x || y) = psi(x) - psi(y) - <grad psi(y), x - y>`.
///
/// For the Tsallis family `x` may sit on the simplex boundary, where the
/// value stays finite; `y` must be strictly interior for every family.
pub fn bregman(reg: &Regularizer, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return param("dimension mismatch in Bregman divergence");
    }
    let (psi_x, psi_y, grad_y) = match reg {
        Regularizer::Tsallis { beta } => {
            if x.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Boundary(format!("{x:?}")));
            }
            (tsallis_closed(x, *beta), tsallis_value(y, *beta)?, tsallis_gradient(y, *beta)?)
        }
        _ => {
            let (vy, gy, _) = reg.barrier_derivatives(y)?;
            (reg.value(x)?, vy, gy)
        }
    };
    let lin: f64 = grad_y.iter().zip(x.iter().zip(y)).map(|(g, (a, b))| g * (a - b)).sum();
    Ok((psi_x - psi_y - lin).max(0.0))
}

/// Constants of a barrier used by the divergence radius and schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierConstants {
    /// Self-concordance parameter.
    pub nu: f64,
    /// Radius constant `K` entering the divergence radius.
    pub radius: f64,
    /// `S_1 = |Hess psi(x1)|_2`, floored at 1.
    pub s1: f64,
    /// Geometric Euclidean radius of the body (kept alongside `radius`).
    pub geometric_radius: f64,
}

impl BarrierConstants {
    /// Unit ball with `-log(1 - |x|^2)`. `K = S_1 = 2` are the constants
    /// carried by the standard analysis, the geometric radius is 1.
    pub fn sphere() -> Self {
        Self { nu: 1.0, radius: 2.0, s1: 2.0, geometric_radius: 1.0 }
    }

    /// Polytope barrier over `dim` coordinates: `K = sqrt(dim)`, `nu = |C|`
    /// and `S_1` measured at the analytic center.
    pub fn polytope(constraints: &[Constraint], center: &[f64], geometric_radius: f64) -> Result<Self> {
        let reg = Regularizer::PolytopeBarrier { constraints: constraints.to_vec() };
        let s1 = linalg::spectral_norm(&reg.hessian(center)?)?.max(1.0);
        Ok(Self {
            nu: constraints.len() as f64,
            radius: (center.len() as f64).sqrt(),
            s1,
            geometric_radius,
        })
    }
}

/// Which divergence radius to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusFamily {
    /// Tsallis on the `d`-simplex: `D_beta^2 = (d^(1-beta) - 1) / (1 - beta)`.
    Tsallis { d: usize },
    /// Barrier offset radius `D_eps^2 = 9 nu^(3/2) K sqrt(S_1) / eps`.
    Barrier(BarrierConstants),
}

/// Squared divergence radius `D_theta^2`.
pub fn divergence_radius(family: RadiusFamily, theta: f64) -> Result<f64> {
    match family {
        RadiusFamily::Tsallis { d } => {
            check_beta(theta)?;
            let d = d as f64;
            Ok(if is_shannon(theta) {
                d.ln()
            } else {
                (d.powf(1.0 - theta) - 1.0) / (1.0 - theta)
            })
        }
        RadiusFamily::Barrier(c) => {
            if !(theta > 0.0 && theta <= 1.0) {
                return param(format!("barrier offset must lie in (0,1], got {theta}"));
            }
            Ok(9.0 * c.nu.powf(1.5) * c.radius * c.s1.sqrt() / theta)
        }
    }
}

/// `(d^(1-beta) - 1) / (1 - beta)`: the largest Tsallis entropy on the d-simplex.
pub fn max_tsallis_entropy(d: usize, beta: f64) -> f64 {
    divergence_radius(RadiusFamily::Tsallis { d }, beta).unwrap_or(f64::NAN)
}
