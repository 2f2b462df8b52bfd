//! Convex action bodies: the probability simplex, the Euclidean unit ball and
//! polytopes given by linear constraints (optionally inside an affine hull).

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::linalg::{self, Mat};

/// Membership tolerance used throughout.
pub const MEMBERSHIP_TOL: f64 = 1e-9;
/// Interior margin below which a point counts as on the boundary.
pub const BOUNDARY_MARGIN: f64 = 1e-12;
const GAUGE_BISECTIONS: usize = 60;

/// Linear constraint `<a, x> <= b` (or `= b` when used as an equality).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub a: Vec<f64>,
    pub b: f64,
}

impl Constraint {
    pub fn new(a: Vec<f64>, b: f64) -> Self {
        Self { a, b }
    }

    pub fn slack(&self, x: &[f64]) -> f64 {
        self.b - linalg::dot(&self.a, x)
    }
}

/// A polytope `{x : <a_i,x> <= b_i, <e_j,x> = f_j}` with a pre-enumerated
/// list of extreme points used for linear minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    pub inequalities: Vec<Constraint>,
    pub equalities: Vec<Constraint>,
    /// Orthonormal basis (columns) of the directions along the affine hull.
    pub tangent: Mat,
    pub vertices: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainKind {
    Simplex,
    Sphere,
    Polytope(Polytope),
}

/// A convex body together with its center `x1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    kind: DomainKind,
    dim: usize,
    center: Vec<f64>,
}

impl Domain {
    pub fn simplex(d: usize) -> Result<Self> {
        if d < 2 {
            return param(format!("simplex needs d >= 2, got {d}"));
        }
        Ok(Self { kind: DomainKind::Simplex, dim: d, center: vec![1.0 / d as f64; d] })
    }

    /// The closed Euclidean unit ball, called "sphere" after the usual BLO naming.
    pub fn sphere(d: usize) -> Result<Self> {
        if d == 0 {
            return param("sphere needs d >= 1");
        }
        Ok(Self { kind: DomainKind::Sphere, dim: d, center: vec![0.0; d] })
    }

    /// Builds a polytope and computes its analytic center by damped Newton,
    /// starting from the average of `vertices`.
    pub fn polytope(
        inequalities: Vec<Constraint>,
        equalities: Vec<Constraint>,
        vertices: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let dim = vertices
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Configuration("polytope needs at least one vertex".into()))?;
        if inequalities.iter().chain(&equalities).any(|c| c.a.len() != dim) {
            return param("constraint dimension mismatch");
        }
        let tangent = if equalities.is_empty() {
            Mat::identity(dim)
        } else {
            let rows: Vec<Vec<f64>> = equalities.iter().map(|c| c.a.clone()).collect();
            linalg::null_space(&Mat::from_rows(&rows), 1e-9)?
        };
        let start = linalg::mean(&vertices);
        let body = Polytope { inequalities, equalities, tangent, vertices };
        if body.inequalities.iter().any(|c| c.slack(&start) <= BOUNDARY_MARGIN) {
            return Err(Error::Configuration(
                "vertex average is not strictly interior; polytope has no interior in its affine hull"
                    .into(),
            ));
        }
        let barrier = crate::regularizers::Regularizer::PolytopeBarrier {
            constraints: body.inequalities.clone(),
        };
        let zero = vec![0.0; dim];
        let center = crate::mirror_descent::newton_minimize(
            &barrier,
            Some(&body.tangent),
            &zero,
            &start,
            1e-10,
        )?;
        Ok(Self { kind: DomainKind::Polytope(body), dim, center })
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn polytope_body(&self) -> Option<&Polytope> {
        match &self.kind {
            DomainKind::Polytope(p) => Some(p),
            _ => None,
        }
    }

    /// Basis of feasible directions; `None` means all of `R^d`.
    pub fn tangent(&self) -> Option<&Mat> {
        self.polytope_body().map(|p| &p.tangent)
    }

    /// Largest Euclidean norm over the body.
    pub fn euclidean_radius(&self) -> f64 {
        match &self.kind {
            DomainKind::Simplex | DomainKind::Sphere => 1.0,
            DomainKind::Polytope(p) => p.vertices.iter().map(|v| linalg::norm(v)).fold(0.0, f64::max),
        }
    }

    /// Membership with tolerance `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match &self.kind {
            DomainKind::Simplex => {
                x.iter().all(|&v| v >= -tol) && (x.iter().sum::<f64>() - 1.0).abs() <= tol
            }
            DomainKind::Sphere => linalg::norm(x) <= 1.0 + tol,
            DomainKind::Polytope(p) => {
                p.inequalities.iter().all(|c| c.slack(x) >= -tol)
                    && p.equalities.iter().all(|c| c.slack(x).abs() <= tol)
            }
        }
    }

    /// Smallest distance-like slack to the boundary: min coordinate on the
    /// simplex, `1 - |x|^2` on the ball, min constraint slack on polytopes.
    pub fn margin(&self, x: &[f64]) -> f64 {
        match &self.kind {
            DomainKind::Simplex => x.iter().cloned().fold(f64::INFINITY, f64::min),
            DomainKind::Sphere => 1.0 - linalg::dot(x, x),
            DomainKind::Polytope(p) => {
                p.inequalities.iter().map(|c| c.slack(x)).fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn is_strictly_interior(&self, x: &[f64]) -> bool {
        self.contains(x, MEMBERSHIP_TOL) && self.margin(x) > BOUNDARY_MARGIN
    }

    /// Membership check along rays: the affine part (simplex sum, polytope
    /// equalities) is preserved by construction and not re-checked.
    fn ray_feasible(&self, x: &[f64]) -> bool {
        match &self.kind {
            DomainKind::Simplex => x.iter().all(|&v| v >= 0.0),
            DomainKind::Sphere => linalg::dot(x, x) <= 1.0,
            DomainKind::Polytope(p) => p.inequalities.iter().all(|c| c.slack(x) >= 0.0),
        }
    }

    /// Accepts points within tolerance and snaps them onto the body; rejects
    /// anything further out.
    pub fn snap(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !self.contains(x, MEMBERSHIP_TOL) {
            return Err(Error::DomainMembership(format!("{x:?}")));
        }
        Ok(match &self.kind {
            DomainKind::Simplex => {
                let mut y: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
                let s: f64 = y.iter().sum();
                y.iter_mut().for_each(|v| *v /= s);
                y
            }
            DomainKind::Sphere => {
                let n = linalg::norm(x);
                if n > 1.0 {
                    linalg::scale(x, 1.0 / n)
                } else {
                    x.to_vec()
                }
            }
            DomainKind::Polytope(_) => x.to_vec(),
        })
    }

    /// `c_eps(x) = x1 + (x - x1) / (1 + eps)`.
    pub fn project_center(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        if !(eps > 0.0) || !eps.is_finite() {
            return param(format!("projection offset must be positive, got {eps}"));
        }
        let x = self.snap(x)?;
        Ok(self.center.iter().zip(&x).map(|(c, v)| c + (v - c) / (1.0 + eps)).collect())
    }

    /// Minkowski function of `x` with pole `pole`.
    pub fn minkowski_gauge(&self, pole: &[f64], x: &[f64]) -> Result<f64> {
        if !self.is_strictly_interior(pole) {
            return Err(Error::DegeneratePole(format!("{pole:?} is not strictly interior")));
        }
        if !self.contains(x, MEMBERSHIP_TOL) {
            return Err(Error::DomainMembership(format!("{x:?}")));
        }
        let dir = linalg::sub(x, pole);
        if dir.iter().all(|v| *v == 0.0) {
            return Ok(0.0);
        }
        // pole + dir / t is feasible iff t >= gauge; t = 1 is feasible since x is in K.
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..GAUGE_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            let probe = linalg::add_scaled(pole, 1.0 / mid, &dir);
            if self.ray_feasible(&probe) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }
}

/// `(1 - eps) x + eps 1/d`, the simplex shrink onto `Delta^(eps)`.
pub fn simplex_shrink(x: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps <= 1.0) {
        return param(format!("shrink eps must lie in (0,1], got {eps}"));
    }
    if x.iter().any(|&v| v < -MEMBERSHIP_TOL) || (x.iter().sum::<f64>() - 1.0).abs() > MEMBERSHIP_TOL
    {
        return Err(Error::DomainMembership(format!("{x:?} is not on the simplex")));
    }
    let d = x.len() as f64;
    Ok(x.iter().map(|v| (1.0 - eps) * v.max(0.0) + eps / d).collect())
}

/// Unit vector `e_i` in `R^d`.
pub fn vertex(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}
