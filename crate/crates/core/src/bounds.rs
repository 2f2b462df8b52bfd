//! Closed-form regret bounds and the symbols they share.
//!
//! Leading terms are evaluated exactly. Remainder terms hidden in O-tilde
//! are evaluated with every implied constant set to 1 and are reported
//! separately, so curves can be compared by trend only.

use serde::{Deserialize, Serialize};

use crate::domains::Constraint;
use crate::error::{Error, Result};
use crate::regularizers::{max_tsallis_entropy, tsallis_entropy};

/// Resolution of the beta and eps scans.
pub const SCAN_STEP: f64 = 1e-3;
pub const LAMBERT_TOL: f64 = 1e-12;

fn spec<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Spec(msg.into()))
}

/// Principal branch of Lambert W for `z >= 0`, by Newton on `w e^w = z`.
pub fn lambert_w(z: f64) -> Result<f64> {
    if !(z >= 0.0) || !z.is_finite() {
        return spec(format!("Lambert W needs a finite z >= 0, got {z}"));
    }
    let mut w = if z < 1.0 { z / (1.0 + z) } else { z.ln() - z.ln().ln().max(0.0) };
    for _ in 0..100 {
        let ew = w.exp();
        let step = (w * ew - z) / (ew * (w + 1.0));
        w -= step;
        if step.abs() <= LAMBERT_TOL * (1.0 + w.abs()) {
            return Ok(w);
        }
    }
    Err(Error::Numerical(format!("Lambert W did not converge at z = {z}")))
}

/// `(75 d / (eps Delta^2)) log(d / (eps Delta^2))`: the task length past
/// which best-arm identification is reliable.
pub fn iota_threshold(d: usize, eps: f64, gap: f64) -> f64 {
    let c = d as f64 / (eps * gap * gap);
    75.0 * c * c.ln()
}

pub fn iota(d: usize, m: usize, eps: f64, gap: f64) -> bool {
    m as f64 >= iota_threshold(d, eps, gap)
}

/// `exp(-3 eps Delta^2 m / (28 d))`; misidentification is at most `d kappa`.
pub fn kappa(d: usize, m: usize, eps: f64, gap: f64) -> f64 {
    (-3.0 * eps * gap * gap * m as f64 / (28.0 * d as f64)).exp()
}

/// Excess of the expected estimated-optima entropy over the true one:
/// `3 beta ((d/eps)^(1-beta) - 1)/(1-beta) kappa`.
pub fn entropy_excess(d: usize, m: usize, eps: f64, gap: f64, beta: f64) -> f64 {
    let r = d as f64 / eps;
    let w = if (1.0 - beta).abs() < 1e-6 { r.ln() } else { (r.powf(1.0 - beta) - 1.0) / (1.0 - beta) };
    3.0 * beta * w * kappa(d, m, eps, gap)
}

/// Which statement the entropy slack of `h_beta` is quoted from. They are
/// algebraically equal once the `m` inside the square root is factored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlackForm {
    /// `H_beta + 56/(d m)` inside `h_beta`.
    PerDm,
    /// `H_beta m + 56/d` under the square root.
    PerD,
}

/// `h_beta(Delta)`: the entropy term when identification succeeds, the
/// worst-case entropy otherwise.
pub fn h_beta(entropy: f64, d: usize, m: usize, eps: f64, gap: f64, beta: f64) -> f64 {
    if iota(d, m, eps, gap) {
        entropy + 56.0 / (d as f64 * m as f64)
    } else {
        max_tsallis_entropy(d, beta)
    }
}

/// `2 sqrt(H d^beta m / beta)`.
pub fn tsallis_leading(entropy: f64, d: usize, m: usize, beta: f64) -> f64 {
    2.0 * (entropy * (d as f64).powf(beta) * m as f64 / beta).sqrt()
}

/// Scan grid over `[lo, hi]` at `SCAN_STEP`, endpoints included.
pub fn scan_grid(lo: f64, hi: f64) -> Vec<f64> {
    let n = ((hi - lo) / SCAN_STEP).floor() as usize;
    let mut g: Vec<f64> = (0..=n).map(|i| lo + i as f64 * SCAN_STEP).filter(|b| *b <= hi).collect();
    if g.last().is_none_or(|b| hi - b > 1e-12) {
        g.push(hi);
    }
    g
}

/// Minimum of `f` over the scan grid of `[lo, hi]`, with its argmin.
pub fn scan_min(lo: f64, hi: f64, f: impl Fn(f64) -> Result<f64>) -> Result<(f64, f64)> {
    let mut best = (f64::INFINITY, lo);
    for b in scan_grid(lo, hi) {
        let v = f(b)?;
        if v < best.0 {
            best = (v, b);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Numerical("bound scan produced no finite value".into()));
    }
    Ok(best)
}

/// Lower end of the beta range for the three implicit-exploration regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    One,
    Half,
    LogD,
}

impl Regime {
    pub fn beta_lo(self, d: usize) -> f64 {
        match self {
            Regime::One => 1.0,
            Regime::Half => 0.5,
            Regime::LogD => 1.0 / (d as f64).ln(),
        }
    }
}

/// A bound and its parameters. Entropies are computed from `optima`, a
/// distribution (or histogram) over the arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "which", rename_all = "snake_case")]
pub enum BoundSpec {
    /// `2 min_{beta in (0,1]} sqrt(H_beta d^beta m / beta)`.
    MainTerm { d: usize, m: usize, optima: Vec<f64> },
    /// Implicit exploration, one of three beta ranges.
    Implicit { regime: Regime, d: usize, m: usize, tasks: usize, optima: Vec<f64> },
    /// Guaranteed exploration with a known gap, minimized over eta.
    Conditional {
        d: usize,
        m: usize,
        eps: f64,
        gap: f64,
        beta_lo: f64,
        beta_hi: f64,
        optima: Vec<f64>,
        slack: SlackForm,
    },
    /// Known-gap corollary with the Lambert W fast term.
    GuaranteedKnownGap { d: usize, m: usize, tasks: usize, gap: f64, beta_lo: f64, optima: Vec<f64> },
    /// Unknown-gap corollary, capped by `8 sqrt(d m)`.
    GuaranteedUnknownGap { d: usize, m: usize, tasks: usize, gap: f64, optima: Vec<f64> },
    /// Outlier robustness: `s + d^(1-beta) / T^(beta (1-p))`.
    Robust { d: usize, s: usize, tasks: usize, p: f64, beta: f64 },
    /// Generic BLO: `4 d V sqrt(2 m) + eps m`.
    Blo { d: usize, m: usize, v2: f64, eps: f64 },
    /// Sphere corollary in `E |mean of estimates|^2`.
    Sphere { d: usize, m: usize, tasks: usize, mean_sq_norm: f64 },
    /// Shortest-path corollary from the estimated optimal flows.
    Path { m: usize, tasks: usize, constraints: Vec<Constraint>, center: Vec<f64>, estimates: Vec<Vec<f64>> },
    /// Lipschitz constant of the MAB bound in beta.
    Lipschitz { d: usize, m: usize, eps: f64, eta: f64 },
    /// Misidentification probability bound `d kappa`.
    Misidentification { d: usize, m: usize, eps: f64, gap: f64 },
}

/// Leading and remainder parts of an evaluated bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub leading: f64,
    pub remainder: f64,
    /// Minimizing beta or eps, when the bound scans one.
    pub argmin: Option<f64>,
}

impl BoundValue {
    pub fn total(&self) -> f64 {
        self.leading + self.remainder
    }
}

fn check_optima(optima: &[f64], d: usize) -> Result<Vec<f64>> {
    if optima.len() != d || d < 2 {
        return spec(format!("optima must have d = {d} >= 2 entries, got {}", optima.len()));
    }
    let s: f64 = optima.iter().sum();
    if !(s > 0.0) || optima.iter().any(|v| !(*v >= 0.0)) {
        return spec("optima must be a non-negative histogram with positive mass");
    }
    Ok(optima.iter().map(|v| v / s).collect())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        spec(format!("{name} must be positive and finite, got {v}"))
    }
}

fn entropy(p: &[f64], beta: f64) -> Result<f64> {
    Ok(tsallis_entropy(p, beta)?.max(0.0))
}

impl BoundSpec {
    /// Parses a spec from TOML or JSON text; missing fields are spec errors.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim_start();
        if t.starts_with('{') {
            serde_json::from_str(t).map_err(|e| Error::Spec(e.to_string()))
        } else {
            toml::from_str(t).map_err(|e| Error::Spec(e.to_string()))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BoundSpec::MainTerm { .. } => "main_term",
            BoundSpec::Implicit { .. } => "implicit",
            BoundSpec::Conditional { .. } => "conditional",
            BoundSpec::GuaranteedKnownGap { .. } => "guaranteed_known_gap",
            BoundSpec::GuaranteedUnknownGap { .. } => "guaranteed_unknown_gap",
            BoundSpec::Robust { .. } => "robust",
            BoundSpec::Blo { .. } => "blo",
            BoundSpec::Sphere { .. } => "sphere",
            BoundSpec::Path { .. } => "path",
            BoundSpec::Lipschitz { .. } => "lipschitz",
            BoundSpec::Misidentification { .. } => "misidentification",
        }
    }
}

/// Evaluates a bound to its total value.
pub fn eval_bound(spec: &BoundSpec) -> Result<f64> {
    Ok(eval_terms(spec)?.total())
}

pub fn eval_terms(b: &BoundSpec) -> Result<BoundValue> {
    let done = |leading: f64, remainder: f64, argmin: Option<f64>| -> Result<BoundValue> {
        if leading.is_finite() && remainder.is_finite() {
            Ok(BoundValue { leading, remainder, argmin })
        } else {
            Err(Error::Numerical(format!("bound {} is not finite", b.name())))
        }
    };
    match b {
        BoundSpec::MainTerm { d, m, optima } => {
            let p = check_optima(optima, *d)?;
            let (v, arg) = scan_min(SCAN_STEP, 1.0, |beta| Ok(tsallis_leading(entropy(&p, beta)?, *d, *m, beta)))?;
            done(v, 0.0, Some(arg))
        }
        BoundSpec::Implicit { regime, d, m, tasks, optima } => {
            let p = check_optima(optima, *d)?;
            let (v, arg) =
                scan_min(regime.beta_lo(*d), 1.0, |beta| Ok(tsallis_leading(entropy(&p, beta)?, *d, *m, beta)))?;
            let (df, mf, tf) = (*d as f64, *m as f64, *tasks as f64);
            let rem = match regime {
                Regime::One => (df * mf).powf(2.0 / 3.0) / tf.cbrt(),
                Regime::Half => (df * mf).powf(5.0 / 7.0) / tf.powf(2.0 / 7.0) + df * mf.sqrt() / tf.powf(0.25),
                Regime::LogD => ((df * mf).powf(0.75) + df * mf.sqrt()) / tf.powf(0.25),
            };
            done(v, rem, Some(arg))
        }
        BoundSpec::Conditional { d, m, eps, gap, beta_lo, beta_hi, optima, slack } => {
            let p = check_optima(optima, *d)?;
            check_positive("eps", *eps)?;
            check_positive("gap", *gap)?;
            if !(*beta_lo > 0.0 && beta_lo <= beta_hi && *beta_hi <= 1.0) {
                return spec("beta range must satisfy 0 < lo <= hi <= 1");
            }
            let ok = iota(*d, *m, *eps, *gap);
            let (df, mf) = (*d as f64, *m as f64);
            let (v, arg) = scan_min(*beta_lo, *beta_hi, |beta| {
                let h = entropy(&p, beta)?;
                Ok(match (ok, slack) {
                    (true, SlackForm::PerDm) => tsallis_leading(h + 56.0 / (df * mf), *d, *m, beta),
                    (true, SlackForm::PerD) => 2.0 * ((h * mf + 56.0 / df) * df.powf(beta) / beta).sqrt(),
                    (false, _) => tsallis_leading(max_tsallis_entropy(*d, beta), *d, *m, beta),
                })
            })?;
            done(eps * mf + v, 0.0, Some(arg))
        }
        BoundSpec::GuaranteedKnownGap { d, m, tasks, gap, beta_lo, optima } => {
            let p = check_optima(optima, *d)?;
            check_positive("gap", *gap)?;
            let (df, mf, tf) = (*d as f64, *m as f64, *tasks as f64);
            let (v, arg) = scan_min(*beta_lo, 1.0, |beta| {
                Ok(2.0 * ((entropy(&p, beta)? * mf + 56.0 / df) * df.powf(beta) / beta).sqrt())
            })?;
            let fast = 75.0 * df / (gap * gap) * lambert_w(mf / 75.0)?;
            let rem = df.powf(4.0 / 3.0) * mf.powf(2.0 / 3.0) / tf.cbrt()
                + df.powf(5.0 / 3.0) * mf.powf(5.0 / 6.0) / tf.powf(2.0 / 3.0)
                + df * gap.powi(4) * mf.powi(3) / tf;
            done(v + fast, rem, Some(arg))
        }
        BoundSpec::GuaranteedUnknownGap { d, m, tasks, gap, optima } => {
            let p = check_optima(optima, *d)?;
            check_positive("gap", *gap)?;
            let (df, mf, tf) = (*d as f64, *m as f64, *tasks as f64);
            let (v, arg) = scan_min(SCAN_STEP, 1.0, |beta| Ok(tsallis_leading(entropy(&p, beta)?, *d, *m, beta)))?;
            let lead = (v + df.powf(0.75) * mf.cbrt() / gap).min(8.0 * (df * mf).sqrt());
            let rem = df.powf(4.0 / 3.0) * mf.powf(2.0 / 3.0) / tf.cbrt()
                + df.powf(5.0 / 3.0) * mf.powf(5.0 / 6.0) / tf.powf(2.0 / 3.0)
                + df * df * mf.powf(7.0 / 3.0) / tf;
            done(lead, rem, Some(arg))
        }
        BoundSpec::Robust { d, s, tasks, p, beta } => {
            if !(*p >= 0.0 && *p <= 1.0) || !(*beta > 0.0 && *beta <= 1.0) || *tasks == 0 {
                return spec("robust bound needs p in [0,1], beta in (0,1], T >= 1");
            }
            done(robust_entropy_bound(*d, *s, *tasks, *p, *beta), 0.0, None)
        }
        BoundSpec::Blo { d, m, v2, eps } => {
            if !(*v2 >= 0.0) {
                return spec("V^2 must be non-negative");
            }
            done(4.0 * *d as f64 * (v2 * 2.0 * *m as f64).sqrt() + eps * *m as f64, 0.0, None)
        }
        BoundSpec::Sphere { d, m, tasks, mean_sq_norm } => {
            if !(*mean_sq_norm >= 0.0 && *mean_sq_norm <= 1.0) || *m == 0 {
                return spec("sphere bound needs E|xbar|^2 in [0,1] and m >= 1");
            }
            let (df, mf, tf) = (*d as f64, *m as f64, *tasks as f64);
            let (v, arg) = scan_min(1.0 / mf, 1.0, |e| {
                Ok(4.0 * df * (2.0 * mf * (1.0 + (1.0 - mean_sq_norm) / (2.0 * e + e * e)).ln()).sqrt() + e * mf)
            })?;
            done(v, df * mf.powf(1.5) / tf.powf(0.75) + df * mf / tf.powf(0.25), Some(arg))
        }
        BoundSpec::Path { m, tasks, constraints, center, estimates } => {
            if estimates.is_empty() || constraints.is_empty() || *m == 0 {
                return spec("path bound needs constraints, estimates and m >= 1");
            }
            let e = center.len() as f64;
            let mf = *m as f64;
            let (v, arg) = scan_min(1.0 / mf, 1.0, |eps| {
                let mut total = 0.0;
                for c in constraints {
                    let slacks: Vec<f64> = estimates
                        .iter()
                        .map(|x| {
                            let y: Vec<f64> =
                                center.iter().zip(x).map(|(c0, v)| c0 + (v - c0) / (1.0 + eps)).collect();
                            c.slack(&y)
                        })
                        .collect();
                    if slacks.iter().any(|s| !(*s > 0.0)) {
                        return Err(Error::Numerical("projected estimate on the polytope boundary".into()));
                    }
                    let n = slacks.len() as f64;
                    let am = slacks.iter().sum::<f64>() / n;
                    let lgm = slacks.iter().map(|s| s.ln()).sum::<f64>() / n;
                    total += (am.ln() - lgm).max(0.0);
                }
                Ok(4.0 * e * (2.0 * mf * total).sqrt() + eps * mf)
            })?;
            let tf = *tasks as f64;
            done(v, e.powi(4) * mf.powf(1.5) / tf.powf(0.75) + e.powf(2.5) * mf.powf(5.0 / 6.0) / tf.powf(0.25), Some(arg))
        }
        BoundSpec::Lipschitz { d, m, eps, eta } => {
            check_positive("eps", *eps)?;
            check_positive("eta", *eta)?;
            done(crate::meta_learner::lipschitz_eta(*d, *m, *eps, *eta), 0.0, None)
        }
        BoundSpec::Misidentification { d, m, eps, gap } => done(*d as f64 * kappa(*d, *m, *eps, *gap), 0.0, None),
    }
}

/// `s + d^(1-beta) / T^(beta (1-p))`, the outlier-robust entropy bound
/// without its constant.
pub fn robust_entropy_bound(d: usize, s: usize, tasks: usize, p: f64, beta: f64) -> f64 {
    s as f64 + (d as f64).powf(1.0 - beta) / (tasks as f64).powf(beta * (1.0 - p))
}

/// Closed form of the sphere similarity at offset `eps` when the mean of
/// unit-norm estimates has norm `r`.
pub fn sphere_similarity(eps: f64, r: f64) -> f64 {
    let c = (1.0 + eps).powi(-2);
    ((1.0 - c * r * r) / (1.0 - c)).ln()
}
