//! Privacy accounting for noisy consensus: the concentrated geo-privacy
//! coefficient, exact truncated Rényi divergence of a coupled pair of runs,
//! and the per-step Gaussian-mechanism DP epsilon.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum PrivacyError {
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("shift trace has {available} iterations, horizon {horizon} requested")]
    TraceTooShort { available: usize, horizon: usize },
}

fn domain(msg: impl Into<String>) -> PrivacyError {
    PrivacyError::Domain(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgpParams {
    /// Total agent count, faulty agents included.
    pub n: usize,
    pub lambda: f64,
    pub upsilon: f64,
    pub gamma_l: f64,
}

impl CgpParams {
    pub fn validate(&self) -> Result<(), PrivacyError> {
        if self.n == 0 {
            return Err(domain("n must be >= 1"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(domain("lambda must be > 0"));
        }
        if !(self.upsilon > 0.0 && self.upsilon < 1.0) {
            return Err(domain("upsilon must lie in (0, 1)"));
        }
        if !(self.gamma_l > 0.0 && self.gamma_l < 1.0) {
            return Err(domain("gamma_l must lie in (0, 1)"));
        }
        if self.gamma_l <= 1.0 - self.upsilon {
            return Err(domain(format!(
                "gamma_l = {} must exceed 1 - upsilon = {}",
                self.gamma_l,
                1.0 - self.upsilon
            )));
        }
        Ok(())
    }
}

/// `rho = n upsilon^2 / (2 lambda^2 (upsilon^2 - (1 - gamma_l)^2))`.
pub fn cgp_rho(p: &CgpParams) -> Result<f64, PrivacyError> {
    p.validate()?;
    let u2 = p.upsilon * p.upsilon;
    let g = 1.0 - p.gamma_l;
    Ok(p.n as f64 * u2 / (2.0 * p.lambda * p.lambda * (u2 - g * g)))
}

/// Order-`alpha` Rényi divergence between `N(m, sigma2 I)` and
/// `N(m + shift, sigma2 I)`: `alpha |shift|^2 / (2 sigma2)`.
pub fn renyi_gaussian(alpha: f64, shift: &Point, sigma2: f64) -> Result<f64, PrivacyError> {
    if !(alpha > 1.0) {
        return Err(domain("alpha must exceed 1"));
    }
    if !(sigma2 > 0.0) {
        return Err(domain("variance must be positive"));
    }
    Ok(alpha * shift.norm_sq() / (2.0 * sigma2))
}

/// Monte Carlo estimate of the same divergence, sampling from the first
/// distribution: `log E[(p/q)^(alpha-1)] / (alpha - 1)`. Diagnostic only.
pub fn renyi_gaussian_mc<R: Rng + ?Sized>(
    alpha: f64,
    shift: &Point,
    sigma2: f64,
    draws: usize,
    rng: &mut R,
) -> Result<f64, PrivacyError> {
    renyi_gaussian(alpha, shift, sigma2)?;
    if draws == 0 {
        return Err(domain("need at least one draw"));
    }
    let sd = sigma2.sqrt();
    let mu2 = shift.norm_sq();
    let mut acc = 0.0;
    for _ in 0..draws {
        // log p(x) - log q(x) with x ~ N(0, sigma2 I), q centred at `shift`
        let mut dot = 0.0;
        for k in 0..shift.dim() {
            dot += sd * rng.sample::<f64, _>(StandardNormal) * shift[k];
        }
        let log_ratio = (mu2 - 2.0 * dot) / (2.0 * sigma2);
        acc += ((alpha - 1.0) * log_ratio).exp();
    }
    Ok((acc / draws as f64).ln() / (alpha - 1.0))
}

/// `sum_{h < horizon} sum_i alpha |offset_i(h)|^2 / (2 lambda^2 upsilon^(2h))`
/// over a coupled run's noise offsets `trace[h][i]`.
pub fn divergence_truncated(
    alpha: f64,
    trace: &[Vec<Point>],
    lambda: f64,
    upsilon: f64,
    horizon: usize,
) -> Result<f64, PrivacyError> {
    if !(alpha > 1.0) {
        return Err(domain("alpha must exceed 1"));
    }
    if !(lambda > 0.0) || !(upsilon > 0.0 && upsilon < 1.0) {
        return Err(domain("need lambda > 0 and upsilon in (0, 1)"));
    }
    if horizon > trace.len() {
        return Err(PrivacyError::TraceTooShort {
            available: trace.len(),
            horizon,
        });
    }
    let ln_u = upsilon.ln();
    let mut total = 0.0;
    for (h, row) in trace[..horizon].iter().enumerate() {
        for off in row {
            let sq = off.norm_sq();
            if sq > 0.0 {
                // log form: both the offset and upsilon^(2h) may underflow
                total += (sq.ln() - 2.0 * h as f64 * ln_u).exp();
            }
        }
    }
    Ok(alpha * total / (2.0 * lambda * lambda))
}

/// Composition of concentrated privacy guarantees: the coefficients add.
pub fn cgp_compose(rhos: &[f64]) -> f64 {
    debug_assert!(rhos.iter().all(|r| *r >= 0.0));
    rhos.iter().sum()
}

/// Per-step epsilon lower bound for the Gaussian mechanism at iteration `h`:
/// `sqrt(2 ln(1.25/delta)) ell (1 - gamma_l)^h / (lambda upsilon^h)`.
pub fn dp_epsilon(
    h: usize,
    ell: f64,
    delta: f64,
    lambda: f64,
    upsilon: f64,
    gamma_l: f64,
) -> Result<f64, PrivacyError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain("delta must lie in (0, 1)"));
    }
    if !(ell > 0.0) || !(lambda > 0.0) {
        return Err(domain("need ell > 0 and lambda > 0"));
    }
    if !(upsilon > 0.0 && upsilon < 1.0) || !(gamma_l > 0.0 && gamma_l < 1.0) {
        return Err(domain("need upsilon and gamma_l in (0, 1)"));
    }
    let base = (2.0 * (1.25 / delta).ln()).sqrt() * ell / lambda;
    Ok(base * ((1.0 - gamma_l) / upsilon).powi(h as i32))
}

/// One divergence check of a coupled run against `alpha rho dist^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceAudit {
    pub alpha: f64,
    pub horizon: usize,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpRow {
    pub h: usize,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub params: CgpParams,
    pub rho: f64,
    /// Largest per-agent shift norm.
    pub dist: f64,
    /// Sum of squared shift norms, for diagnostics.
    pub shift_sum_sq: f64,
    pub audits: Vec<DivergenceAudit>,
    pub dp_table: Vec<DpRow>,
    /// Largest per-coordinate gap between the two runs' transmissions.
    pub transmitted_gap: f64,
}

impl PrivacyReport {
    pub fn pass(&self) -> bool {
        self.audits.iter().all(|a| a.pass)
    }
}

/// Largest and summed-squared norms of the shifts.
pub fn shift_distance(shifts: &[Point]) -> (f64, f64) {
    let dist = shifts.iter().map(Point::norm).fold(0.0, f64::max);
    let sum_sq = shifts.iter().map(Point::norm_sq).sum();
    (dist, sum_sq)
}

/// Divergence audits for each alpha over the first `horizon` iterations.
pub fn audit_divergence(
    params: &CgpParams,
    alphas: &[f64],
    shifts: &[Point],
    trace: &[Vec<Point>],
    horizon: usize,
) -> Result<Vec<DivergenceAudit>, PrivacyError> {
    let rho = cgp_rho(params)?;
    let (dist, _) = shift_distance(shifts);
    alphas
        .iter()
        .map(|&alpha| {
            let value = divergence_truncated(alpha, trace, params.lambda, params.upsilon, horizon)?;
            let bound = alpha * rho * dist * dist;
            Ok(DivergenceAudit {
                alpha,
                horizon,
                value,
                bound,
                pass: value <= bound,
            })
        })
        .collect()
}
