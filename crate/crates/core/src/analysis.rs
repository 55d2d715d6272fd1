//! Ensemble statistics and empirical accuracy checks: Mahalanobis coverage,
//! per-dimension variance bounds, and hull-membership probabilities for
//! runs with noise on a subset of dimensions.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EnsembleMember, RunResult};
use crate::geometry::{
    build_hulls_bc, convex_hull, hausdorff, mahalanobis_sq, GeometryError, Point, StateMatrix,
};

pub const DEFAULT_REL_TOL: f64 = 1e-10;
pub const DEFAULT_COVERAGE_SLACK: f64 = 0.04;
pub const DEFAULT_VARIANCE_SLACK: f64 = 0.05;
pub const DEFAULT_MEMBERSHIP_SLACK: f64 = 0.02;
/// Tolerance for "point lies in hull" checks on ensemble finals.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("ensemble has {got} runs, at least {needed} required")]
    Undersized { needed: usize, got: usize },
    #[error("covariance has no eigenvalue above the retention threshold")]
    Degenerate,
    #[error("point of dimension {found} in a {expected}-dimensional ensemble")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("run result has no recorded trajectory")]
    MissingTrajectory,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Final values of a Monte Carlo ensemble, one point per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub dim: usize,
    pub finals: Vec<Point>,
    pub config_digest: u64,
}

impl Ensemble {
    pub fn new(dim: usize, finals: Vec<Point>, config_digest: u64) -> Result<Self, AnalysisError> {
        if let Some(p) = finals.iter().find(|p| p.dim() != dim) {
            return Err(AnalysisError::DimensionMismatch {
                expected: dim,
                found: p.dim(),
            });
        }
        Ok(Self {
            dim,
            finals,
            config_digest,
        })
    }

    /// One final value per member: the mean of its normal agents' states.
    pub fn from_members(members: &[EnsembleMember], config_digest: u64) -> Result<Self, AnalysisError> {
        let first = members.first().ok_or(AnalysisError::Undersized { needed: 1, got: 0 })?;
        let dim = first.final_states.dim();
        let finals = members
            .iter()
            .map(|m| Point::centroid(m.final_states.rows()).ok_or(AnalysisError::Undersized { needed: 1, got: 0 }))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(dim, finals, config_digest)
    }

    pub fn runs(&self) -> usize {
        self.finals.len()
    }

    fn require(&self, needed: usize) -> Result<(), AnalysisError> {
        if self.runs() < needed {
            return Err(AnalysisError::Undersized {
                needed,
                got: self.runs(),
            });
        }
        Ok(())
    }
}

/// Sample mean and unbiased sample covariance (divisor `R - 1`).
pub fn ensemble_stats(e: &Ensemble) -> Result<(Point, DMatrix<f64>), AnalysisError> {
    e.require(2)?;
    let d = e.dim;
    // shift by the first point so identical samples give exactly zero
    let origin = e.finals[0];
    let shifted: Vec<Point> = e.finals.iter().map(|p| *p - origin).collect();
    let offset = Point::centroid(&shifted).expect("non-empty");
    let mean = origin + offset;
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for s in &shifted {
        let diff = *s - offset;
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += diff[a] * diff[b];
            }
        }
    }
    cov /= (e.runs() - 1) as f64;
    Ok((mean, cov))
}

/// Covariance restricted to its numerically non-singular eigenspace.
#[derive(Clone, Debug)]
pub struct RegularizedCov {
    /// `d x d_eff`, orthonormal columns spanning the retained eigenspace.
    pub projector: DMatrix<f64>,
    /// `projector^T cov projector`, positive definite.
    pub cov_reduced: DMatrix<f64>,
    pub d_eff: usize,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

impl RegularizedCov {
    /// Coordinates of `x` in the retained eigenbasis.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(x);
        (self.projector.transpose() * v).iter().copied().collect()
    }
}

/// Drop eigen-directions whose eigenvalue is below `rel_tol` times the largest.
pub fn regularize_cov(cov: &DMatrix<f64>, rel_tol: f64) -> Result<RegularizedCov, AnalysisError> {
    if !cov.is_square() || cov.nrows() == 0 {
        return Err(AnalysisError::Invalid("covariance must be a non-empty square matrix".into()));
    }
    if !(rel_tol >= 0.0) {
        return Err(AnalysisError::Invalid("rel_tol must be non-negative".into()));
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let (values, vectors) = jacobi_eigen(&sym);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(AnalysisError::Degenerate);
    }
    let mut order: Vec<usize> = (0..values.len())
        .filter(|&i| values[i] > rel_tol * max)
        .collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let d = cov.nrows();
    let d_eff = order.len();
    let mut projector = DMatrix::<f64>::zeros(d, d_eff);
    for (j, &i) in order.iter().enumerate() {
        projector.set_column(j, &vectors.column(i));
    }
    let reduced = projector.transpose() * &sym * &projector;
    let cov_reduced = (&reduced + reduced.transpose()) * 0.5;
    Ok(RegularizedCov {
        projector,
        cov_reduced,
        d_eff,
        eigenvalues: order.iter().map(|&i| values[i]).collect(),
    })
}

/// Cyclic Jacobi eigen-decomposition of a small symmetric matrix. Returns
/// eigenvalues and eigenvectors (as columns), accurate to a few ulps of the
/// largest eigenvalue.
pub fn jacobi_eigen(sym: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = sym.nrows();
    let mut a = sym.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        let scale: f64 = (0..n).map(|i| a[(i, i)] * a[(i, i)]).sum();
        if off <= f64::EPSILON * f64::EPSILON * 1e-4 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

/// Squared Mahalanobis distance of every final from the sample mean, in the
/// retained eigenspace of the sample covariance.
pub fn mahalanobis_profile(e: &Ensemble, rel_tol: f64) -> Result<(Vec<f64>, RegularizedCov), AnalysisError> {
    e.require(e.dim + 2)?;
    let (mean, cov) = ensemble_stats(e)?;
    let reg = regularize_cov(&cov, rel_tol)?;
    let origin = vec![0.0; reg.d_eff];
    let d2 = e
        .finals
        .iter()
        .map(|p| {
            let diff = *p - mean;
            mahalanobis_sq(&reg.project(diff.as_slice()), &origin, &reg.cov_reduced)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((d2, reg))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub chi: f64,
    /// Fraction of runs with squared distance at most `chi`.
    pub empirical: f64,
    /// `1 - d_eff / chi`; at most zero means the bound is vacuous.
    pub floor: f64,
    pub pass: bool,
    /// Volume of the `chi` ellipsoid of the reduced covariance.
    pub ellipsoid_volume: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub runs: usize,
    pub d_eff: usize,
    pub slack: f64,
    pub cov_det: f64,
    pub rows: Vec<CoverageRow>,
    pub note: String,
}

impl CoverageReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / d as f64 * unit_ball_volume(d - 2),
    }
}

pub fn mahalanobis_coverage(
    e: &Ensemble,
    chis: &[f64],
    slack: f64,
    rel_tol: f64,
) -> Result<CoverageReport, AnalysisError> {
    if chis.iter().any(|c| !(*c > 0.0)) {
        return Err(AnalysisError::Invalid("chi values must be positive".into()));
    }
    let (d2, reg) = mahalanobis_profile(e, rel_tol)?;
    let det = reg.cov_reduced.determinant();
    let r = e.runs() as f64;
    let rows = chis
        .iter()
        .map(|&chi| {
            let empirical = d2.iter().filter(|&&v| v <= chi).count() as f64 / r;
            let floor = 1.0 - reg.d_eff as f64 / chi;
            CoverageRow {
                chi,
                empirical,
                floor,
                pass: empirical >= floor - slack,
                ellipsoid_volume: unit_ball_volume(reg.d_eff) * det.sqrt() * chi.powf(reg.d_eff as f64 / 2.0),
            }
        })
        .collect();
    Ok(CoverageReport {
        runs: e.runs(),
        d_eff: reg.d_eff,
        slack,
        cov_det: det,
        rows,
        note: "mean and covariance estimated from the evaluated ensemble".into(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub chi: f64,
    /// Fraction of samples with squared distance at least `chi`.
    pub tail: f64,
    /// `d_eff / chi`.
    pub ceiling: f64,
    pub pass: bool,
}

/// Multivariate Chebyshev check: tail fraction at most `d_eff / chi + slack`.
pub fn chebyshev_tail(
    e: &Ensemble,
    chis: &[f64],
    slack: f64,
    rel_tol: f64,
) -> Result<Vec<TailRow>, AnalysisError> {
    let (d2, reg) = mahalanobis_profile(e, rel_tol)?;
    let r = e.runs() as f64;
    Ok(chis
        .iter()
        .map(|&chi| {
            let tail = d2.iter().filter(|&&v| v >= chi).count() as f64 / r;
            let ceiling = reg.d_eff as f64 / chi;
            TailRow {
                chi,
                tail,
                ceiling,
                pass: tail <= ceiling + slack,
            }
        })
        .collect())
}

/// Limit variance of the final value in one noisy dimension.
pub fn variance_bound(lambda: f64, upsilon: f64) -> f64 {
    lambda * lambda / (1.0 - upsilon * upsilon)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub dim: usize,
    pub variance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub bound: f64,
    pub slack: f64,
    pub rows: Vec<VarianceRow>,
}

impl VarianceReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

pub fn variance_bound_check(
    e: &Ensemble,
    lambda: f64,
    upsilon: f64,
    slack: f64,
) -> Result<VarianceReport, AnalysisError> {
    if !(0.0..1.0).contains(&upsilon) {
        return Err(AnalysisError::Invalid("upsilon must lie in [0, 1)".into()));
    }
    let (_, cov) = ensemble_stats(e)?;
    let bound = variance_bound(lambda, upsilon);
    let rows = (0..e.dim)
        .map(|k| VarianceRow {
            dim: k,
            variance: cov[(k, k)],
            pass: cov[(k, k)] <= bound * (1.0 + slack),
        })
        .collect();
    Ok(VarianceReport { bound, slack, rows })
}

/// Hull-membership report for noise confined to `noisy_dims`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    pub noisy_dims: Vec<usize>,
    pub margins: Vec<f64>,
    /// Hausdorff distance between hull(initials) and the widened hull.
    pub hausdorff_ac: f64,
    /// Diameter of hull(initials).
    pub diameter_a: f64,
    /// `sqrt(d/2) * diameter + |margins|`.
    pub geometric_bound: f64,
    pub geometric_pass: bool,
    /// Distance from the ensemble mean to the nearer end of the initial
    /// range, per noisy dimension.
    pub mean_clearance: Vec<f64>,
    /// Product floor on the membership probability, clamped at zero.
    pub floor: f64,
    pub membership: f64,
    pub runs: usize,
}

impl MembershipReport {
    /// Geometric bound holds and, where the floor is informative, the
    /// empirical membership is within `slack` of it.
    pub fn pass(&self, slack: f64) -> bool {
        self.geometric_pass && (self.floor <= 0.0 || self.membership >= self.floor - slack)
    }
}

pub fn membership_report(
    normal_initials: &StateMatrix,
    noisy_dims: &[usize],
    margins: &[f64],
    lambda: f64,
    upsilon: f64,
    e: &Ensemble,
) -> Result<MembershipReport, AnalysisError> {
    e.require(1)?;
    if normal_initials.dim() != e.dim {
        return Err(AnalysisError::DimensionMismatch {
            expected: e.dim,
            found: normal_initials.dim(),
        });
    }
    let a = convex_hull(normal_initials.rows(), e.dim)?;
    let (_, c) = build_hulls_bc(normal_initials, noisy_dims, margins)?;
    let hausdorff_ac = hausdorff(&a, &c)?;
    let diameter_a = a.diameter();
    let margin_norm = margins.iter().map(|r| r * r).sum::<f64>().sqrt();
    let geometric_bound = (e.dim as f64 / 2.0).sqrt() * diameter_a + margin_norm;

    let mean = Point::centroid(&e.finals).expect("non-empty");
    let var = variance_bound(lambda, upsilon);
    let mut floor = 1.0;
    let mut mean_clearance = Vec::with_capacity(noisy_dims.len());
    for (&k, &r) in noisy_dims.iter().zip(margins) {
        let (lo, hi) = normal_initials.column_range(k).expect("non-empty");
        let l = (mean[k] - lo).min(hi - mean[k]);
        mean_clearance.push(l);
        let reach = l + r;
        let factor = if reach > 0.0 { 1.0 - var / (reach * reach) } else { 0.0 };
        floor *= factor.max(0.0);
    }
    let mut inside = 0usize;
    for p in &e.finals {
        if c.contains(p, MEMBERSHIP_TOL)? {
            inside += 1;
        }
    }
    Ok(MembershipReport {
        noisy_dims: noisy_dims.to_vec(),
        margins: margins.to_vec(),
        hausdorff_ac,
        diameter_a,
        geometric_bound,
        geometric_pass: hausdorff_ac <= geometric_bound + 1e-9,
        mean_clearance,
        floor,
        membership: inside as f64 / e.runs() as f64,
        runs: e.runs(),
    })
}

/// Ensemble mean and its distance to hull(initials).
pub fn mean_hull_distance(normal_initials: &StateMatrix, e: &Ensemble) -> Result<(Point, f64), AnalysisError> {
    e.require(1)?;
    let a = convex_hull(normal_initials.rows(), e.dim)?;
    let mean = Point::centroid(&e.finals).expect("non-empty");
    Ok((mean, a.distance_to(&mean)))
}

/// Largest pairwise distance between normal agents at each recorded step.
pub fn agreement_trace(run: &RunResult) -> Result<Vec<f64>, AnalysisError> {
    let traj = run.trajectory.as_ref().ok_or(AnalysisError::MissingTrajectory)?;
    Ok(traj.iter().map(StateMatrix::max_pairwise_distance).collect())
}
