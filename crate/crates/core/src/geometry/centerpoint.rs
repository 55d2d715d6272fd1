//! Depth-certified centerpoints for d in {2, 3}.
//!
//! Candidates are generated in stages of increasing cost (centroid and
//! coordinate-wise median, iterated Radon points, pairwise line
//! intersections in 2D, then a bounded local random search). Every candidate
//! is scored with the exact Tukey depth, and a point is returned only once
//! its verified depth reaches the target: the first such candidate, or the
//! deepest of all of them under [`Selection::Deepest`].

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::depth::depth_value;
use super::point::Point;
use super::{GeometryError, DEFAULT_TOL};

/// Required depth: `ceil(n/3)` in 2D and `ceil(n/6)` in 3D.
pub fn depth_target(n: usize, dim: usize) -> usize {
    match dim {
        2 => n.div_ceil(3),
        _ => n.div_ceil(6),
    }
}

/// Knobs for the candidate search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CenterpointSearch {
    /// Depth evaluations allowed in the final local search stage.
    pub local_budget: usize,
    /// Independent iterated-Radon repetitions.
    pub radon_repeats: usize,
    /// Pairwise line intersections are tried in 2D up to this cloud size.
    pub intersection_max_n: usize,
    pub tol: f64,
    pub selection: Selection,
}

/// Which verified candidate is returned.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Stop at the first candidate that meets the target.
    #[default]
    FirstValid,
    /// Score every candidate and keep the deepest.
    Deepest,
}

impl Default for CenterpointSearch {
    fn default() -> Self {
        Self {
            local_budget: 2_000,
            radon_repeats: 4,
            intersection_max_n: 15,
            tol: DEFAULT_TOL,
            selection: Selection::FirstValid,
        }
    }
}

/// Centerpoint with the default search and a fixed internal seed.
pub fn centerpoint(cloud: &[Point], dim: usize) -> Result<(Point, usize), GeometryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_cafe);
    CenterpointSearch::default().find(cloud, dim, &mut rng)
}

struct Best {
    point: Point,
    depth: usize,
}

impl Best {
    fn offer(&mut self, p: Point, cloud: &[Point], tol: f64) {
        if !p.is_finite() {
            return;
        }
        let d = depth_value(&p, cloud, tol);
        if d > self.depth {
            self.point = p;
            self.depth = d;
        }
    }
}

impl CenterpointSearch {
    pub fn find<R: Rng + ?Sized>(
        &self,
        cloud: &[Point],
        dim: usize,
        rng: &mut R,
    ) -> Result<(Point, usize), GeometryError> {
        if dim != 2 && dim != 3 {
            return Err(GeometryError::UnsupportedDimension(dim));
        }
        if let Some(bad) = cloud.iter().find(|q| q.dim() != dim) {
            return Err(GeometryError::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        if cloud.len() < dim + 1 {
            return Err(GeometryError::InsufficientPoints {
                needed: dim + 1,
                got: cloud.len(),
            });
        }
        let n = cloud.len();
        let target = depth_target(n, dim);
        let tol = self.tol;

        let mut best = Best {
            point: cloud[0],
            depth: 0,
        };
        best.offer(coordinate_median(cloud), cloud, tol);
        best.offer(Point::centroid(cloud).unwrap(), cloud, tol);
        let early = self.selection == Selection::FirstValid;
        if early && best.depth >= target {
            return Ok((best.point, best.depth));
        }

        for _ in 0..self.radon_repeats {
            for p in iterated_radon(cloud, dim, rng) {
                best.offer(p, cloud, tol);
            }
        }
        if early && best.depth >= target {
            return Ok((best.point, best.depth));
        }

        if dim == 2 && n <= self.intersection_max_n {
            for p in pairwise_line_intersections(cloud) {
                best.offer(p, cloud, tol);
                if early && best.depth >= target {
                    return Ok((best.point, best.depth));
                }
            }
        }
        if best.depth >= target {
            return Ok((best.point, best.depth));
        }

        let spread = cloud
            .iter()
            .map(|q| q.dist(&best.point))
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut scale = 0.25 * spread;
        for k in 0..self.local_budget {
            let mut step = Point::zeros(dim);
            for c in 0..dim {
                step[c] = rng.sample::<f64, _>(StandardNormal) * scale;
            }
            let before = best.depth;
            best.offer(best.point + step, cloud, tol);
            if best.depth >= target {
                return Ok((best.point, best.depth));
            }
            if best.depth == before && k % 50 == 49 {
                scale *= 0.5;
            }
        }
        Err(GeometryError::SearchExhausted {
            best_depth: best.depth,
            target,
        })
    }
}

/// Per-coordinate median (midpoint of the two middle values for even n).
pub fn coordinate_median(cloud: &[Point]) -> Point {
    let dim = cloud[0].dim();
    let mut out = Point::zeros(dim);
    let mut col: Vec<f64> = Vec::with_capacity(cloud.len());
    for k in 0..dim {
        col.clear();
        col.extend(cloud.iter().map(|p| p[k]));
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = col.len();
        out[k] = if m % 2 == 1 {
            col[m / 2]
        } else {
            0.5 * (col[m / 2 - 1] + col[m / 2])
        };
    }
    out
}

/// Radon point of exactly `dim + 2` points, if they are affinely spanning.
pub fn radon_point(pts: &[Point]) -> Option<Point> {
    let dim = pts[0].dim();
    debug_assert_eq!(pts.len(), dim + 2);
    // affine dependence: sum l_i p_i = 0, sum l_i = 0, with l_last = -1
    let m = dim + 1;
    let a = DMatrix::from_fn(m, m, |r, c| if r < dim { pts[c][r] } else { 1.0 });
    let last = pts[dim + 1];
    let b = DVector::from_fn(m, |r, _| if r < dim { last[r] } else { 1.0 });
    let sol = a.lu().solve(&b)?;
    let mut lambda: Vec<f64> = sol.iter().copied().collect();
    lambda.push(-1.0);
    let mut acc = Point::zeros(dim);
    let mut mass = 0.0;
    for (l, p) in lambda.iter().zip(pts) {
        if *l > 0.0 {
            acc = acc + *p * *l;
            mass += l;
        }
    }
    (mass > 0.0).then(|| acc * (1.0 / mass))
}

/// One pass of iterated Radon reduction: shuffle, replace every full group of
/// `dim + 2` by its Radon point, repeat until fewer than `dim + 2` remain.
/// Returns the survivors and their centroid.
fn iterated_radon<R: Rng + ?Sized>(cloud: &[Point], dim: usize, rng: &mut R) -> Vec<Point> {
    let group = dim + 2;
    let mut pool = cloud.to_vec();
    while pool.len() >= group {
        pool.shuffle(rng);
        let mut next = Vec::with_capacity(pool.len() / group + group);
        let mut chunks = pool.chunks_exact(group);
        for chunk in &mut chunks {
            match radon_point(chunk) {
                Some(r) => next.push(r),
                // affinely dependent group: keep its centroid instead
                None => next.push(Point::centroid(chunk).unwrap()),
            }
        }
        next.extend_from_slice(chunks.remainder());
        if next.len() == pool.len() {
            break;
        }
        pool = next;
    }
    if let Some(c) = Point::centroid(&pool) {
        pool.push(c);
    }
    pool
}

/// Intersections of all pairs of lines through pairs of cloud points (2D).
fn pairwise_line_intersections(cloud: &[Point]) -> Vec<Point> {
    let mut lines = Vec::new();
    for (i, a) in cloud.iter().enumerate() {
        for b in &cloud[i + 1..] {
            if a.dist(b) > 0.0 {
                lines.push((*a, *b - *a));
            }
        }
    }
    let mut out = Vec::new();
    for (i, (p, r)) in lines.iter().enumerate() {
        for (q, s) in &lines[i + 1..] {
            let den = r.cross2(s);
            if den.abs() <= f64::EPSILON * r.norm() * s.norm() {
                continue;
            }
            let t = (*q - *p).cross2(s) / den;
            out.push(*p + *r * t);
        }
    }
    out
}
