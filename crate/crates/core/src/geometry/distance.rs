//! Boundary Hausdorff distance between convex polytopes and the Mahalanobis
//! distance.

use nalgebra::{DMatrix, DVector};

use super::point::Point;
use super::polytope::{Cell, Plane, Polytope};
use super::GeometryError;

/// Symmetrised Hausdorff distance between the boundaries of `p` and `q`.
///
/// A lower-dimensional polytope is treated as its own boundary.
pub fn hausdorff(p: &Polytope, q: &Polytope) -> Result<f64, GeometryError> {
    if p.dim() != q.dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: p.dim(),
            found: q.dim(),
        });
    }
    Ok(directed_hausdorff(p, q).max(directed_hausdorff(q, p)))
}

/// `max_{x in bd P} dist(x, bd Q)`.
///
/// Outside Q the distance to the boundary is convex, so its maximum over a
/// boundary cell of P sits at a cell vertex. Inside Q it is the minimum of
/// the facet-plane distances, a concave piecewise-linear function whose
/// maximum sits where two (on a cell edge) or three (inside a triangle) of
/// those planes are equidistant. Evaluating the exact distance at all those
/// candidates gives the maximum.
pub fn directed_hausdorff(p: &Polytope, q: &Polytope) -> f64 {
    let q_cells = q.boundary_cells();
    let planes = q.facet_planes();
    let h = |x: &Point| {
        q_cells
            .iter()
            .map(|c| c.distance(x))
            .fold(f64::INFINITY, f64::min)
    };
    let mut best: f64 = 0.0;
    let mut eval = |x: Point| best = best.max(h(&x));
    for cell in p.boundary_cells() {
        for v in cell.vertices() {
            eval(v);
        }
        match cell {
            Cell::Point(_) => {}
            Cell::Segment(a, b) => segment_ties(&a, &b, &planes, &mut eval),
            Cell::Triangle(a, b, c) => {
                segment_ties(&a, &b, &planes, &mut eval);
                segment_ties(&b, &c, &planes, &mut eval);
                segment_ties(&a, &c, &planes, &mut eval);
                triangle_ties(&a, &b, &c, &planes, &mut eval);
            }
        }
    }
    best
}

/// Points on segment ab where two facet planes are equidistant.
fn segment_ties(a: &Point, b: &Point, planes: &[Plane], eval: &mut impl FnMut(Point)) {
    let ab = *b - *a;
    for (j, pj) in planes.iter().enumerate() {
        for pk in &planes[j + 1..] {
            let g = pj.normal - pk.normal;
            let den = g.dot(&ab);
            if den.abs() < 1e-300 {
                continue;
            }
            let s = (pj.offset - pk.offset - g.dot(a)) / den;
            if (0.0..=1.0).contains(&s) {
                eval(a.lerp(b, s));
            }
        }
    }
}

/// Points inside triangle abc where three facet planes are equidistant.
fn triangle_ties(
    a: &Point,
    b: &Point,
    c: &Point,
    planes: &[Plane],
    eval: &mut impl FnMut(Point),
) {
    let e1 = *b - *a;
    let e2 = *c - *a;
    let m = planes.len();
    for j in 0..m {
        for k in j + 1..m {
            let g1 = planes[j].normal - planes[k].normal;
            let r1 = planes[j].offset - planes[k].offset - g1.dot(a);
            for l in k + 1..m {
                let g2 = planes[j].normal - planes[l].normal;
                let r2 = planes[j].offset - planes[l].offset - g2.dot(a);
                let (a11, a12, a21, a22) = (g1.dot(&e1), g1.dot(&e2), g2.dot(&e1), g2.dot(&e2));
                let det = a11 * a22 - a12 * a21;
                if det.abs() < 1e-300 {
                    continue;
                }
                let u = (r1 * a22 - a12 * r2) / det;
                let v = (a11 * r2 - r1 * a21) / det;
                if u >= 0.0 && v >= 0.0 && u + v <= 1.0 {
                    eval(*a + e1 * u + e2 * v);
                }
            }
        }
    }
}

/// Squared Mahalanobis distance `(x - mean)^T cov^{-1} (x - mean)`.
///
/// `cov` must be symmetric positive definite; regularise singular
/// covariances before calling.
pub fn mahalanobis_sq(x: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> Result<f64, GeometryError> {
    let d = x.len();
    if mean.len() != d || cov.nrows() != d || cov.ncols() != d {
        return Err(GeometryError::DimensionMismatch {
            expected: d,
            found: if mean.len() != d { mean.len() } else { cov.nrows() },
        });
    }
    let asym = (cov - cov.transpose()).amax();
    if asym > 1e-12 * cov.amax().max(1.0) {
        return Err(GeometryError::NotPositiveDefinite);
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or(GeometryError::NotPositiveDefinite)?;
    let diff = DVector::from_iterator(d, x.iter().zip(mean).map(|(a, b)| a - b));
    let z = chol
        .l()
        .solve_lower_triangular(&diff)
        .ok_or(GeometryError::NotPositiveDefinite)?;
    Ok(z.norm_squared())
}
