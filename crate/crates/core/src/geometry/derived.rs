//! Hulls derived from the normal agents' initial states: the noise-range
//! extrusion B, its widened version C, and the axis-aligned bounding box D.

use super::point::{Point, StateMatrix};
use super::polytope::Polytope;
use super::{convex_hull, GeometryError};

/// Build (B, C).
///
/// B is the projection of hull(initials) onto the noise-free dimensions,
/// swept along every noisy dimension `k` over `[min_k, max_k]` of the
/// initial states. C widens each sweep to `[min_k - r_k, max_k + r_k]`.
/// `margins[j]` belongs to `noisy_dims[j]`.
pub fn build_hulls_bc(
    normal_initials: &StateMatrix,
    noisy_dims: &[usize],
    margins: &[f64],
) -> Result<(Polytope, Polytope), GeometryError> {
    let dim = normal_initials.dim();
    if normal_initials.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let mut sorted = noisy_dims.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.is_empty() || sorted.len() != noisy_dims.len() {
        return Err(GeometryError::InvalidNoisyDims(
            "noisy dimensions must be a non-empty set".into(),
        ));
    }
    if let Some(k) = sorted.iter().find(|&&k| k >= dim) {
        return Err(GeometryError::InvalidNoisyDims(format!(
            "dimension index {k} out of range for d = {dim}"
        )));
    }
    if sorted.len() == dim {
        return Err(GeometryError::InvalidNoisyDims(
            "at least one dimension must stay noise-free".into(),
        ));
    }
    if margins.len() != noisy_dims.len() {
        return Err(GeometryError::InvalidMargins(format!(
            "{} margins for {} noisy dimensions",
            margins.len(),
            noisy_dims.len()
        )));
    }
    if margins.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(GeometryError::InvalidMargins(
            "margins must be finite and non-negative".into(),
        ));
    }
    let ranges: Vec<(f64, f64)> = noisy_dims
        .iter()
        .map(|&k| normal_initials.column_range(k).unwrap())
        .collect();
    let b = sweep(normal_initials, noisy_dims, &ranges)?;
    let widened: Vec<(f64, f64)> = ranges
        .iter()
        .zip(margins)
        .map(|(&(lo, hi), r)| (lo - r, hi + r))
        .collect();
    let c = sweep(normal_initials, noisy_dims, &widened)?;
    Ok((b, c))
}

/// hull(projection) x box, as the hull of every (point, box corner) pairing.
fn sweep(
    initials: &StateMatrix,
    noisy_dims: &[usize],
    ranges: &[(f64, f64)],
) -> Result<Polytope, GeometryError> {
    let corners = 1usize << noisy_dims.len();
    let mut pts = Vec::with_capacity(initials.len() * corners);
    for x in initials.rows() {
        for mask in 0..corners {
            let mut p = *x;
            for (j, &k) in noisy_dims.iter().enumerate() {
                p[k] = if mask & (1 << j) == 0 {
                    ranges[j].0
                } else {
                    ranges[j].1
                };
            }
            pts.push(p);
        }
    }
    convex_hull(&pts, initials.dim())
}

/// Axis-aligned bounding box of the initial states.
pub fn build_bounding_box_d(normal_initials: &StateMatrix) -> Result<Polytope, GeometryError> {
    if normal_initials.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let dim = normal_initials.dim();
    let mut lo = Point::zeros(dim);
    let mut hi = Point::zeros(dim);
    for k in 0..dim {
        let (a, b) = normal_initials.column_range(k).unwrap();
        lo[k] = a;
        hi[k] = b;
    }
    Polytope::axis_box(&lo, &hi)
}
