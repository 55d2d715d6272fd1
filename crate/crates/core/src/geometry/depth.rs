//! Tukey (halfspace) depth for d in {2, 3} with a closed tolerance band.
//!
//! The depth of `p` is the minimum over unit normals `w` of the number of
//! cloud points with `w . (q - p) >= -tol`. Equivalently, each point `q` at
//! distance `r > tol` from `p` excludes itself exactly on the open cap of
//! normals `{w : w . u < -tol / r}` with `u = (q - p) / r`, and the depth is
//! the cloud size minus the largest number of caps sharing a normal.
//!
//! In 2D the caps are arcs and a sweep finds the maximum. In 3D every cell of
//! the cap arrangement touches either a pairwise boundary intersection or a
//! boundary circle that meets no other, so those points are visited and the
//! circles passing through each one are resolved in its tangent plane.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::hull::plane_basis;
use super::point::Point;
use super::{GeometryError, DEFAULT_TOL};

/// Angular resolution: arc endpoints closer than this are treated as equal.
const ANGLE_EPS: f64 = 1e-12;
/// Slack when deciding that a cap boundary passes through a candidate.
const ON_CIRCLE_EPS: f64 = 1e-12;

/// Tukey depth of a point together with a halfspace attaining it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthResult {
    pub depth: usize,
    /// Unit normal `w`; the closed halfspace `{q : w . (q - p) >= -tol}`
    /// holds exactly `depth` cloud points.
    pub witness_normal: Point,
}

/// Tukey depth of `p` in `cloud` with the default tolerance.
pub fn tukey_depth(p: &Point, cloud: &[Point]) -> Result<DepthResult, GeometryError> {
    tukey_depth_with_tol(p, cloud, DEFAULT_TOL)
}

pub fn tukey_depth_with_tol(
    p: &Point,
    cloud: &[Point],
    tol: f64,
) -> Result<DepthResult, GeometryError> {
    validate(p, cloud)?;
    let caps = Caps::new(p, cloud, tol);
    let (covered, w) = match p.dim() {
        2 => caps.max_cover2(),
        _ => caps.max_cover3(true),
    };
    Ok(DepthResult {
        depth: cloud.len() - covered,
        witness_normal: w,
    })
}

/// Depth only; skips witness construction. Used on hot paths.
pub(crate) fn depth_value(p: &Point, cloud: &[Point], tol: f64) -> usize {
    let caps = Caps::new(p, cloud, tol);
    let covered = match p.dim() {
        2 => caps.max_cover2().0,
        _ => caps.max_cover3(false).0,
    };
    cloud.len() - covered
}

/// Number of cloud points in the closed halfspace `{q : w . (q - p) >= -tol}`.
pub fn halfspace_count(p: &Point, w: &Point, cloud: &[Point], tol: f64) -> usize {
    cloud.iter().filter(|q| w.dot(&(**q - *p)) >= -tol).count()
}

fn validate(p: &Point, cloud: &[Point]) -> Result<(), GeometryError> {
    if cloud.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let d = p.dim();
    if d != 2 && d != 3 {
        return Err(GeometryError::UnsupportedDimension(d));
    }
    if let Some(bad) = cloud.iter().find(|q| q.dim() != d) {
        return Err(GeometryError::DimensionMismatch {
            expected: d,
            found: bad.dim(),
        });
    }
    Ok(())
}

/// Exclusion caps `{w : w . dir < level}` of the points farther than `tol`.
struct Caps {
    dim: usize,
    dir: Vec<Point>,
    level: Vec<f64>,
    /// Offsets `q - p` of the whole cloud, for witness checks.
    rel: Vec<Point>,
    tol: f64,
}

impl Caps {
    fn new(p: &Point, cloud: &[Point], tol: f64) -> Self {
        let rel: Vec<Point> = cloud.iter().map(|q| *q - *p).collect();
        let mut dir = Vec::with_capacity(rel.len());
        let mut level = Vec::with_capacity(rel.len());
        for a in &rel {
            let r = a.norm();
            if r > tol {
                dir.push(*a * (1.0 / r));
                level.push(-tol / r);
            }
        }
        Self {
            dim: p.dim(),
            dir,
            level,
            rel,
            tol,
        }
    }

    fn excluded_by(&self, w: &Point) -> usize {
        self.rel.len() - halfspace_count(&Point::zeros(self.dim), w, &self.rel, self.tol)
    }

    fn max_cover2(&self) -> (usize, Point) {
        let arcs: Vec<(f64, f64)> = self
            .dir
            .iter()
            .zip(&self.level)
            .map(|(u, c)| (u[1].atan2(u[0]) + PI, (-c).acos()))
            .collect();
        let (m, angle) = max_arc_cover(&arcs);
        (m, Point::xy(angle.cos(), angle.sin()))
    }

    fn max_cover3(&self, want_witness: bool) -> (usize, Point) {
        let k = self.dir.len();
        if k == 0 {
            return (0, Point::xyz(0.0, 0.0, 1.0));
        }
        let mut best = (0, self.dir[0]);
        let mut buf = Vec::new();
        let mut visit = |v: Point| {
            let m = self.cover_count_near(&v, best.0, &mut buf);
            if m > best.0 {
                best = (m, v);
            }
        };
        for i in 0..k {
            let (e, _) = plane_basis(&self.dir[i]);
            let c = self.level[i];
            visit(self.dir[i] * c + e * (1.0 - c * c).sqrt());
        }
        for i in 0..k {
            for j in i + 1..k {
                for v in circle_intersections(
                    &self.dir[i],
                    self.level[i],
                    &self.dir[j],
                    self.level[j],
                )
                .into_iter()
                .flatten()
                {
                    visit(v);
                }
            }
        }
        let (m, v) = best;
        if !want_witness {
            return (m, v);
        }
        let (_, s) = self.cover_near(&v);
        let mut delta = 1e-4;
        while delta > 1e-12 {
            if let Some(w) = (v + s * delta).normalized() {
                if self.excluded_by(&w) == m {
                    return (m, w);
                }
            }
            delta *= 0.1;
        }
        (m, (v + s * 1e-8).normalized().unwrap_or(v))
    }

    /// Classify caps at `v`: strictly entered, or with boundary through `v`
    /// (pushed to `on` as tangent-plane entry arcs).
    fn classify(&self, v: &Point, on: &mut Vec<(f64, f64)>) -> usize {
        let (t1, t2) = plane_basis(v);
        let mut strict = 0;
        on.clear();
        for (u, c) in self.dir.iter().zip(&self.level) {
            let gap = v.dot(u) - c;
            if gap < -ON_CIRCLE_EPS {
                strict += 1;
            } else if gap <= ON_CIRCLE_EPS {
                // entering needs a tangent step s with s . u < 0
                let (gx, gy) = (t1.dot(u), t2.dot(u));
                if gx.hypot(gy) > ON_CIRCLE_EPS {
                    on.push((gy.atan2(gx) + PI, PI / 2.0));
                }
            }
        }
        strict
    }

    /// Largest number of caps entered by normals arbitrarily close to `v`.
    /// Values not above `bound` may be returned as any number `<= bound`.
    fn cover_count_near(&self, v: &Point, bound: usize, buf: &mut Vec<(f64, f64)>) -> usize {
        let strict = self.classify(v, buf);
        let m = match buf.len() {
            n if strict + n <= bound => return strict + n,
            0 | 1 => buf.len(),
            2 => {
                // two open semicircles overlap unless they are exactly opposite
                let d = (buf[0].0 - buf[1].0).rem_euclid(TAU);
                if (d - PI).abs() <= ANGLE_EPS {
                    1
                } else {
                    2
                }
            }
            _ => max_arc_cover(buf).0,
        };
        strict + m
    }

    /// As [`Self::cover_count_near`], with a tangent direction achieving it.
    fn cover_near(&self, v: &Point) -> (usize, Point) {
        let mut arcs = Vec::new();
        let strict = self.classify(v, &mut arcs);
        let (m, angle) = max_arc_cover(&arcs);
        let (t1, t2) = plane_basis(v);
        (strict + m, t1 * angle.cos() + t2 * angle.sin())
    }
}

/// The two unit vectors `w` with `w . a = ca` and `w . b = cb`, if any.
fn circle_intersections(a: &Point, ca: f64, b: &Point, cb: f64) -> [Option<Point>; 2] {
    let g = a.dot(b);
    let den = 1.0 - g * g;
    if den < 1e-14 {
        return [None, None];
    }
    let x = (ca - g * cb) / den;
    let y = (cb - g * ca) / den;
    let base = *a * x + *b * y;
    let h2 = 1.0 - base.norm_sq();
    if h2 < -1e-14 {
        return [None, None];
    }
    let n = a.cross(b);
    let h = (h2.max(0.0) / den).sqrt();
    [Some(base + n * h), Some(base - n * h)]
}

/// Largest number of open arcs `(center - half, center + half)` sharing an
/// angle, and an angle strictly inside that intersection.
fn max_arc_cover(arcs: &[(f64, f64)]) -> (usize, f64) {
    let mut events: Vec<(f64, i32)> = Vec::with_capacity(2 * arcs.len());
    let mut at_zero = 0i32;
    for &(center, half) in arcs {
        if half <= ANGLE_EPS {
            continue;
        }
        let mut s = (center - half).rem_euclid(TAU);
        if s >= TAU - ANGLE_EPS {
            s = 0.0;
        }
        let e = s + 2.0 * half;
        events.push((s, 1));
        if e > TAU + ANGLE_EPS {
            at_zero += 1;
            events.push((e - TAU, -1));
        } else if e < TAU - ANGLE_EPS {
            events.push((e, -1));
        }
    }
    if events.is_empty() {
        return (0, 0.0);
    }
    events.sort_by(|x, y| x.0.total_cmp(&y.0));

    // group endpoints closer than ANGLE_EPS; coverage is constant between groups
    let mut groups: Vec<(f64, f64, i32)> = Vec::new();
    for &(a, d) in &events {
        match groups.last_mut() {
            Some(g) if a - g.1 <= ANGLE_EPS => {
                g.1 = a;
                g.2 += d;
            }
            _ => groups.push((a, a, d)),
        }
    }
    let mut best = (i32::MIN, 0.0);
    let mut count = at_zero;
    let first = groups[0].0;
    for (k, g) in groups.iter().enumerate() {
        count += g.2;
        let next = groups.get(k + 1).map_or(first + TAU, |h| h.0);
        if next - g.1 > ANGLE_EPS && count > best.0 {
            best = (count, 0.5 * (g.1 + next));
        }
    }
    if best.0 == i32::MIN {
        // every endpoint coincides: a single arc covering all but one angle
        return (count.max(0) as usize, first + PI);
    }
    (best.0.max(0) as usize, best.1)
}
