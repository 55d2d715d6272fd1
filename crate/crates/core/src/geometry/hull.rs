//! Convex hulls in two and three dimensions.
//!
//! 2D uses Andrew's monotone chain; 3D is an incremental hull with explicit
//! handling of coincident, collinear and coplanar inputs. Points within
//! `DEFAULT_TOL` of an existing facet are treated as non-extreme.

use std::collections::HashSet;

use super::point::Point;
use super::polytope::{Face, Plane, Polytope, Shape};
use super::{GeometryError, DEFAULT_TOL};

/// Convex hull of `points` in ambient dimension `dim` (2 or 3).
pub fn convex_hull(points: &[Point], dim: usize) -> Result<Polytope, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    if dim != 2 && dim != 3 {
        return Err(GeometryError::UnsupportedDimension(dim));
    }
    if let Some(bad) = points.iter().find(|p| p.dim() != dim) {
        return Err(GeometryError::DimensionMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }
    let pts = dedup(points, DEFAULT_TOL);
    Ok(if dim == 2 {
        hull2(&pts)
    } else {
        hull3(&pts)
    })
}

fn dedup(points: &[Point], tol: f64) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::with_capacity(points.len());
    for p in points {
        if !out.iter().any(|q| q.dist(p) <= tol) {
            out.push(*p);
        }
    }
    out
}

/// Monotone chain on distinct 2D points. Returns a ccw ring with collinear
/// points removed.
///
/// Points are ordered along the farthest-pair direction rather than by x, so
/// that a near-collinear set is swept along its own line and the tolerant
/// turn test never discards a true extreme.
fn monotone_chain(pts: &[Point]) -> Vec<Point> {
    if pts.len() < 3 {
        let mut out = pts.to_vec();
        out.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        return out;
    }
    let (a, b) = farthest_pair(pts);
    let dir = (b - a).normalized().expect("distinct points");
    let perp = dir.perp();
    let mut sorted = pts.to_vec();
    sorted.sort_by(|p, q| {
        p.dot(&dir)
            .total_cmp(&q.dot(&dir))
            .then(p.dot(&perp).total_cmp(&q.dot(&perp)))
    });
    // keep `a` only if o -> a -> b turns left by more than the tolerance
    let turns_left = |o: &Point, a: &Point, b: &Point| -> bool {
        let ob = *b - *o;
        let len = ob.norm();
        len > 0.0 && (*a - *o).cross2(&ob) / len > DEFAULT_TOL
    };
    let mut lower: Vec<Point> = Vec::new();
    for p in &sorted {
        while lower.len() >= 2 && !turns_left(&lower[lower.len() - 2], &lower[lower.len() - 1], p)
        {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for p in sorted.iter().rev() {
        while upper.len() >= 2 && !turns_left(&upper[upper.len() - 2], &upper[upper.len() - 1], p)
        {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Endpoints of the ring if every ring point is within tolerance of the
/// line through its farthest pair.
fn collinear_ring(ring: &[Point]) -> Option<(Point, Point)> {
    let (a, b) = farthest_pair(ring);
    let dir = (b - a).normalized()?;
    ring.iter()
        .all(|p| (*p - a).cross2(&dir).abs() <= DEFAULT_TOL)
        .then_some((a, b))
}

fn hull2(pts: &[Point]) -> Polytope {
    let ring = monotone_chain(pts);
    match ring.len() {
        1 => Polytope::from_parts(2, ring, Shape::Point),
        2 => Polytope::from_parts(2, ring, Shape::Segment),
        n => {
            if let Some((a, b)) = collinear_ring(&ring) {
                return Polytope::from_parts(2, vec![a, b], Shape::Segment);
            }
            Polytope::from_parts(
                2,
                ring,
                Shape::Polygon {
                    ring: (0..n).collect(),
                    carrier: None,
                },
            )
        }
    }
}

fn farthest_pair(pts: &[Point]) -> (Point, Point) {
    let mut best = (pts[0], pts[0], 0.0);
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            let d = a.dist(b);
            if d > best.2 {
                best = (*a, *b, d);
            }
        }
    }
    (best.0, best.1)
}

fn hull3(pts: &[Point]) -> Polytope {
    if pts.len() == 1 {
        return Polytope::from_parts(3, pts.to_vec(), Shape::Point);
    }
    let (a, b) = farthest_pair(pts);
    let dir = (b - a).normalized().expect("distinct points after dedup");
    let off_line = |p: &Point| (*p - a).cross(&dir).norm();
    let (ci, c_dist) = argmax(pts, off_line);
    if c_dist <= DEFAULT_TOL {
        return Polytope::from_parts(3, vec![a, b], Shape::Segment);
    }
    let c = pts[ci];
    let normal = (b - a).cross(&(c - a)).normalized().unwrap();
    let (di, d_dist) = argmax(pts, |p| (*p - a).dot(&normal).abs());
    if d_dist <= DEFAULT_TOL {
        return planar_hull(pts, a, normal);
    }
    incremental_hull(pts, a, b, c, pts[di])
}

fn argmax(pts: &[Point], f: impl Fn(&Point) -> f64) -> (usize, f64) {
    pts.iter()
        .enumerate()
        .map(|(i, p)| (i, f(p)))
        .fold((0, f64::NEG_INFINITY), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        })
}

/// Hull of coplanar 3D points, computed in an in-plane frame.
fn planar_hull(pts: &[Point], origin: Point, normal: Point) -> Polytope {
    let (u, v) = plane_basis(&normal);
    let flat: Vec<Point> = pts
        .iter()
        .map(|p| {
            let r = *p - origin;
            Point::xy(r.dot(&u), r.dot(&v))
        })
        .collect();
    let mut ring2 = monotone_chain(&dedup(&flat, DEFAULT_TOL));
    if ring2.len() > 2 {
        if let Some((a, b)) = collinear_ring(&ring2) {
            ring2 = vec![a, b];
        }
    }
    let lift = |q: &Point| origin + u * q[0] + v * q[1];
    let ring: Vec<Point> = ring2.iter().map(lift).collect();
    match ring.len() {
        1 => Polytope::from_parts(3, ring, Shape::Point),
        2 => Polytope::from_parts(3, ring, Shape::Segment),
        n => {
            // u x v = normal, so a ccw ring in (u, v) is ccw about `normal`
            let carrier = Plane {
                normal,
                offset: normal.dot(&origin),
            };
            Polytope::from_parts(
                3,
                ring,
                Shape::Polygon {
                    ring: (0..n).collect(),
                    carrier: Some(carrier),
                },
            )
        }
    }
}

/// Orthonormal (u, v) with u x v = n for a unit normal n.
pub(crate) fn plane_basis(n: &Point) -> (Point, Point) {
    let helper = if n[0].abs() < 0.9 {
        Point::xyz(1.0, 0.0, 0.0)
    } else {
        Point::xyz(0.0, 1.0, 0.0)
    };
    let u = helper.cross(n).normalized().unwrap();
    let v = n.cross(&u);
    (u, v)
}

struct RawFace {
    v: [usize; 3],
    plane: Plane,
}

fn make_face(pts: &[Point], v: [usize; 3]) -> Option<RawFace> {
    let [a, b, c] = v.map(|i| pts[i]);
    let n = (b - a).cross(&(c - a)).normalized()?;
    Some(RawFace {
        v,
        plane: Plane {
            normal: n,
            offset: n.dot(&a),
        },
    })
}

fn incremental_hull(pts: &[Point], a: Point, b: Point, c: Point, d: Point) -> Polytope {
    let idx = |p: Point| pts.iter().position(|q| *q == p).unwrap();
    let (ia, ib, ic, id) = (idx(a), idx(b), idx(c), idx(d));
    let inner = Point::centroid(&[a, b, c, d]).unwrap();
    let mut faces: Vec<RawFace> = Vec::new();
    for tri in [[ia, ib, ic], [ia, ib, id], [ia, ic, id], [ib, ic, id]] {
        let mut f = make_face(pts, tri).unwrap();
        if f.plane.signed_distance(&inner) > 0.0 {
            f = make_face(pts, [tri[0], tri[2], tri[1]]).unwrap();
        }
        faces.push(f);
    }

    for (pi, p) in pts.iter().enumerate() {
        if [ia, ib, ic, id].contains(&pi) {
            continue;
        }
        let visible: Vec<bool> = faces
            .iter()
            .map(|f| f.plane.signed_distance(p) > DEFAULT_TOL)
            .collect();
        if !visible.iter().any(|&v| v) {
            continue;
        }
        let mut vis_edges: HashSet<(usize, usize)> = HashSet::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, &v)| v) {
            for k in 0..3 {
                vis_edges.insert((f.v[k], f.v[(k + 1) % 3]));
            }
        }
        let mut horizon: Vec<(usize, usize)> = vis_edges
            .iter()
            .filter(|(x, y)| !vis_edges.contains(&(*y, *x)))
            .copied()
            .collect();
        horizon.sort_unstable();
        let mut next: Vec<RawFace> = faces
            .into_iter()
            .zip(visible)
            .filter(|(_, v)| !v)
            .map(|(f, _)| f)
            .collect();
        for (x, y) in horizon {
            if let Some(f) = make_face(pts, [x, y, pi]) {
                next.push(f);
            }
        }
        faces = next;
    }

    // compact vertex indices
    let mut used: Vec<usize> = faces.iter().flat_map(|f| f.v).collect();
    used.sort_unstable();
    used.dedup();
    let remap = |i: usize| used.binary_search(&i).unwrap();
    let vertices: Vec<Point> = used.iter().map(|&i| pts[i]).collect();
    let faces = faces
        .into_iter()
        .map(|f| Face {
            vertices: f.v.map(remap),
            plane: f.plane,
        })
        .collect();
    Polytope::from_parts(3, vertices, Shape::Polyhedron { faces })
}
