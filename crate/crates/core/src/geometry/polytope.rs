use serde::{Deserialize, Serialize};

use super::point::Point;
use super::{GeometryError, DEFAULT_TOL};

/// Closed halfspace `normal · x <= offset` with a unit normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Point,
    pub offset: f64,
}

impl Plane {
    /// Signed distance; positive outside.
    #[inline]
    pub fn signed_distance(&self, p: &Point) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Triangular boundary face of a 3D polytope, counterclockwise seen from outside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Face {
    pub vertices: [usize; 3],
    pub plane: Plane,
}

/// Combinatorial shape of a hull, by affine dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// All input points coincide.
    Point,
    /// Collinear input; `vertices` holds the two endpoints.
    Segment,
    /// Counterclockwise vertex ring. In 3D the polygon is flat and `carrier`
    /// holds its supporting plane (normal oriented so the ring is ccw).
    Polygon {
        ring: Vec<usize>,
        carrier: Option<Plane>,
    },
    /// Full-dimensional 3D hull.
    Polyhedron { faces: Vec<Face> },
}

/// Boundary piece used by the distance routines.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Cell {
    Point(Point),
    Segment(Point, Point),
    Triangle(Point, Point, Point),
}

impl Cell {
    pub(crate) fn vertices(&self) -> impl Iterator<Item = Point> {
        let (buf, n) = match *self {
            Cell::Point(a) => ([a, a, a], 1),
            Cell::Segment(a, b) => ([a, b, b], 2),
            Cell::Triangle(a, b, c) => ([a, b, c], 3),
        };
        buf.into_iter().take(n)
    }

    pub(crate) fn distance(&self, p: &Point) -> f64 {
        match *self {
            Cell::Point(a) => p.dist(&a),
            Cell::Segment(a, b) => point_segment_distance(p, &a, &b),
            Cell::Triangle(a, b, c) => point_triangle_distance(p, &a, &b, &c),
        }
    }
}

/// Convex polytope in R^2 or R^3, possibly lower dimensional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    dim: usize,
    vertices: Vec<Point>,
    shape: Shape,
}

impl Polytope {
    pub(crate) fn from_parts(dim: usize, vertices: Vec<Point>, shape: Shape) -> Self {
        Self {
            dim,
            vertices,
            shape,
        }
    }

    /// Axis-aligned box `[lo_k, hi_k]` per dimension; degenerate extents allowed.
    pub fn axis_box(lo: &Point, hi: &Point) -> Result<Self, GeometryError> {
        let dim = lo.dim();
        if hi.dim() != dim {
            return Err(GeometryError::DimensionMismatch {
                expected: dim,
                found: hi.dim(),
            });
        }
        let mut corners = Vec::with_capacity(1 << dim);
        for mask in 0..(1usize << dim) {
            let mut c = *lo;
            for k in 0..dim {
                if mask & (1 << k) != 0 {
                    c[k] = hi[k];
                }
            }
            corners.push(c);
        }
        super::convex_hull(&corners, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// Affine dimension of the hull (0 for a point up to `dim`).
    pub fn affine_dim(&self) -> usize {
        match &self.shape {
            Shape::Point => 0,
            Shape::Segment => 1,
            Shape::Polygon { .. } => 2,
            Shape::Polyhedron { .. } => 3,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.affine_dim() < self.dim
    }

    /// Counterclockwise ring for polygons.
    pub fn ring(&self) -> Option<&[usize]> {
        match &self.shape {
            Shape::Polygon { ring, .. } => Some(ring),
            _ => None,
        }
    }

    /// Triangular faces for full-dimensional 3D hulls (empty otherwise).
    pub fn faces(&self) -> &[Face] {
        match &self.shape {
            Shape::Polyhedron { faces } => faces,
            _ => &[],
        }
    }

    /// Facet halfspaces of a full-dimensional hull, with coplanar faces merged.
    pub fn facet_planes(&self) -> Vec<Plane> {
        match &self.shape {
            Shape::Polygon {
                ring,
                carrier: None,
            } => (0..ring.len())
                .map(|k| {
                    let a = self.vertices[ring[k]];
                    let b = self.vertices[ring[(k + 1) % ring.len()]];
                    // ccw ring: outward normal is the clockwise perpendicular
                    let n = (b - a)
                        .perp()
                        .normalized()
                        .expect("hull edges have positive length")
                        * -1.0;
                    Plane {
                        normal: n,
                        offset: n.dot(&a),
                    }
                })
                .collect(),
            Shape::Polyhedron { faces } => {
                let mut planes: Vec<Plane> = Vec::new();
                for f in faces {
                    let dup = planes.iter().any(|q| {
                        (q.normal - f.plane.normal).norm() < 1e-9
                            && (q.offset - f.plane.offset).abs() < DEFAULT_TOL
                    });
                    if !dup {
                        planes.push(f.plane);
                    }
                }
                planes
            }
            _ => Vec::new(),
        }
    }

    /// Boundary as a set of cells. A lower-dimensional hull is its own boundary.
    pub(crate) fn boundary_cells(&self) -> Vec<Cell> {
        let v = &self.vertices;
        match &self.shape {
            Shape::Point => vec![Cell::Point(v[0])],
            Shape::Segment => vec![Cell::Segment(v[0], v[1])],
            Shape::Polygon {
                ring,
                carrier: None,
            } => (0..ring.len())
                .map(|k| Cell::Segment(v[ring[k]], v[ring[(k + 1) % ring.len()]]))
                .collect(),
            Shape::Polygon {
                ring,
                carrier: Some(_),
            } => (1..ring.len() - 1)
                .map(|k| Cell::Triangle(v[ring[0]], v[ring[k]], v[ring[k + 1]]))
                .collect(),
            Shape::Polyhedron { faces } => faces
                .iter()
                .map(|f| {
                    let [a, b, c] = f.vertices;
                    Cell::Triangle(v[a], v[b], v[c])
                })
                .collect(),
        }
    }

    /// Euclidean distance from `p` to the hull (zero inside).
    pub fn distance_to(&self, p: &Point) -> f64 {
        if !self.is_degenerate() {
            let outside = self
                .facet_planes()
                .iter()
                .any(|pl| pl.signed_distance(p) > 0.0);
            if !outside {
                return 0.0;
            }
        }
        self.distance_to_boundary(p)
    }

    /// Euclidean distance from `p` to the hull boundary.
    pub fn distance_to_boundary(&self, p: &Point) -> f64 {
        self.boundary_cells()
            .iter()
            .map(|c| c.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Membership within `tol`: facet inequalities for full-dimensional hulls,
    /// distance to the carrier set for degenerate ones.
    pub fn contains(&self, p: &Point, tol: f64) -> Result<bool, GeometryError> {
        if p.dim() != self.dim {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim,
                found: p.dim(),
            });
        }
        if self.is_degenerate() {
            return Ok(self.distance_to_boundary(p) <= tol);
        }
        Ok(self
            .facet_planes()
            .iter()
            .all(|pl| pl.signed_distance(p) <= tol))
    }

    /// Largest pairwise distance between vertices.
    pub fn diameter(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                best = best.max(a.dist(b));
            }
        }
        best
    }

    /// Per-dimension (min, max) over the vertices.
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices[1..] {
            for k in 0..self.dim {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }
}

pub(crate) fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = *b - *a;
    let len2 = ab.norm_sq();
    if len2 == 0.0 {
        return p.dist(a);
    }
    let s = ((*p - *a).dot(&ab) / len2).clamp(0.0, 1.0);
    p.dist(&a.lerp(b, s))
}

/// Closest-point distance from `p` to triangle `abc`: plane distance when the
/// projection of `p` falls inside, nearest edge otherwise. The inside test
/// uses edge cross products against the face normal, which stays accurate on
/// sliver triangles where barycentric region tests cancel.
pub(crate) fn point_triangle_distance(p: &Point, a: &Point, b: &Point, c: &Point) -> f64 {
    let n = (*b - *a).cross(&(*c - *a));
    let n2 = n.norm_sq();
    let edges = || {
        point_segment_distance(p, a, b)
            .min(point_segment_distance(p, b, c))
            .min(point_segment_distance(p, c, a))
    };
    if n2 == 0.0 {
        return edges();
    }
    let side = |u: &Point, v: &Point| (*v - *u).cross(&(*p - *u)).dot(&n) >= 0.0;
    if side(a, b) && side(b, c) && side(c, a) {
        ((*p - *a).dot(&n) / n2.sqrt()).abs()
    } else {
        edges()
    }
}
