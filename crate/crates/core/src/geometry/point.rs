use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Largest ambient dimension the crate handles.
pub const MAX_DIM: usize = 3;

/// A point (or vector) in R^d for d in 1..=3.
///
/// Stored inline so clouds of points never allocate per element. Unused
/// trailing coordinates are always zero, which keeps `PartialEq` and the
/// arithmetic below well defined.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Point {
    coords: [f64; MAX_DIM],
    dim: u8,
}

impl Point {
    pub fn new(coords: &[f64]) -> Result<Self, GeometryError> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(GeometryError::UnsupportedDimension(coords.len()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let mut c = [0.0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Self {
            coords: c,
            dim: coords.len() as u8,
        })
    }

    pub fn xy(x: f64, y: f64) -> Self {
        Self {
            coords: [x, y, 0.0],
            dim: 2,
        }
    }

    pub fn xyz(x: f64, y: f64, z: f64) -> Self {
        Self {
            coords: [x, y, z],
            dim: 3,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} out of range");
        Self {
            coords: [0.0; MAX_DIM],
            dim: dim as u8,
        }
    }

    /// Unit vector along axis `k`.
    pub fn axis(dim: usize, k: usize) -> Self {
        let mut p = Self::zeros(dim);
        p.coords[k] = 1.0;
        p
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn dot(&self, other: &Point) -> f64 {
        // Trailing coordinates are zero, so the full fixed-size product is exact.
        self.coords[0] * other.coords[0]
            + self.coords[1] * other.coords[1]
            + self.coords[2] * other.coords[2]
    }

    #[inline]
    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn dist(&self, other: &Point) -> f64 {
        (*self - *other).norm()
    }

    /// Cross product, treating 2D points as lying in the z = 0 plane.
    #[inline]
    pub fn cross(&self, other: &Point) -> Point {
        let a = &self.coords;
        let b = &other.coords;
        Point {
            coords: [
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ],
            dim: 3,
        }
    }

    /// z-component of the 2D cross product.
    #[inline]
    pub fn cross2(&self, other: &Point) -> f64 {
        self.coords[0] * other.coords[1] - self.coords[1] * other.coords[0]
    }

    /// Counterclockwise perpendicular of a 2D vector.
    #[inline]
    pub fn perp(&self) -> Point {
        Point::xy(-self.coords[1], self.coords[0])
    }

    pub fn normalized(&self) -> Option<Point> {
        let n = self.norm();
        if n > 0.0 && n.is_finite() {
            Some(*self * (1.0 / n))
        } else {
            None
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }

    /// Linear interpolation `self + s (other - self)`.
    #[inline]
    pub fn lerp(&self, other: &Point, s: f64) -> Point {
        *self + (*other - *self) * s
    }

    pub fn centroid(points: &[Point]) -> Option<Point> {
        let first = points.first()?;
        let mut acc = Point::zeros(first.dim());
        for p in points {
            acc = acc + *p;
        }
        Some(acc * (1.0 / points.len() as f64))
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = GeometryError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Point::new(&v)
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Self {
        p.as_slice().to_vec()
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, c) in self.as_slice().iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl Index<usize> for Point {
    type Output = f64;

    fn index(&self, k: usize) -> &f64 {
        &self.as_slice()[k]
    }
}

impl IndexMut<usize> for Point {
    fn index_mut(&mut self, k: usize) -> &mut f64 {
        let d = self.dim as usize;
        &mut self.coords[..d][k]
    }
}

impl Add for Point {
    type Output = Point;

    #[inline]
    fn add(self, rhs: Point) -> Point {
        debug_assert_eq!(self.dim, rhs.dim);
        Point {
            coords: [
                self.coords[0] + rhs.coords[0],
                self.coords[1] + rhs.coords[1],
                self.coords[2] + rhs.coords[2],
            ],
            dim: self.dim,
        }
    }
}

impl Sub for Point {
    type Output = Point;

    #[inline]
    fn sub(self, rhs: Point) -> Point {
        debug_assert_eq!(self.dim, rhs.dim);
        Point {
            coords: [
                self.coords[0] - rhs.coords[0],
                self.coords[1] - rhs.coords[1],
                self.coords[2] - rhs.coords[2],
            ],
            dim: self.dim,
        }
    }
}

impl Mul<f64> for Point {
    type Output = Point;

    #[inline]
    fn mul(self, s: f64) -> Point {
        Point {
            coords: [self.coords[0] * s, self.coords[1] * s, self.coords[2] * s],
            dim: self.dim,
        }
    }
}

impl Neg for Point {
    type Output = Point;

    #[inline]
    fn neg(self) -> Point {
        self * -1.0
    }
}

/// The stacked states of the normal agents, one row per agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMatrix {
    dim: usize,
    rows: Vec<Point>,
}

impl StateMatrix {
    pub fn new(dim: usize, rows: Vec<Point>) -> Result<Self, GeometryError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(GeometryError::UnsupportedDimension(dim));
        }
        if let Some(bad) = rows.iter().find(|p| p.dim() != dim) {
            return Err(GeometryError::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        Ok(Self { dim, rows })
    }

    /// Build from a flat row-major buffer.
    pub fn from_flat(dim: usize, flat: &[f64]) -> Result<Self, GeometryError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(GeometryError::UnsupportedDimension(dim));
        }
        if !flat.len().is_multiple_of(dim) {
            return Err(GeometryError::DimensionMismatch {
                expected: dim,
                found: flat.len() % dim,
            });
        }
        let rows = flat
            .chunks(dim)
            .map(Point::new)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Point] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [Point] {
        &mut self.rows
    }

    pub fn into_rows(self) -> Vec<Point> {
        self.rows
    }

    pub fn flat(&self) -> Vec<f64> {
        self.rows
            .iter()
            .flat_map(|p| p.as_slice().iter().copied())
            .collect()
    }

    /// Per-dimension (min, max) over the rows.
    pub fn column_range(&self, k: usize) -> Option<(f64, f64)> {
        let mut it = self.rows.iter().map(|p| p[k]);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    /// Largest pairwise Euclidean distance between rows.
    pub fn max_pairwise_distance(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (i, a) in self.rows.iter().enumerate() {
            for b in &self.rows[i + 1..] {
                best = best.max(a.dist(b));
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dimensions_and_values() {
        assert!(Point::new(&[]).is_err());
        assert!(Point::new(&[1.0, 2.0, 3.0, 4.0]).is_err());
        assert!(Point::new(&[f64::NAN, 0.0]).is_err());
        assert!(Point::new(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn arithmetic_matches_componentwise() {
        let a = Point::xyz(1.0, 2.0, 3.0);
        let b = Point::xyz(-1.0, 0.5, 2.0);
        assert_eq!((a + b).as_slice(), &[0.0, 2.5, 5.0]);
        assert_eq!((a - b).as_slice(), &[2.0, 1.5, 1.0]);
        assert_eq!(a.dot(&b), -1.0 + 1.0 + 6.0);
        let c = a.cross(&b);
        assert!(c.dot(&a).abs() < 1e-12 && c.dot(&b).abs() < 1e-12);
    }

    #[test]
    fn serde_uses_plain_arrays() {
        let p = Point::xy(0.25, -1.5);
        let v: Vec<f64> = p.into();
        assert_eq!(v, vec![0.25, -1.5]);
        assert_eq!(Point::try_from(v).unwrap(), p);
    }

    #[test]
    fn state_matrix_flat_round_trip() {
        let m = StateMatrix::from_flat(2, &[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.flat(), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(m.column_range(1), Some((1.0, 3.0)));
        assert!(StateMatrix::from_flat(2, &[0.0, 1.0, 2.0]).is_err());
    }
}
