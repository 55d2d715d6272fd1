//! Hand-written SVG: scatter points, polygons and Mahalanobis ellipses.
//! Coordinates are printed with fixed precision, so equal inputs give equal
//! bytes.

use std::fmt::Write as _;

use resvec_core::analysis::{ensemble_stats, jacobi_eigen, Ensemble};
use resvec_core::geometry::{convex_hull, Point, Polytope};

use crate::{CliError, Result};

const SIZE: f64 = 560.0;
const PAD: f64 = 48.0;
const ELLIPSE_VERTICES: usize = 180;

#[derive(Clone, Debug)]
pub enum Layer {
    Points { pts: Vec<Point>, color: &'static str, radius: f64 },
    /// Closed outline; a single point or a segment degrades gracefully.
    Polygon { ring: Vec<Point>, stroke: &'static str, fill: &'static str },
    Label { at: Point, text: String },
}

#[derive(Clone, Debug, Default)]
pub struct Figure {
    pub title: String,
    pub axes: (String, String),
    pub layers: Vec<Layer>,
}

impl Figure {
    pub fn new(title: impl Into<String>, x: &str, y: &str) -> Self {
        Self {
            title: title.into(),
            axes: (x.into(), y.into()),
            layers: Vec::new(),
        }
    }

    fn bounds(&self) -> Option<(Point, Point)> {
        let mut it = self.layers.iter().flat_map(|l| match l {
            Layer::Points { pts, .. } => pts.as_slice(),
            Layer::Polygon { ring, .. } => ring.as_slice(),
            Layer::Label { .. } => &[],
        });
        let first = *it.next()?;
        let (mut lo, mut hi) = (first, first);
        for p in it {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        Some((lo, hi))
    }

    /// Renders with one scale on both axes.
    pub fn render(&self) -> Result<String> {
        let (lo, hi) = self
            .bounds()
            .ok_or_else(|| CliError::Input("nothing to plot".into()))?;
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
        let scale = (SIZE - 2.0 * PAD) / (span * 1.1);
        let mid = (lo + hi) * 0.5;
        let map = |p: &Point| (SIZE / 2.0 + (p[0] - mid[0]) * scale, SIZE / 2.0 - (p[1] - mid[1]) * scale);

        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
        )
        .unwrap();
        writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#).unwrap();
        let (x0, y1) = map(&lo);
        let (x1, y0) = map(&hi);
        writeln!(
            s,
            r##"<rect x="{x0:.3}" y="{y0:.3}" width="{:.3}" height="{:.3}" fill="none" stroke="#bbbbbb"/>"##,
            x1 - x0,
            y1 - y0
        )
        .unwrap();
        writeln!(s, r#"<text x="{:.3}" y="20" text-anchor="middle">{}</text>"#, SIZE / 2.0, escape(&self.title)).unwrap();
        writeln!(s, r#"<text x="{x0:.3}" y="{:.3}">{:.4}</text>"#, y1 + 16.0, lo[0]).unwrap();
        writeln!(s, r#"<text x="{x1:.3}" y="{:.3}" text-anchor="end">{:.4}</text>"#, y1 + 16.0, hi[0]).unwrap();
        writeln!(s, r#"<text x="{:.3}" y="{y1:.3}" text-anchor="end">{:.4}</text>"#, x0 - 4.0, lo[1]).unwrap();
        writeln!(s, r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{:.4}</text>"#, x0 - 4.0, y0 + 10.0, hi[1]).unwrap();
        writeln!(s, r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{}</text>"#, SIZE / 2.0, SIZE - 8.0, escape(&self.axes.0)).unwrap();
        writeln!(
            s,
            r#"<text x="14" y="{:.3}" text-anchor="middle" transform="rotate(-90 14 {:.3})">{}</text>"#,
            SIZE / 2.0,
            SIZE / 2.0,
            escape(&self.axes.1)
        )
        .unwrap();

        for layer in &self.layers {
            match layer {
                Layer::Points { pts, color, radius } => {
                    writeln!(s, r#"<g fill="{color}">"#).unwrap();
                    for p in pts {
                        let (x, y) = map(p);
                        writeln!(s, r#"<circle cx="{x:.3}" cy="{y:.3}" r="{radius}"/>"#).unwrap();
                    }
                    s.push_str("</g>\n");
                }
                Layer::Polygon { ring, stroke, fill } => {
                    let pts: Vec<String> = ring
                        .iter()
                        .map(|p| {
                            let (x, y) = map(p);
                            format!("{x:.3},{y:.3}")
                        })
                        .collect();
                    writeln!(
                        s,
                        r#"<polygon points="{}" fill="{fill}" fill-opacity="0.25" stroke="{stroke}" stroke-width="1.5"/>"#,
                        pts.join(" ")
                    )
                    .unwrap();
                }
                Layer::Label { at, text } => {
                    let (x, y) = map(at);
                    writeln!(s, r#"<text x="{x:.3}" y="{y:.3}">{}</text>"#, escape(text)).unwrap();
                }
            }
        }
        s.push_str("</svg>\n");
        Ok(s)
    }
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Boundary of a planar hull in order.
pub fn outline(h: &Polytope) -> Vec<Point> {
    match h.ring() {
        Some(ring) => ring.iter().map(|&i| h.vertices()[i]).collect(),
        None => h.vertices().to_vec(),
    }
}

/// Projection of `pts` onto coordinates `(a, b)`.
pub fn project(pts: &[Point], a: usize, b: usize) -> Vec<Point> {
    pts.iter().map(|p| Point::xy(p[a], p[b])).collect()
}

/// Outline of the convex hull of planar points.
pub fn hull_outline(pts: &[Point]) -> Result<Vec<Point>> {
    let h = convex_hull(pts, 2).map_err(|e| CliError::Input(e.to_string()))?;
    Ok(outline(&h))
}

/// Boundary of `{x : (x - mean)' cov^-1 (x - mean) <= chi}` for a planar
/// ensemble. A singular covariance gives a flat ellipse.
pub fn mahalanobis_ellipses(e: &Ensemble, chis: &[f64]) -> Result<Vec<(f64, Vec<Point>)>> {
    if e.dim != 2 {
        return Err(CliError::Input("ellipse overlays need d = 2".into()));
    }
    let (mean, cov) = ensemble_stats(e)?;
    let (vals, vecs) = jacobi_eigen(&cov);
    let axes: Vec<Point> = (0..2).map(|k| Point::xy(vecs[(0, k)], vecs[(1, k)])).collect();
    Ok(chis
        .iter()
        .map(|&chi| {
            let radii: Vec<f64> = vals.iter().map(|v| (chi * v.max(0.0)).sqrt()).collect();
            let ring = (0..ELLIPSE_VERTICES)
                .map(|i| {
                    let th = std::f64::consts::TAU * i as f64 / ELLIPSE_VERTICES as f64;
                    mean + axes[0] * (radii[0] * th.cos()) + axes[1] * (radii[1] * th.sin())
                })
                .collect();
            (chi, ring)
        })
        .collect())
}
