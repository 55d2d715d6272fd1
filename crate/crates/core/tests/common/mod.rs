//! Independent brute-force oracles shared by the integration tests and the
//! acceptance runner.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::Rng;
use resvec_core::geometry::Point;

pub fn random_cloud<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<Point> {
    (0..n)
        .map(|_| {
            let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Point::new(&c).unwrap()
        })
        .collect()
}

/// Closed half-plane depth of `p`, minimised over one direction inside every
/// open arc between consecutive critical angles.
pub fn depth_oracle_2d(p: &Point, cloud: &[Point]) -> usize {
    let mut crit = Vec::new();
    for q in cloud {
        let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
        if dx == 0.0 && dy == 0.0 {
            continue;
        }
        let a = dy.atan2(dx);
        crit.push((a + PI / 2.0).rem_euclid(2.0 * PI));
        crit.push((a - PI / 2.0).rem_euclid(2.0 * PI));
    }
    if crit.is_empty() {
        return cloud.len();
    }
    crit.sort_by(f64::total_cmp);
    let mut best = cloud.len();
    for i in 0..crit.len() {
        let next = if i + 1 < crit.len() {
            crit[i + 1]
        } else {
            crit[0] + 2.0 * PI
        };
        let mid = 0.5 * (crit[i] + next);
        let (c, s) = (mid.cos(), mid.sin());
        let count = cloud
            .iter()
            .filter(|q| c * (q[0] - p[0]) + s * (q[1] - p[1]) >= 0.0)
            .count();
        best = best.min(count);
    }
    best
}

/// Minimum closed half-space count over `dirs` random unit directions; an
/// upper bound on the depth.
pub fn sweep_depth<R: Rng>(p: &Point, cloud: &[Point], dirs: usize, rng: &mut R) -> usize {
    let dim = p.dim();
    let mut best = cloud.len();
    for _ in 0..dirs {
        let w: Vec<f64> = (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let count = cloud
            .iter()
            .filter(|q| (0..dim).map(|k| w[k] * (q[k] - p[k])).sum::<f64>() >= 0.0)
            .count();
        best = best.min(count);
    }
    best
}

/// Counter-clockwise convex hull ring (Andrew's monotone chain).
pub fn monotone_chain(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &Point, a: &Point, b: &Point| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut lower: Vec<Point> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn inside_ccw(ring: &[Point], p: &Point) -> bool {
    (0..ring.len()).all(|i| {
        let a = ring[i];
        let b = ring[(i + 1) % ring.len()];
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
    })
}

/// Points along the ring with spacing at most `step`, vertices included.
pub fn sample_ring(ring: &[Point], step: f64) -> Vec<Point> {
    let mut out = Vec::new();
    for i in 0..ring.len() {
        let a = ring[i];
        let b = ring[(i + 1) % ring.len()];
        let k = (a.dist(&b) / step).ceil().max(1.0) as usize;
        for j in 0..k {
            out.push(a.lerp(&b, j as f64 / k as f64));
        }
    }
    out
}

fn dist_to_region(p: &Point, ring: &[Point], boundary: &[Point]) -> f64 {
    if ring.len() >= 3 && inside_ccw(ring, p) {
        return 0.0;
    }
    boundary.iter().map(|q| q.dist(p)).fold(f64::INFINITY, f64::min)
}

/// Hausdorff distance between two convex polygons by dense boundary sampling.
pub fn hausdorff_oracle_2d(p_ring: &[Point], q_ring: &[Point], step: f64) -> f64 {
    let p_fine = sample_ring(p_ring, step);
    let q_fine = sample_ring(q_ring, step);
    let p_coarse = sample_ring(p_ring, 0.02);
    let q_coarse = sample_ring(q_ring, 0.02);
    let pq = p_coarse
        .iter()
        .map(|x| dist_to_region(x, q_ring, &q_fine))
        .fold(0.0, f64::max);
    let qp = q_coarse
        .iter()
        .map(|x| dist_to_region(x, p_ring, &p_fine))
        .fold(0.0, f64::max);
    pq.max(qp)
}
