//! Brute-force references shared by the integration tests.
#![allow(dead_code)]

use ddguard_core::setops::{HPolytope, Zonotope};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every `c + Gσ` with σ ∈ {−1, 1}^p.
pub fn sign_points(z: &Zonotope) -> Vec<DVector<f64>> {
    let p = z.num_generators();
    assert!(p <= 16, "too many generators for brute force");
    (0..1usize << p)
        .map(|mask| {
            let mut x = z.center().clone();
            for i in 0..p {
                let s = if mask >> i & 1 == 1 { 1.0 } else { -1.0 };
                x += z.generators().column(i) * s;
            }
            x
        })
        .collect()
}

/// Andrew's monotone chain, counter-clockwise, collinear points dropped.
pub fn hull_2d(points: &[DVector<f64>]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.iter().map(|p| [p[0], p[1]]).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup_by(|a, b| (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 1e-14 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 1e-14 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Signed distance-like margin of `x` to a CCW hull: positive inside.
pub fn hull_margin(hull: &[[f64; 2]], x: &DVector<f64>) -> f64 {
    let k = hull.len();
    let mut worst = f64::INFINITY;
    for i in 0..k {
        let (a, b) = (hull[i], hull[(i + 1) % k]);
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let len = (ex * ex + ey * ey).sqrt();
        // Inward normal of a CCW edge is (−ey, ex).
        let d = (-(ey) * (x[0] - a[0]) + ex * (x[1] - a[1])) / len;
        worst = worst.min(d);
    }
    worst
}

pub fn support_by_points(points: &[DVector<f64>], d: &DVector<f64>) -> f64 {
    points.iter().map(|p| p.dot(d)).fold(f64::NEG_INFINITY, f64::max)
}

pub fn random_zonotope(r: &mut impl Rng, n: usize, p: usize, scale: f64) -> Zonotope {
    let c = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
    let g = DMatrix::from_fn(n, p, |_, _| r.random_range(-scale..scale));
    Zonotope::new(c, g).unwrap()
}

/// Bounded random polygon: offsets along `rows` evenly spread normals with jitter.
pub fn random_polygon(r: &mut impl Rng, rows: usize, center: [f64; 2], reach: f64) -> HPolytope {
    let mut normals = DMatrix::zeros(rows, 2);
    let mut offsets = DVector::zeros(rows);
    for i in 0..rows {
        let th = std::f64::consts::TAU * (i as f64 + r.random_range(-0.3..0.3)) / rows as f64;
        let (s, c) = th.sin_cos();
        normals[(i, 0)] = c;
        normals[(i, 1)] = s;
        offsets[i] = c * center[0] + s * center[1] + reach * r.random_range(0.5..1.5);
    }
    HPolytope::new(normals, offsets).unwrap()
}

pub fn directions(k: usize) -> Vec<DVector<f64>> {
    (0..k)
        .map(|i| {
            let th = std::f64::consts::TAU * i as f64 / k as f64;
            DVector::from_vec(vec![th.cos(), th.sin()])
        })
        .collect()
}

/// Smallest slack of the polytope's rows over the given points.
pub fn polytope_margin(p: &HPolytope, points: &[DVector<f64>]) -> f64 {
    let mut worst = f64::INFINITY;
    for x in points {
        for i in 0..p.num_rows() {
            let a = p.normals().row(i);
            let v = (p.offsets()[i] - (a * x)[0]) / a.norm();
            worst = worst.min(v);
        }
    }
    worst
}
