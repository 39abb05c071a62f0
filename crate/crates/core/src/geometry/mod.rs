//! The constraint set as an oriented boundary distance.
//!
//! `b(x)` is negative inside the domain, zero on the boundary and positive
//! outside. Within the tube of radius `rho0` around the boundary it is `C^2`
//! with unit gradient, which is what makes the projection
//! `x - d(x) Db(x)` well defined.

pub mod implicit;

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dist, is_finite, norm};

pub use implicit::{Ellipsoid, ImplicitBoundary, LevelSetFn, Superellipse};

#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn diameter(&self) -> f64 {
        dist(&self.lo, &self.hi)
    }

    pub fn contains_inflated(&self, x: &[f64], margin: f64) -> bool {
        x.iter().enumerate().all(|(i, v)| *v >= self.lo[i] - margin && *v <= self.hi[i] + margin)
    }
}

#[derive(Debug, Clone)]
pub enum Shape {
    /// Euclidean ball, with closed-form distance and derivatives.
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Superellipse(Superellipse, ImplicitBoundary),
    LevelSet(ImplicitBoundary),
}

/// A compact domain closure described by its oriented boundary distance.
#[derive(Debug, Clone)]
pub struct Domain {
    shape: Shape,
    dim: usize,
    tube_radius: f64,
    bbox: BoundingBox,
    projection_constant: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TubeReport {
    pub samples: usize,
    /// Largest `| |grad b| - 1 |` over sampled tube points (finite differences).
    pub max_eikonal_error: f64,
    /// Largest `|b(p + s n) - s|` over boundary points `p` and offsets `|s| < rho0`.
    pub max_offset_error: f64,
    pub passed: bool,
}

const TUBE_TOL: f64 = 1e-6;

impl Domain {
    pub fn ball(center: Vec<f64>, radius: f64, tube_radius: f64) -> Result<Self> {
        if !(radius > 0.0) || center.is_empty() || !is_finite(&center) {
            return Err(Error::InvalidConfig("ball needs a positive radius".into()));
        }
        let dim = center.len();
        let bbox = BoundingBox {
            lo: center.iter().map(|c| c - radius).collect(),
            hi: center.iter().map(|c| c + radius).collect(),
        };
        Self::finish(Shape::Ball { center, radius }, dim, tube_radius, bbox)
    }

    /// Unit disc centered at the origin.
    pub fn unit_disc(tube_radius: f64) -> Result<Self> {
        Self::ball(vec![0.0, 0.0], 1.0, tube_radius)
    }

    pub fn superellipse(center: [f64; 2], semi_axes: [f64; 2], tube_radius: f64) -> Result<Self> {
        if !(semi_axes[0] > 0.0 && semi_axes[1] > 0.0) {
            return Err(Error::InvalidConfig("superellipse needs positive semi-axes".into()));
        }
        let s = Superellipse { center, semi_axes };
        let count = 2048;
        let mut cloud = Vec::with_capacity(2 * count);
        for k in 0..count {
            let p = s.boundary_point(2.0 * std::f64::consts::PI * k as f64 / count as f64);
            cloud.extend_from_slice(&p);
        }
        let bbox = BoundingBox {
            lo: vec![center[0] - semi_axes[0], center[1] - semi_axes[1]],
            hi: vec![center[0] + semi_axes[0], center[1] + semi_axes[1]],
        };
        let boundary = ImplicitBoundary::new(Arc::new(s.clone()), cloud, bbox.diameter());
        Self::finish(Shape::Superellipse(s, boundary), 2, tube_radius, bbox)
    }

    /// Domain `{g < 0}` for a user-supplied smooth `g`; `bbox` must contain its closure.
    pub fn level_set(func: Arc<dyn LevelSetFn>, bbox: BoundingBox, tube_radius: f64) -> Result<Self> {
        let dim = func.dim();
        if bbox.lo.len() != dim || bbox.hi.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: bbox.lo.len() });
        }
        let boundary = ImplicitBoundary::with_grid_cloud(func, &bbox.lo, &bbox.hi);
        if boundary.cloud_len() == 0 {
            return Err(Error::InvalidConfig("level set has no boundary points inside the bounding box".into()));
        }
        Self::finish(Shape::LevelSet(boundary), dim, tube_radius, bbox)
    }

    fn finish(shape: Shape, dim: usize, tube_radius: f64, bbox: BoundingBox) -> Result<Self> {
        if !(tube_radius > 0.0) || !tube_radius.is_finite() {
            return Err(Error::InvalidConfig("tube radius must be positive".into()));
        }
        let mut domain = Domain { shape, dim, tube_radius, bbox, projection_constant: 1.0 };
        domain.projection_constant = domain.estimate_projection_constant(256);
        Ok(domain)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tube_radius(&self) -> f64 {
        self.tube_radius
    }

    pub fn bounding_box(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn diameter(&self) -> f64 {
        self.bbox.diameter()
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// Lipschitz constant of `project_to_closure` on the tube, estimated once at construction.
    pub fn projection_constant(&self) -> f64 {
        self.projection_constant
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if !is_finite(x) {
            return Err(Error::NonFinite(x.to_vec()));
        }
        Ok(())
    }

    /// Oriented boundary distance `b(x)`.
    pub fn signed_distance(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.signed_distance_unchecked(x))
    }

    pub(crate) fn signed_distance_unchecked(&self, x: &[f64]) -> f64 {
        match &self.shape {
            Shape::Ball { center, radius } => dist(x, center) - radius,
            Shape::Superellipse(_, b) | Shape::LevelSet(b) => {
                let g = b.func.value(x);
                if g == 0.0 {
                    return 0.0;
                }
                let p = b.closest_point(x);
                dist(&p, x).copysign(g)
            }
        }
    }

    /// Distance to the closure, `max(b, 0)`.
    pub fn distance(&self, x: &[f64]) -> Result<f64> {
        Ok(self.signed_distance(x)?.max(0.0))
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim && is_finite(x) && self.signed_distance_unchecked(x) <= tol
    }

    /// Closest boundary point to `x`.
    pub fn closest_boundary_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(match &self.shape {
            Shape::Ball { center, radius } => {
                let r = dist(x, center);
                if r == 0.0 {
                    let mut p = center.clone();
                    p[0] += radius;
                    p
                } else {
                    x.iter().zip(center).map(|(xi, c)| c + (xi - c) * radius / r).collect()
                }
            }
            Shape::Superellipse(_, b) | Shape::LevelSet(b) => b.closest_point(x),
        })
    }

    /// Gradient `Db(x)`, the outward unit normal at the closest boundary point.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(self.gradient_unchecked(x))
    }

    pub(crate) fn gradient_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match &self.shape {
            Shape::Ball { center, .. } => {
                let d: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                let r = norm(&d);
                if r == 0.0 {
                    let mut e = vec![0.0; self.dim];
                    e[0] = 1.0;
                    e
                } else {
                    d.iter().map(|v| v / r).collect()
                }
            }
            Shape::Superellipse(_, b) | Shape::LevelSet(b) => {
                let p = b.closest_point(x);
                let g = b.func.gradient(&p);
                let gn = norm(&g);
                g.iter().map(|v| v / gn).collect()
            }
        }
    }

    /// Row-major Hessian `D^2 b(x)`: closed form for balls, central differences
    /// of the gradient (step `1e-5` times the diameter) otherwise.
    pub fn hessian(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let n = self.dim;
        match &self.shape {
            Shape::Ball { center, .. } => {
                let d: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                let r = norm(&d);
                let mut h = vec![0.0; n * n];
                if r > 0.0 {
                    for i in 0..n {
                        for j in 0..n {
                            let delta = if i == j { 1.0 } else { 0.0 };
                            h[i * n + j] = (delta - d[i] * d[j] / (r * r)) / r;
                        }
                    }
                }
                Ok(h)
            }
            _ => {
                let step = 1e-5 * self.diameter();
                let mut y = x.to_vec();
                let mut h = vec![0.0; n * n];
                for j in 0..n {
                    y[j] = x[j] + step;
                    let gp = self.gradient_unchecked(&y);
                    y[j] = x[j] - step;
                    let gm = self.gradient_unchecked(&y);
                    y[j] = x[j];
                    for i in 0..n {
                        h[i * n + j] = (gp[i] - gm[i]) / (2.0 * step);
                    }
                }
                for i in 0..n {
                    for j in 0..i {
                        let s = 0.5 * (h[i * n + j] + h[j * n + i]);
                        h[i * n + j] = s;
                        h[j * n + i] = s;
                    }
                }
                Ok(h)
            }
        }
    }

    /// `x - d(x) Db(x)`; the identity on the closure.
    pub fn project_to_closure(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        match &self.shape {
            Shape::Ball { center, radius } => {
                let r = dist(x, center);
                let b = r - radius;
                if b <= 0.0 {
                    return Ok(x.to_vec());
                }
                self.check_tube(b)?;
                // x - b (x - c)/r, written to land exactly on the sphere
                Ok(x.iter().zip(center).map(|(xi, c)| c + (xi - c) * (radius / r)).collect())
            }
            Shape::Superellipse(_, bd) | Shape::LevelSet(bd) => {
                if bd.func.value(x) <= 0.0 {
                    return Ok(x.to_vec());
                }
                // For x outside, x - d Db(x) is the closest boundary point.
                let p = bd.closest_point(x);
                self.check_tube(dist(&p, x))?;
                Ok(p)
            }
        }
    }

    fn check_tube(&self, distance: f64) -> Result<()> {
        if distance >= self.tube_radius {
            Err(Error::TubeExceeded { distance, tube_radius: self.tube_radius })
        } else {
            Ok(())
        }
    }

    /// Uniform sample from the domain by rejection in the bounding box.
    pub fn sample_interior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        loop {
            let x: Vec<f64> = (0..self.dim).map(|i| rng.gen_range(self.bbox.lo[i]..=self.bbox.hi[i])).collect();
            if self.signed_distance_unchecked(&x) < 0.0 {
                return x;
            }
        }
    }

    /// Random boundary point with its outward normal.
    pub fn sample_boundary<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        match &self.shape {
            Shape::Ball { center, radius } => {
                let mut d: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                while norm(&d) < 1e-3 {
                    d = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                }
                let r = norm(&d);
                let n: Vec<f64> = d.iter().map(|v| v / r).collect();
                let p = center.iter().zip(&n).map(|(c, v)| c + radius * v).collect();
                (p, n)
            }
            Shape::Superellipse(_, b) | Shape::LevelSet(b) => {
                let p = b.cloud_point(rng.gen_range(0..b.cloud_len())).to_vec();
                let g = b.func.gradient(&p);
                let gn = norm(&g);
                (p, g.iter().map(|v| v / gn).collect())
            }
        }
    }

    /// Uniform grid with `per_dim` points per axis over the bounding box,
    /// keeping points in the closure.
    pub fn grid_points(&self, per_dim: usize) -> Vec<Vec<f64>> {
        let n = self.dim;
        let total = per_dim.pow(n as u32);
        let mut out = Vec::new();
        for idx in 0..total {
            let mut rem = idx;
            let p: Vec<f64> = (0..n)
                .map(|d| {
                    let i = rem % per_dim;
                    rem /= per_dim;
                    if per_dim == 1 {
                        0.5 * (self.bbox.lo[d] + self.bbox.hi[d])
                    } else {
                        self.bbox.lo[d] + (self.bbox.hi[d] - self.bbox.lo[d]) * i as f64 / (per_dim - 1) as f64
                    }
                })
                .collect();
            if self.signed_distance_unchecked(&p) <= 0.0 {
                out.push(p);
            }
        }
        out
    }

    /// Samples the tube and checks that `b` is a unit-gradient distance there.
    pub fn validate_tube<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> TubeReport {
        let h = 1e-5 * self.diameter().max(1e-3);
        let mut max_eikonal: f64 = 0.0;
        let mut max_offset: f64 = 0.0;
        for _ in 0..samples {
            let (p, n) = self.sample_boundary(rng);
            let s = rng.gen_range(-0.999..0.999) * self.tube_radius;
            let y: Vec<f64> = p.iter().zip(&n).map(|(a, b)| a + s * b).collect();
            let b = self.signed_distance_unchecked(&y);
            max_offset = max_offset.max((b - s).abs());
            let mut z = y.clone();
            let grad: Vec<f64> = (0..self.dim)
                .map(|i| {
                    z[i] = y[i] + h;
                    let bp = self.signed_distance_unchecked(&z);
                    z[i] = y[i] - h;
                    let bm = self.signed_distance_unchecked(&z);
                    z[i] = y[i];
                    (bp - bm) / (2.0 * h)
                })
                .collect();
            max_eikonal = max_eikonal.max((norm(&grad) - 1.0).abs());
        }
        TubeReport {
            samples,
            max_eikonal_error: max_eikonal,
            max_offset_error: max_offset,
            passed: max_eikonal <= TUBE_TOL && max_offset <= TUBE_TOL,
        }
    }

    /// Largest spectral norm of the projection Jacobian `I - n n^T - d D^2 b`
    /// over sampled points of the outer tube, inflated by 5%. Exactly 1 for balls,
    /// which are convex.
    fn estimate_projection_constant(&self, samples: usize) -> f64 {
        if let Shape::Ball { .. } = self.shape {
            return 1.0;
        }
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        let n = self.dim;
        let mut worst: f64 = 1.0;
        for _ in 0..samples {
            let (p, normal) = self.sample_boundary(&mut rng);
            let d = rng.gen_range(0.0..0.95) * self.tube_radius;
            let y: Vec<f64> = p.iter().zip(&normal).map(|(a, b)| a + d * b).collect();
            let Ok(h) = self.hessian(&y) else { continue };
            let m = DMatrix::from_fn(n, n, |i, j| {
                let delta = if i == j { 1.0 } else { 0.0 };
                delta - normal[i] * normal[j] - d * h[i * n + j]
            });
            let eig = SymmetricEigen::new(m);
            let spec = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            worst = worst.max(spec);
        }
        if worst > 1.0 {
            worst * 1.05
        } else {
            1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn disc_signed_distance_examples() {
        let d = Domain::unit_disc(0.5).unwrap();
        assert_eq!(d.signed_distance(&[0.0, 0.0]).unwrap(), -1.0);
        assert_eq!(d.signed_distance(&[2.0, 0.0]).unwrap(), 1.0);
        assert_eq!(d.distance(&[0.3, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_non_finite() {
        let d = Domain::unit_disc(0.5).unwrap();
        assert!(matches!(d.signed_distance(&[f64::NAN, 0.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn disc_projection_examples() {
        let d = Domain::unit_disc(1.5).unwrap();
        assert_eq!(d.project_to_closure(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(d.project_to_closure(&[0.5, 0.0]).unwrap(), vec![0.5, 0.0]);
    }

    #[test]
    fn projection_outside_tube_is_rejected() {
        let d = Domain::unit_disc(0.5).unwrap();
        assert!(matches!(d.project_to_closure(&[1.6, 0.0]), Err(Error::TubeExceeded { .. })));
    }

    #[test]
    fn disc_tube_validation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert!(Domain::unit_disc(0.5).unwrap().validate_tube(200, &mut rng).passed);
        // A tube wider than the radius crosses the center, where b is not smooth.
        let wide = Domain::unit_disc(1.5).unwrap();
        assert!(!wide.validate_tube(400, &mut rng).passed);
    }

    #[test]
    fn superellipse_tube_validation() {
        let d = Domain::superellipse([0.0, 0.0], [2.0, 1.0], 0.25).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let report = d.validate_tube(100, &mut rng);
        assert!(report.passed, "{report:?}");
        assert!(d.projection_constant() >= 1.0);
    }

    #[test]
    fn grid_points_are_inside() {
        let d = Domain::unit_disc(0.5).unwrap();
        let pts = d.grid_points(11);
        assert!(pts.iter().all(|p| d.signed_distance(p).unwrap() <= 0.0));
        assert!(pts.len() > 60 && pts.len() < 121);
    }
}
