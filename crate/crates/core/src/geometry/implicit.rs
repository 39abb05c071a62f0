//! Closest-point queries on implicit boundaries `{g = 0}`.
//!
//! The solver seeds from a precomputed boundary point cloud and runs a damped
//! Newton iteration on the first-order conditions of `min |p - x|^2 s.t. g(p) = 0`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{dist, dist_sq, dot, norm};

/// A smooth function whose sublevel set `{g < 0}` is the open domain.
pub trait LevelSetFn: Send + Sync + std::fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Central differences unless overridden.
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        let mut y = x.to_vec();
        (0..x.len())
            .map(|i| {
                y[i] = x[i] + h;
                let fp = self.value(&y);
                y[i] = x[i] - h;
                let fm = self.value(&y);
                y[i] = x[i];
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    /// Row-major Hessian; central differences of the gradient unless overridden.
    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let h = 1e-5;
        let mut y = x.to_vec();
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            y[j] = x[j] + h;
            let gp = self.gradient(&y);
            y[j] = x[j] - h;
            let gm = self.gradient(&y);
            y[j] = x[j];
            for i in 0..n {
                out[i * n + j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        for i in 0..n {
            for j in 0..i {
                let s = 0.5 * (out[i * n + j] + out[j * n + i]);
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
        out
    }
}

/// `|(x-c)/a|^4 + |(y-c)/b|^4 - 1`, an axis-aligned superellipse in the plane.
#[derive(Debug, Clone)]
pub struct Superellipse {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
}

impl LevelSetFn for Superellipse {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64]) -> f64 {
        let u = (x[0] - self.center[0]) / self.semi_axes[0];
        let v = (x[1] - self.center[1]) / self.semi_axes[1];
        u.powi(4) + v.powi(4) - 1.0
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let [a, b] = self.semi_axes;
        let u = (x[0] - self.center[0]) / a;
        let v = (x[1] - self.center[1]) / b;
        vec![4.0 * u.powi(3) / a, 4.0 * v.powi(3) / b]
    }

    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let [a, b] = self.semi_axes;
        let u = (x[0] - self.center[0]) / a;
        let v = (x[1] - self.center[1]) / b;
        vec![12.0 * u * u / (a * a), 0.0, 0.0, 12.0 * v * v / (b * b)]
    }
}

impl Superellipse {
    /// Boundary point at parameter `theta`.
    pub fn boundary_point(&self, theta: f64) -> [f64; 2] {
        let (s, c) = theta.sin_cos();
        [
            self.center[0] + self.semi_axes[0] * c.signum() * c.abs().sqrt(),
            self.center[1] + self.semi_axes[1] * s.signum() * s.abs().sqrt(),
        ]
    }
}

/// `sum ((x_i - c_i)/a_i)^2 - 1`.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    pub center: Vec<f64>,
    pub semi_axes: Vec<f64>,
}

impl LevelSetFn for Ellipsoid {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.center).zip(&self.semi_axes).map(|((xi, c), a)| ((xi - c) / a).powi(2)).sum::<f64>() - 1.0
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.center).zip(&self.semi_axes).map(|((xi, c), a)| 2.0 * (xi - c) / (a * a)).collect()
    }

    fn hessian(&self, _x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = 2.0 / (self.semi_axes[i] * self.semi_axes[i]);
        }
        h
    }
}

/// Level-set boundary with a point cloud used to seed closest-point solves.
#[derive(Debug, Clone)]
pub struct ImplicitBoundary {
    pub func: Arc<dyn LevelSetFn>,
    cloud: Vec<f64>,
    scale: f64,
}

const NEWTON_MAX_ITERS: usize = 60;
const SEEDS: usize = 3;

impl ImplicitBoundary {
    pub fn new(func: Arc<dyn LevelSetFn>, cloud: Vec<f64>, scale: f64) -> Self {
        Self { func, cloud, scale }
    }

    /// Builds a cloud by Newton-projecting a regular grid of the box onto `{g = 0}`.
    pub fn with_grid_cloud(func: Arc<dyn LevelSetFn>, lo: &[f64], hi: &[f64]) -> Self {
        let n = func.dim();
        let per_dim: usize = match n {
            1 => 64,
            2 => 48,
            3 => 16,
            _ => 6,
        };
        let scale = dist(lo, hi);
        let mut cloud = Vec::new();
        let total = per_dim.pow(n as u32);
        for idx in 0..total {
            let mut rem = idx;
            let mut p: Vec<f64> = (0..n)
                .map(|d| {
                    let i = rem % per_dim;
                    rem /= per_dim;
                    lo[d] + (hi[d] - lo[d]) * (i as f64 + 0.5) / per_dim as f64
                })
                .collect();
            if project_onto_surface(func.as_ref(), &mut p, 1e-13) {
                let inside = p.iter().enumerate().all(|(d, v)| *v >= lo[d] - 0.1 * scale && *v <= hi[d] + 0.1 * scale);
                if inside {
                    cloud.extend_from_slice(&p);
                }
            }
        }
        Self { func, cloud, scale }
    }

    pub fn dim(&self) -> usize {
        self.func.dim()
    }

    pub fn cloud_len(&self) -> usize {
        self.cloud.len() / self.dim().max(1)
    }

    pub fn cloud_point(&self, i: usize) -> &[f64] {
        let n = self.dim();
        &self.cloud[i * n..(i + 1) * n]
    }

    /// Closest point of `{g = 0}` to `x`.
    pub fn closest_point(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(SEEDS + 1);
        for i in 0..self.cloud_len() {
            let d = dist_sq(self.cloud_point(i), x);
            if best.len() < SEEDS || d < best[best.len() - 1].0 {
                best.push((d, i));
                best.sort_by(|a, b| a.0.total_cmp(&b.0));
                best.truncate(SEEDS);
            }
        }
        let mut answer: Option<(f64, Vec<f64>)> = None;
        for &(_, i) in &best {
            let seed = self.cloud_point(i).to_vec();
            let p = self.newton_kkt(x, seed.clone()).unwrap_or_else(|| self.alternating(x, seed));
            let d = dist(&p, x);
            if answer.as_ref().is_none_or(|(bd, _)| d < *bd) {
                answer = Some((d, p));
            }
        }
        answer.map(|(_, p)| p).unwrap_or_else(|| {
            let mut p = x.to_vec();
            project_onto_surface(self.func.as_ref(), &mut p, 1e-13);
            debug_assert_eq!(p.len(), n);
            p
        })
    }

    fn kkt_residual(&self, x: &[f64], p: &[f64], lambda: f64) -> (Vec<f64>, f64) {
        let g = self.func.gradient(p);
        let mut r: Vec<f64> = (0..p.len()).map(|i| p[i] - x[i] + lambda * g[i]).collect();
        r.push(self.func.value(p));
        let nr = norm(&r);
        (r, nr)
    }

    fn newton_kkt(&self, x: &[f64], mut p: Vec<f64>) -> Option<Vec<f64>> {
        let n = p.len();
        let g0 = self.func.gradient(&p);
        let gg = dot(&g0, &g0);
        if gg == 0.0 {
            return None;
        }
        let diff: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a - b).collect();
        let mut lambda = dot(&diff, &g0) / gg;
        let (mut r, mut nr) = self.kkt_residual(x, &p, lambda);
        let tol = 1e-14 * self.scale.max(1.0);
        for _ in 0..NEWTON_MAX_ITERS {
            if nr <= tol {
                return Some(p);
            }
            let g = self.func.gradient(&p);
            let h = self.func.hessian(&p);
            let mut jac = DMatrix::<f64>::zeros(n + 1, n + 1);
            for i in 0..n {
                for j in 0..n {
                    jac[(i, j)] = lambda * h[i * n + j] + if i == j { 1.0 } else { 0.0 };
                }
                jac[(i, n)] = g[i];
                jac[(n, i)] = g[i];
            }
            let rhs = DVector::from_iterator(n + 1, r.iter().map(|v| -v));
            let step = jac.lu().solve(&rhs)?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<f64> = (0..n).map(|i| p[i] + t * step[i]).collect();
                let tl = lambda + t * step[n];
                let (tr, tn) = self.kkt_residual(x, &trial, tl);
                if tn < nr || tn <= tol {
                    p = trial;
                    lambda = tl;
                    r = tr;
                    nr = tn;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if nr <= 1e-10 * self.scale.max(1.0) {
            Some(p)
        } else {
            None
        }
    }

    /// Slow but robust: alternate surface projection and tangential correction.
    fn alternating(&self, x: &[f64], mut p: Vec<f64>) -> Vec<f64> {
        for _ in 0..10_000 {
            project_onto_surface(self.func.as_ref(), &mut p, 1e-14);
            let g = self.func.gradient(&p);
            let gn = norm(&g);
            if gn == 0.0 {
                break;
            }
            let diff: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a - b).collect();
            let along = dot(&diff, &g) / gn;
            let tangential: Vec<f64> = diff.iter().zip(&g).map(|(d, gi)| d - along * gi / gn).collect();
            let tn = norm(&tangential);
            if tn < 1e-14 * self.scale.max(1.0) {
                break;
            }
            for (pi, ti) in p.iter_mut().zip(&tangential) {
                *pi += 0.5 * ti;
            }
        }
        project_onto_surface(self.func.as_ref(), &mut p, 1e-14);
        p
    }
}

/// Newton iteration along the gradient onto `{g = 0}`; returns whether it converged.
pub fn project_onto_surface(func: &dyn LevelSetFn, p: &mut [f64], tol: f64) -> bool {
    for _ in 0..80 {
        let v = func.value(p);
        if v.abs() <= tol {
            return true;
        }
        let g = func.gradient(p);
        let gg = dot(&g, &g);
        if gg == 0.0 || !gg.is_finite() {
            return false;
        }
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi -= v * gi / gg;
        }
    }
    func.value(p).abs() <= tol * 1e3
}
