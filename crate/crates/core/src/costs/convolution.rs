use std::fmt;
use std::sync::Arc;

use rand::Rng;

use super::coupling::{Coupling, Field, Monotonicity, SupNorm, SUP_INFLATION};
use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::measures::SpatialMeasure;

/// Compactly supported `C^2` bump `(1 - r/h)^4_+ (4 r/h + 1)`, with `phi(0) = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WendlandKernel {
    pub radius: f64,
}

impl WendlandKernel {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidConfig(format!("kernel radius must be positive, got {radius}")));
        }
        Ok(Self { radius })
    }

    #[inline]
    pub fn eval_sq(&self, r2: f64) -> f64 {
        let s = r2.sqrt() / self.radius;
        if s >= 1.0 {
            0.0
        } else {
            let a = 1.0 - s;
            a * a * a * a * (4.0 * s + 1.0)
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.eval_sq(u.iter().map(|c| c * c).sum())
    }

    /// Gradient in `u`: `-20 (1 - r/h)^3 u / h^2`.
    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let s = u.iter().map(|c| c * c).sum::<f64>().sqrt() / self.radius;
        if s >= 1.0 {
            return vec![0.0; u.len()];
        }
        let a = 1.0 - s;
        let k = -20.0 * a * a * a / (self.radius * self.radius);
        u.iter().map(|c| k * c).collect()
    }
}

type ProfileFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

/// `z -> f(y, z)`, strictly increasing in the density `z`.
#[derive(Clone)]
pub enum Profile {
    Linear { slope: f64 },
    Custom { name: String, f: Arc<ProfileFn> },
}

impl Profile {
    pub fn custom<F>(name: &str, f: F) -> Self
    where
        F: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        Self::Custom { name: name.into(), f: Arc::new(f) }
    }

    #[inline]
    pub fn eval(&self, y: &[f64], z: f64) -> f64 {
        match self {
            Self::Linear { slope } => slope * z,
            Self::Custom { f, .. } => f(y, z),
        }
    }

    fn vanishes_at_zero(&self) -> bool {
        matches!(self, Self::Linear { .. })
    }
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear { slope } => f.debug_struct("Linear").field("slope", slope).finish(),
            Self::Custom { name, .. } => f.debug_struct("Custom").field("name", name).finish(),
        }
    }
}

/// Midpoint rule on a uniform cell grid, keeping cell centres in the domain.
#[derive(Debug)]
struct Quadrature {
    dim: usize,
    lo: Vec<f64>,
    spacing: Vec<f64>,
    cells: usize,
    nodes: Vec<f64>,
    cell_volume: f64,
    /// Flat cell index -> node index, `u32::MAX` for clipped cells.
    lookup: Vec<u32>,
}

impl Quadrature {
    fn new(domain: &Domain, cells: usize) -> Self {
        let dim = domain.dim();
        let bbox = domain.bounding_box();
        let spacing: Vec<f64> = (0..dim).map(|d| (bbox.hi[d] - bbox.lo[d]) / cells as f64).collect();
        let total = cells.pow(dim as u32);
        let mut lookup = vec![u32::MAX; total];
        let mut nodes = Vec::new();
        let mut y = vec![0.0; dim];
        for (flat, slot) in lookup.iter_mut().enumerate() {
            let mut rem = flat;
            for d in 0..dim {
                y[d] = bbox.lo[d] + ((rem % cells) as f64 + 0.5) * spacing[d];
                rem /= cells;
            }
            if domain.signed_distance_unchecked(&y) <= 0.0 {
                *slot = (nodes.len() / dim) as u32;
                nodes.extend_from_slice(&y);
            }
        }
        Self { dim, lo: bbox.lo.clone(), cell_volume: spacing.iter().product(), spacing, cells, nodes, lookup }
    }

    fn len(&self) -> usize {
        self.nodes.len() / self.dim
    }

    fn node(&self, q: usize) -> &[f64] {
        &self.nodes[q * self.dim..(q + 1) * self.dim]
    }

    /// Calls `visit(q, |x - y_q|^2)` for nodes within `r` of `x`.
    fn for_each_near<F: FnMut(usize, f64)>(&self, x: &[f64], r: f64, mut visit: F) {
        let dim = self.dim;
        let mut lo_idx = [0usize; 8];
        let mut hi_idx = [0usize; 8];
        for d in 0..dim {
            let c = (x[d] - self.lo[d]) / self.spacing[d] - 0.5;
            let w = r / self.spacing[d];
            let a = (c - w).ceil().max(0.0);
            let b = (c + w).floor().min(self.cells as f64 - 1.0);
            if a > b {
                return;
            }
            lo_idx[d] = a as usize;
            hi_idx[d] = b as usize;
        }
        let r2 = r * r;
        let mut idx = lo_idx;
        loop {
            let mut flat = 0;
            for d in (0..dim).rev() {
                flat = flat * self.cells + idx[d];
            }
            let q = self.lookup[flat];
            if q != u32::MAX {
                let q = q as usize;
                let y = self.node(q);
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < r2 {
                    visit(q, d2);
                }
            }
            let mut d = 0;
            loop {
                if d == dim {
                    return;
                }
                if idx[d] < hi_idx[d] {
                    idx[d] += 1;
                    break;
                }
                idx[d] = lo_idx[d];
                d += 1;
            }
        }
    }
}

/// `F(x, m) = sum_q w_q f(y_q, (phi * m)(y_q)) phi(x - y_q)` over the
/// quadrature nodes `y_q`.
#[derive(Debug, Clone)]
pub struct ConvolutionCoupling {
    kernel: WendlandKernel,
    profile: Profile,
    quad: Arc<Quadrature>,
}

impl ConvolutionCoupling {
    /// `cells` quadrature cells per axis over the domain's bounding box.
    pub fn new(domain: &Domain, kernel: WendlandKernel, profile: Profile, cells: usize) -> Result<Self> {
        if cells < 2 {
            return Err(Error::InvalidConfig("quadrature needs at least 2 cells per axis".into()));
        }
        if domain.dim() > 8 {
            return Err(Error::InvalidConfig("convolution coupling supports at most 8 dimensions".into()));
        }
        if let Profile::Linear { slope } = profile {
            if !(slope > 0.0) {
                return Err(Error::InvalidConfig(format!("profile slope must be positive, got {slope}")));
            }
        }
        Ok(Self { kernel, profile, quad: Arc::new(Quadrature::new(domain, cells)) })
    }

    pub fn kernel(&self) -> WendlandKernel {
        self.kernel
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn quadrature_len(&self) -> usize {
        self.quad.len()
    }

    /// `(phi * m)(y_q)` at every quadrature node.
    pub fn density(&self, m: &SpatialMeasure) -> Vec<f64> {
        let mut rho = vec![0.0; self.quad.len()];
        for (p, w) in m.atoms() {
            self.quad.for_each_near(p, self.kernel.radius, |q, d2| {
                rho[q] += w * self.kernel.eval_sq(d2);
            });
        }
        rho
    }

    /// Checks `f(y, z1) < f(y, z2)` for sampled `z1 < z2` in `[0, 1]`; returns the
    /// number of violating pairs.
    pub fn profile_violations<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> usize {
        let n = self.quad.len();
        (0..samples)
            .filter(|_| {
                let y = self.quad.node(rng.gen_range(0..n));
                let a: f64 = rng.gen_range(0.0..1.0);
                let b: f64 = rng.gen_range(0.0..1.0);
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                lo < hi && self.profile.eval(y, lo) >= self.profile.eval(y, hi)
            })
            .count()
    }
}

struct ConvolutionField {
    kernel: WendlandKernel,
    quad: Arc<Quadrature>,
    /// `w_q f(y_q, rho_q)`.
    coef: Vec<f64>,
}

impl Field for ConvolutionField {
    fn value(&self, x: &[f64]) -> f64 {
        let h = self.kernel.radius;
        let mut s = 0.0;
        self.quad.for_each_near(x, h, |q, d2| {
            let c = self.coef[q];
            if c != 0.0 {
                let a = 1.0 - d2.sqrt() / h;
                let a3 = a * a * a;
                s += c * a3 * a * (4.0 * (1.0 - a) + 1.0);
            }
        });
        s
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let mut g = vec![0.0; x.len()];
        self.value_gradient(x, &mut g);
        Some(g)
    }

    fn value_gradient(&self, x: &[f64], grad: &mut [f64]) -> Option<f64> {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let h = self.kernel.radius;
        let k = -20.0 / (h * h);
        let mut s = 0.0;
        self.quad.for_each_near(x, h, |q, d2| {
            let c = self.coef[q];
            if c != 0.0 {
                let a = 1.0 - d2.sqrt() / h;
                let a3 = a * a * a;
                s += c * a3 * a * (4.0 * (1.0 - a) + 1.0);
                let y = self.quad.node(q);
                for (d, gd) in grad.iter_mut().enumerate() {
                    *gd += c * k * a3 * (x[d] - y[d]);
                }
            }
        });
        Some(s)
    }
}

impl Coupling for ConvolutionCoupling {
    fn name(&self) -> &str {
        "convolution"
    }

    fn freeze(&self, m: &SpatialMeasure) -> Box<dyn Field> {
        let rho = self.density(m);
        let vol = self.quad.cell_volume;
        let coef = rho
            .iter()
            .enumerate()
            .map(|(q, &r)| {
                if r == 0.0 && self.profile.vanishes_at_zero() {
                    0.0
                } else {
                    vol * self.profile.eval(self.quad.node(q), r)
                }
            })
            .collect();
        Box::new(ConvolutionField { kernel: self.kernel, quad: self.quad.clone(), coef })
    }

    fn monotonicity(&self) -> Monotonicity {
        Monotonicity::Strict
    }

    /// Linear profiles: `slope * max_z sum_q w_q phi(z - y_q)^2` bounds the field for
    /// every probability measure; otherwise `max |f| * max_x sum_q w_q phi(x - y_q)`.
    fn sup_norm(&self, domain: &Domain, per_dim: usize) -> SupNorm {
        let xs = domain.grid_points(per_dim);
        let vol = self.quad.cell_volume;
        let kernel_sum = |x: &[f64], power: i32| {
            let mut s = 0.0;
            self.quad.for_each_near(x, self.kernel.radius, |_, d2| {
                s += vol * self.kernel.eval_sq(d2).powi(power);
            });
            s
        };
        let value = match &self.profile {
            Profile::Linear { slope } => slope * xs.iter().map(|x| kernel_sum(x, 2)).fold(0.0, f64::max),
            Profile::Custom { .. } => {
                let mut fmax: f64 = 0.0;
                for q in (0..self.quad.len()).step_by((self.quad.len() / 256).max(1)) {
                    for k in 0..=20 {
                        let z = k as f64 / 20.0;
                        fmax = fmax.max(self.profile.eval(self.quad.node(q), z).abs());
                    }
                }
                fmax * xs.iter().map(|x| kernel_sum(x, 1)).fold(0.0, f64::max)
            }
        };
        SupNorm { value: SUP_INFLATION * value, sampled: true }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::central_difference;

    fn coupling() -> ConvolutionCoupling {
        let d = Domain::unit_disc(0.5).unwrap();
        ConvolutionCoupling::new(&d, WendlandKernel::new(0.4).unwrap(), Profile::Linear { slope: 1.0 }, 40).unwrap()
    }

    #[test]
    fn kernel_is_even_and_normalized_at_origin() {
        let k = WendlandKernel::new(0.3).unwrap();
        assert_eq!(k.eval(&[0.0, 0.0]), 1.0);
        assert_eq!(k.eval(&[0.1, -0.05]), k.eval(&[-0.1, 0.05]));
        assert_eq!(k.eval(&[0.3, 0.0]), 0.0);
    }

    #[test]
    fn kernel_gradient_matches_differences() {
        let k = WendlandKernel::new(0.3).unwrap();
        let u = [0.07, -0.11];
        let fd = central_difference(|v| k.eval(v), &u, 1e-7);
        for (a, b) in k.gradient(&u).iter().zip(fd) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn field_matches_direct_sum() {
        let c = coupling();
        let m = SpatialMeasure::from_atoms(&[(vec![0.1, 0.2], 0.3), (vec![-0.4, 0.0], 0.7)]).unwrap();
        let rho = c.density(&m);
        let x = [0.05, 0.1];
        let mut direct = 0.0;
        for (q, rq) in rho.iter().enumerate() {
            let y = c.quad.node(q);
            let r: f64 = m.atoms().map(|(p, w)| w * c.kernel.eval(&[y[0] - p[0], y[1] - p[1]])).sum();
            assert!((r - rq).abs() < 1e-15);
            direct += c.quad.cell_volume * r * c.kernel.eval(&[x[0] - y[0], x[1] - y[1]]);
        }
        let f = c.freeze(&m);
        assert!((f.value(&x) - direct).abs() < 1e-14);
        let fd = central_difference(|y| f.value(y), &x, 1e-6);
        for (a, b) in f.gradient(&x).unwrap().iter().zip(fd) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn sup_norm_dominates_dirac_fields() {
        let d = Domain::unit_disc(0.5).unwrap();
        let c = coupling();
        let bound = c.sup_norm(&d, 32).value;
        for p in d.grid_points(9) {
            let f = c.freeze(&SpatialMeasure::dirac(&p).unwrap());
            for x in d.grid_points(17) {
                assert!(f.value(&x) <= bound);
            }
        }
    }
}
