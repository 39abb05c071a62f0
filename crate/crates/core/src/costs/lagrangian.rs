use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::linalg::{central_difference, dot, norm};

const FD_STEP: f64 = 1e-6;

/// Declared constants: gradient growth `C`, and `c0`, `c1` in `L(x, v) >= c1 |v|^2 - c0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagrangianConstants {
    #[serde(rename = "C")]
    pub growth: f64,
    pub c0: f64,
    pub c1: f64,
}

/// Running cost `L(x, v)`, convex in `v`.
pub trait Lagrangian: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn value(&self, x: &[f64], v: &[f64]) -> f64;

    fn grad_x(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        central_difference(|y| self.value(y, v), x, FD_STEP)
    }

    fn grad_v(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        central_difference(|w| self.value(x, w), v, FD_STEP)
    }

    fn constants(&self) -> LagrangianConstants;

    /// False when the gradients are one-sided selections of a subdifferential.
    fn is_smooth(&self) -> bool {
        true
    }
}

/// `L = a |v|^2`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub scale: f64,
    pub constants: LagrangianConstants,
}

impl Quadratic {
    /// `a |v|^2` with the tight constants `C = 2a`, `c1 = a`, `c0 = 0`.
    pub fn new(scale: f64) -> Self {
        Self { scale, constants: LagrangianConstants { growth: 2.0 * scale, c0: 0.0, c1: scale } }
    }

    /// `|v|^2 / 2`.
    pub fn kinetic() -> Self {
        Self::new(0.5)
    }

    pub fn with_constants(mut self, constants: LagrangianConstants) -> Self {
        self.constants = constants;
        self
    }
}

impl Lagrangian for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn value(&self, _x: &[f64], v: &[f64]) -> f64 {
        self.scale * dot(v, v)
    }

    fn grad_x(&self, x: &[f64], _v: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    fn grad_v(&self, _x: &[f64], v: &[f64]) -> Vec<f64> {
        v.iter().map(|c| 2.0 * self.scale * c).collect()
    }

    fn constants(&self) -> LagrangianConstants {
        self.constants
    }
}

/// `L = |v|`: convex but only linearly growing, so the quadratic lower bound fails for any `c1 > 0`.
#[derive(Debug, Clone)]
pub struct Speed {
    pub constants: LagrangianConstants,
}

impl Lagrangian for Speed {
    fn name(&self) -> &str {
        "speed"
    }

    fn value(&self, _x: &[f64], v: &[f64]) -> f64 {
        norm(v)
    }

    fn grad_x(&self, x: &[f64], _v: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    fn grad_v(&self, _x: &[f64], v: &[f64]) -> Vec<f64> {
        unit_or_zero(v)
    }

    fn constants(&self) -> LagrangianConstants {
        self.constants
    }

    fn is_smooth(&self) -> bool {
        false
    }
}

/// `L = |v|^2 / 2 + s sin(x_1) |v|`.
#[derive(Debug, Clone)]
pub struct Tilted {
    pub strength: f64,
    pub constants: LagrangianConstants,
}

impl Lagrangian for Tilted {
    fn name(&self) -> &str {
        "tilted"
    }

    fn value(&self, x: &[f64], v: &[f64]) -> f64 {
        0.5 * dot(v, v) + self.strength * x[0].sin() * norm(v)
    }

    fn grad_x(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        g[0] = self.strength * x[0].cos() * norm(v);
        g
    }

    fn grad_v(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let s = self.strength * x[0].sin();
        v.iter().zip(unit_or_zero(v)).map(|(a, u)| a + s * u).collect()
    }

    fn constants(&self) -> LagrangianConstants {
        self.constants
    }

    fn is_smooth(&self) -> bool {
        false
    }
}

fn unit_or_zero(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n > 0.0 {
        v.iter().map(|c| c / n).collect()
    } else {
        vec![0.0; v.len()]
    }
}

type LagrangianFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// A Lagrangian given by a closure; gradients by central differences.
#[derive(Clone)]
pub struct FnLagrangian {
    name: String,
    f: Arc<LagrangianFn>,
    constants: LagrangianConstants,
    smooth: bool,
}

impl FnLagrangian {
    pub fn new<F>(name: &str, constants: LagrangianConstants, f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self { name: name.into(), f: Arc::new(f), constants, smooth: true }
    }

    pub fn nonsmooth(mut self) -> Self {
        self.smooth = false;
        self
    }
}

impl fmt::Debug for FnLagrangian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnLagrangian").field("name", &self.name).finish_non_exhaustive()
    }
}

impl Lagrangian for FnLagrangian {
    fn name(&self) -> &str {
        &self.name
    }

    fn value(&self, x: &[f64], v: &[f64]) -> f64 {
        (self.f)(x, v)
    }

    fn constants(&self) -> LagrangianConstants {
        self.constants
    }

    fn is_smooth(&self) -> bool {
        self.smooth
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradients_match_differences() {
        let l = Quadratic::new(0.7);
        let (x, v) = ([0.1, 0.2], [0.3, -1.2]);
        let fd = central_difference(|w| l.value(&x, w), &v, 1e-6);
        for (a, b) in l.grad_v(&x, &v).iter().zip(fd) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn tilted_gradients_away_from_rest() {
        let l = Tilted { strength: 0.4, constants: LagrangianConstants { growth: 2.0, c0: 1.0, c1: 0.25 } };
        let (x, v) = ([0.8, -0.1], [0.5, 0.25]);
        let fx = central_difference(|y| l.value(y, &v), &x, 1e-6);
        let fv = central_difference(|w| l.value(&x, w), &v, 1e-6);
        for (a, b) in l.grad_x(&x, &v).iter().chain(&l.grad_v(&x, &v)).zip(fx.iter().chain(&fv)) {
            assert!((a - b).abs() < 1e-6 * a.abs().max(1.0));
        }
    }

    #[test]
    fn speed_subgradient_at_rest_is_zero() {
        let l = Speed { constants: LagrangianConstants { growth: 1.0, c0: 0.0, c1: 0.0 } };
        assert_eq!(l.grad_v(&[0.0, 0.0], &[0.0, 0.0]), vec![0.0, 0.0]);
    }
}
