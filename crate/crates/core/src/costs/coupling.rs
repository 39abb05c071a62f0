use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::Domain;
use crate::linalg::{dist, dist_sq};
use crate::measures::SpatialMeasure;

/// Declared monotonicity of a coupling in the measure argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    /// The pairing can be negative.
    NonMonotone,
    Monotone,
    /// Monotone, and the pairing vanishes only when the fields agree.
    Strict,
    Unknown,
}

impl Monotonicity {
    pub fn is_monotone(self) -> bool {
        matches!(self, Self::Monotone | Self::Strict)
    }
}

/// `x -> F(x, m)` for a fixed measure `m`.
pub trait Field: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;

    /// Spatial gradient when available in closed form.
    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Value with the closed-form gradient written to `grad`, if there is one.
    fn value_gradient(&self, x: &[f64], grad: &mut [f64]) -> Option<f64> {
        grad.copy_from_slice(&self.gradient(x)?);
        Some(self.value(x))
    }
}

/// Estimate of `sup |F(x, m)|` over the domain and all probability measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupNorm {
    pub value: f64,
    /// True when the value comes from sampling rather than a closed-form bound.
    pub sampled: bool,
}

/// Inflation applied to sampled sup-norm estimates.
pub const SUP_INFLATION: f64 = 1.05;

/// A mean-field cost `F(x, m)`.
pub trait Coupling: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn freeze(&self, m: &SpatialMeasure) -> Box<dyn Field>;

    fn value(&self, x: &[f64], m: &SpatialMeasure) -> f64 {
        self.freeze(m).value(x)
    }

    fn monotonicity(&self) -> Monotonicity {
        Monotonicity::Unknown
    }

    fn depends_on_measure(&self) -> bool {
        true
    }

    fn is_zero(&self) -> bool {
        false
    }

    /// Sampled over `per_dim` grid points per axis and a family of probe measures.
    fn sup_norm(&self, domain: &Domain, per_dim: usize) -> SupNorm {
        let xs = domain.grid_points(per_dim);
        let probes = probe_measures(domain, self.depends_on_measure());
        let mut sup: f64 = 0.0;
        for m in &probes {
            let f = self.freeze(m);
            for x in &xs {
                sup = sup.max(f.value(x).abs());
            }
        }
        SupNorm { value: SUP_INFLATION * sup, sampled: true }
    }
}

/// Diracs on a coarse grid and the uniform measure on it.
fn probe_measures(domain: &Domain, depends_on_measure: bool) -> Vec<SpatialMeasure> {
    let pts = domain.grid_points(8);
    let mut out: Vec<SpatialMeasure> = Vec::new();
    if depends_on_measure {
        out.extend(pts.iter().filter_map(|p| SpatialMeasure::dirac(p).ok()));
    }
    let w = 1.0 / pts.len() as f64;
    let atoms: Vec<(Vec<f64>, f64)> = pts.into_iter().map(|p| (p, w)).collect();
    if let Ok(m) = SpatialMeasure::from_parts(
        domain.dim(),
        atoms.iter().flat_map(|a| a.0.clone()).collect(),
        atoms.iter().map(|a| a.1).collect(),
    ) {
        out.push(m);
    }
    out
}

struct ConstantField(f64);

impl Field for ConstantField {
    fn value(&self, _x: &[f64]) -> f64 {
        self.0
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; x.len()])
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroCoupling;

impl Coupling for ZeroCoupling {
    fn name(&self) -> &str {
        "zero"
    }

    fn freeze(&self, _m: &SpatialMeasure) -> Box<dyn Field> {
        Box::new(ConstantField(0.0))
    }

    fn monotonicity(&self) -> Monotonicity {
        Monotonicity::Monotone
    }

    fn depends_on_measure(&self) -> bool {
        false
    }

    fn is_zero(&self) -> bool {
        true
    }

    fn sup_norm(&self, _domain: &Domain, _per_dim: usize) -> SupNorm {
        SupNorm { value: 0.0, sampled: false }
    }
}

/// `s |x - z|^2`, independent of the measure.
#[derive(Debug, Clone)]
pub struct SquaredDistance {
    pub target: Vec<f64>,
    pub scale: f64,
}

struct SquaredDistanceField {
    target: Vec<f64>,
    scale: f64,
}

impl Field for SquaredDistanceField {
    fn value(&self, x: &[f64]) -> f64 {
        self.scale * dist_sq(x, &self.target)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(x.iter().zip(&self.target).map(|(a, b)| 2.0 * self.scale * (a - b)).collect())
    }
}

impl Coupling for SquaredDistance {
    fn name(&self) -> &str {
        "squared_distance"
    }

    fn freeze(&self, _m: &SpatialMeasure) -> Box<dyn Field> {
        Box::new(SquaredDistanceField { target: self.target.clone(), scale: self.scale })
    }

    fn monotonicity(&self) -> Monotonicity {
        Monotonicity::Monotone
    }

    fn depends_on_measure(&self) -> bool {
        false
    }
}

/// `s d_1(m, delta_c) |x - c|`: monotone for `s >= 0`, anti-monotone for `s < 0`.
#[derive(Debug, Clone)]
pub struct DiracDistance {
    pub center: Vec<f64>,
    pub scale: f64,
}

struct DiracDistanceField {
    center: Vec<f64>,
    factor: f64,
}

impl Field for DiracDistanceField {
    fn value(&self, x: &[f64]) -> f64 {
        self.factor * dist(x, &self.center)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let r = dist(x, &self.center);
        Some(if r > 0.0 {
            x.iter().zip(&self.center).map(|(a, c)| self.factor * (a - c) / r).collect()
        } else {
            vec![0.0; x.len()]
        })
    }
}

impl Coupling for DiracDistance {
    fn name(&self) -> &str {
        "dirac_distance"
    }

    fn freeze(&self, m: &SpatialMeasure) -> Box<dyn Field> {
        // Transport to a Dirac has a single feasible plan.
        let d1: f64 = m.atoms().map(|(p, w)| w * dist(p, &self.center)).sum();
        Box::new(DiracDistanceField { center: self.center.clone(), factor: self.scale * d1 })
    }

    fn monotonicity(&self) -> Monotonicity {
        if self.scale >= 0.0 {
            Monotonicity::Monotone
        } else {
            Monotonicity::NonMonotone
        }
    }
}

type CouplingFn = dyn Fn(&[f64], &SpatialMeasure) -> f64 + Send + Sync;

/// A coupling given by a closure of `(x, m)`.
#[derive(Clone)]
pub struct FnCoupling {
    name: String,
    f: Arc<CouplingFn>,
    monotonicity: Monotonicity,
}

impl FnCoupling {
    pub fn new<F>(name: &str, monotonicity: Monotonicity, f: F) -> Self
    where
        F: Fn(&[f64], &SpatialMeasure) -> f64 + Send + Sync + 'static,
    {
        Self { name: name.into(), f: Arc::new(f), monotonicity }
    }
}

impl fmt::Debug for FnCoupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnCoupling").field("name", &self.name).finish_non_exhaustive()
    }
}

struct FnField {
    f: Arc<CouplingFn>,
    m: SpatialMeasure,
}

impl Field for FnField {
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x, &self.m)
    }
}

impl Coupling for FnCoupling {
    fn name(&self) -> &str {
        &self.name
    }

    fn freeze(&self, m: &SpatialMeasure) -> Box<dyn Field> {
        Box::new(FnField { f: self.f.clone(), m: m.clone() })
    }

    fn monotonicity(&self) -> Monotonicity {
        self.monotonicity
    }
}
