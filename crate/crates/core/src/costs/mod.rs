//! Running and terminal costs, the discretized functional `J`, and the
//! certificate quantities built from them.

mod assumptions;
mod convolution;
mod coupling;
mod lagrangian;

use std::sync::Arc as Shared;

use rand::Rng;
use serde::Serialize;

pub use assumptions::{check_assumptions, check_assumptions_with, AssumptionReport, ASSUMPTION_TOL};
pub use convolution::{ConvolutionCoupling, Profile, WendlandKernel};
pub use coupling::{
    Coupling, DiracDistance, Field, FnCoupling, Monotonicity, SquaredDistance, SupNorm, ZeroCoupling, SUP_INFLATION,
};
pub use lagrangian::{FnLagrangian, Lagrangian, LagrangianConstants, Quadratic, Speed, Tilted};

use crate::arcs::{Arc, TimeGrid};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::geometry::Domain;
use crate::linalg::central_difference;
use crate::measures::SpatialMeasure;

/// Grid points per axis used for sup-norm sampling.
pub const SUP_SAMPLES_PER_DIM: usize = 64;

/// The cost data `(L, F, G)` of a game.
#[derive(Debug, Clone)]
pub struct CostModel {
    pub lagrangian: Shared<dyn Lagrangian>,
    pub running: Shared<dyn Coupling>,
    pub terminal: Shared<dyn Coupling>,
}

impl CostModel {
    pub fn new(
        lagrangian: Shared<dyn Lagrangian>,
        running: Shared<dyn Coupling>,
        terminal: Shared<dyn Coupling>,
    ) -> Self {
        Self { lagrangian, running, terminal }
    }

    /// Freezes `F(., m(t_k))` at every node and `G(., m(T))`.
    pub fn freeze(
        &self,
        flow: &[SpatialMeasure],
        grid: TimeGrid,
        domain: &Domain,
        exec: Execution,
    ) -> Result<FrozenCosts> {
        if flow.len() != grid.num_nodes() {
            return Err(Error::GridMismatch(format!(
                "flow has {} snapshots for {} grid nodes",
                flow.len(),
                grid.num_nodes()
            )));
        }
        let running = map_indexed(exec, flow.len(), |k| self.running.freeze(&flow[k]));
        Ok(FrozenCosts {
            lagrangian: self.lagrangian.clone(),
            running,
            running_zero: self.running.is_zero(),
            terminal: self.terminal.freeze(&flow[flow.len() - 1]),
            grid,
            fd_step: 1e-5 * domain.diameter(),
        })
    }
}

/// The functional `J_eta` against a fixed flow.
pub struct FrozenCosts {
    lagrangian: Shared<dyn Lagrangian>,
    running: Vec<Box<dyn Field>>,
    running_zero: bool,
    terminal: Box<dyn Field>,
    grid: TimeGrid,
    fd_step: f64,
}

impl FrozenCosts {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn lagrangian(&self) -> &dyn Lagrangian {
        self.lagrangian.as_ref()
    }

    pub fn running_value(&self, k: usize, x: &[f64]) -> f64 {
        self.running[k].value(x)
    }

    pub fn terminal_value(&self, x: &[f64]) -> f64 {
        self.terminal.value(x)
    }

    /// Discretized `J` of an arc on the full grid.
    pub fn cost(&self, arc: &Arc) -> Result<f64> {
        if *arc.grid() != self.grid {
            return Err(Error::GridMismatch("arc and flow use different time grids".into()));
        }
        Ok(self.evaluate(0, arc.coords(), arc.dim(), None))
    }

    /// Cost on `[t_k0, T]` of an arc defined on the tail grid.
    pub fn cost_from(&self, k0: usize, arc: &Arc) -> Result<f64> {
        if *arc.grid() != self.grid.tail(k0)? {
            return Err(Error::GridMismatch(format!("arc is not on the tail grid from node {k0}")));
        }
        Ok(self.evaluate(k0, arc.coords(), arc.dim(), None))
    }

    /// Cost on `[t_k0, T]` of staying at `x`.
    pub fn constant_cost_from(&self, k0: usize, x: &[f64]) -> f64 {
        let coords = x.repeat(self.grid.num_nodes() - k0);
        self.evaluate(k0, &coords, x.len(), None)
    }

    /// Cost of one step from `x` at node `k` to `y` at node `k + 1`, with the
    /// running cost split between the endpoints as in the trapezoid rule.
    pub fn step_cost(&self, k: usize, x: &[f64], y: &[f64]) -> f64 {
        let dt = self.grid.dt();
        let mid: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect();
        let v: Vec<f64> = x.iter().zip(y).map(|(a, b)| (b - a) / dt).collect();
        let mut c = dt * self.lagrangian.value(&mid, &v);
        if !self.running_zero {
            c += 0.5 * dt * (self.running[k].value(x) + self.running[k + 1].value(y));
        }
        c
    }

    /// Value and gradient, by central differences when no closed form exists.
    fn field_value_gradient(&self, f: &dyn Field, x: &[f64], grad: &mut [f64]) -> f64 {
        match f.value_gradient(x, grad) {
            Some(v) => v,
            None => {
                grad.copy_from_slice(&central_difference(|y| f.value(y), x, self.fd_step));
                f.value(x)
            }
        }
    }

    /// Cost of the node path `coords` starting at grid node `k0`; accumulates
    /// the gradient in every node when `grad` is given.
    pub(crate) fn evaluate(&self, k0: usize, coords: &[f64], dim: usize, mut grad: Option<&mut [f64]>) -> f64 {
        let nodes = coords.len() / dim;
        debug_assert_eq!(k0 + nodes, self.grid.num_nodes());
        let dt = self.grid.dt();
        let last = nodes - 1;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut total = 0.0;
        let mut mid = vec![0.0; dim];
        let mut vel = vec![0.0; dim];
        for s in 0..last {
            let x = &coords[s * dim..(s + 1) * dim];
            let y = &coords[(s + 1) * dim..(s + 2) * dim];
            for d in 0..dim {
                mid[d] = 0.5 * (x[d] + y[d]);
                vel[d] = (y[d] - x[d]) / dt;
            }
            total += dt * self.lagrangian.value(&mid, &vel);
            if let Some(g) = grad.as_deref_mut() {
                let gx = self.lagrangian.grad_x(&mid, &vel);
                let gv = self.lagrangian.grad_v(&mid, &vel);
                for d in 0..dim {
                    g[s * dim + d] += 0.5 * dt * gx[d] - gv[d];
                    g[(s + 1) * dim + d] += 0.5 * dt * gx[d] + gv[d];
                }
            }
        }
        let mut fg = vec![0.0; dim];
        if !self.running_zero {
            for j in 0..=last {
                let w = if j == 0 || j == last { 0.5 * dt } else { dt };
                let x = &coords[j * dim..(j + 1) * dim];
                let field = self.running[k0 + j].as_ref();
                match grad.as_deref_mut() {
                    Some(g) => {
                        total += w * self.field_value_gradient(field, x, &mut fg);
                        for d in 0..dim {
                            g[j * dim + d] += w * fg[d];
                        }
                    }
                    None => total += w * field.value(x),
                }
            }
        }
        let xe = &coords[last * dim..];
        match grad {
            Some(g) => {
                total += self.field_value_gradient(self.terminal.as_ref(), xe, &mut fg);
                for d in 0..dim {
                    g[last * dim + d] += fg[d];
                }
            }
            None => total += self.terminal.value(xe),
        }
        total
    }
}

/// Discretized `J_eta[arc]` for the flow `m(t_k)`.
pub fn total_cost(arc: &Arc, flow: &[SpatialMeasure], model: &CostModel, domain: &Domain) -> Result<f64> {
    model.freeze(flow, *arc.grid(), domain, Execution::Sequential)?.cost(arc)
}

/// The energy bound `K` and the sup-norm estimates it was computed from.
#[derive(Debug, Clone, Serialize)]
pub struct HolderBound {
    pub k: f64,
    pub horizon: f64,
    pub c0: f64,
    pub c1: f64,
    /// Estimate of `max L(x, 0)` over the domain.
    pub max_rest_cost: f64,
    pub running_sup: f64,
    pub terminal_sup: f64,
    /// True if any component was estimated by sampling.
    pub sampled: bool,
}

/// `K = c1^{-1/2} (T max L(., 0) + 2 T max|F| + 2 max|G| + T c0)^{1/2}`.
pub fn holder_formula(c1: f64, c0: f64, horizon: f64, max_rest_cost: f64, running_sup: f64, terminal_sup: f64) -> f64 {
    if !(c1 > 0.0) {
        return f64::INFINITY;
    }
    let s = horizon * max_rest_cost + 2.0 * horizon * running_sup + 2.0 * terminal_sup + horizon * c0;
    (s.max(0.0) / c1).sqrt()
}

pub fn holder_constant(model: &CostModel, horizon: f64, domain: &Domain) -> HolderBound {
    holder_constant_with(model, horizon, domain, SUP_SAMPLES_PER_DIM)
}

/// [`holder_constant`] with `per_dim` sample points per axis.
pub fn holder_constant_with(model: &CostModel, horizon: f64, domain: &Domain, per_dim: usize) -> HolderBound {
    let consts = model.lagrangian.constants();
    let zero = vec![0.0; domain.dim()];
    let rest =
        domain.grid_points(per_dim).iter().map(|x| model.lagrangian.value(x, &zero)).fold(f64::NEG_INFINITY, f64::max);
    let max_rest_cost = if rest >= 0.0 { SUP_INFLATION * rest } else { rest / SUP_INFLATION };
    let f = model.running.sup_norm(domain, per_dim);
    let g = model.terminal.sup_norm(domain, per_dim);
    HolderBound {
        k: holder_formula(consts.c1, consts.c0, horizon, max_rest_cost, f.value, g.value),
        horizon,
        c0: consts.c0,
        c1: consts.c1,
        max_rest_cost,
        running_sup: f.value,
        terminal_sup: g.value,
        sampled: true,
    }
}

/// `int (F(., m1) - F(., m2)) d(m1 - m2)`, a finite sum over both supports.
pub fn monotonicity_gap(coupling: &dyn Coupling, m1: &SpatialMeasure, m2: &SpatialMeasure) -> f64 {
    let f1 = coupling.freeze(m1);
    let f2 = coupling.freeze(m2);
    let diff = |x: &[f64]| f1.value(x) - f2.value(x);
    m1.atoms().map(|(x, w)| w * diff(x)).sum::<f64>() - m2.atoms().map(|(x, w)| w * diff(x)).sum::<f64>()
}

/// Smallest monotonicity gap over random pairs of `atoms`-atom measures.
#[derive(Debug, Clone, Serialize)]
pub struct MonotonicitySample {
    pub pairs: usize,
    pub min_gap: f64,
}

pub fn sample_monotonicity<R: Rng + ?Sized>(
    coupling: &dyn Coupling,
    domain: &Domain,
    pairs: usize,
    atoms: usize,
    rng: &mut R,
) -> MonotonicitySample {
    let mut min_gap = f64::INFINITY;
    for _ in 0..pairs {
        let m1 = random_measure(domain, atoms, rng);
        let m2 = random_measure(domain, atoms, rng);
        min_gap = min_gap.min(monotonicity_gap(coupling, &m1, &m2));
    }
    MonotonicitySample { pairs, min_gap }
}

/// Random measure with `atoms` interior atoms and Dirichlet-like weights.
pub fn random_measure<R: Rng + ?Sized>(domain: &Domain, atoms: usize, rng: &mut R) -> SpatialMeasure {
    let mut points = Vec::with_capacity(atoms * domain.dim());
    let mut weights = Vec::with_capacity(atoms);
    for _ in 0..atoms.max(1) {
        points.extend(domain.sample_interior(rng));
        weights.push(rng.gen_range(0.05..1.0));
    }
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= s);
    SpatialMeasure::from_parts(domain.dim(), points, weights).expect("sampled measure is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quadratic_model(scale: f64) -> CostModel {
        CostModel::new(Shared::new(Quadratic::new(scale)), Shared::new(ZeroCoupling), Shared::new(ZeroCoupling))
    }

    #[test]
    fn kinetic_cost_of_lines() {
        let d = Domain::unit_disc(0.5).unwrap();
        let grid = TimeGrid::new(2.0, 8).unwrap();
        let flow = vec![SpatialMeasure::dirac(&[0.0, 0.0]).unwrap(); 9];
        let m = quadratic_model(1.0);
        let c = Arc::constant(grid, &[0.3, 0.1]);
        assert_eq!(total_cost(&c, &flow, &m, &d).unwrap(), 0.0);
        let l = Arc::straight_line(grid, &[0.0, 0.0], &[0.6, -0.8]);
        assert!((total_cost(&l, &flow, &m, &d).unwrap() - 1.0 / 2.0).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_differences() {
        let d = Domain::unit_disc(0.5).unwrap();
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let model = CostModel::new(
            Shared::new(Tilted { strength: 0.3, constants: LagrangianConstants { growth: 2.0, c0: 1.0, c1: 0.25 } }),
            Shared::new(DiracDistance { center: vec![0.2, 0.0], scale: 1.5 }),
            Shared::new(SquaredDistance { target: vec![0.5, 0.5], scale: 1.0 }),
        );
        let flow: Vec<_> = (0..6).map(|k| SpatialMeasure::dirac(&[0.1 * k as f64, 0.0]).unwrap()).collect();
        let frozen = model.freeze(&flow, grid, &d, Execution::Sequential).unwrap();
        let coords: Vec<f64> = (0..12).map(|i| 0.05 * i as f64 - 0.3 + 0.01 * (i * i) as f64).collect();
        let mut g = vec![0.0; 12];
        frozen.evaluate(0, &coords, 2, Some(&mut g));
        let fd = central_difference(|c| frozen.evaluate(0, c, 2, None), &coords, 1e-6);
        for (a, b) in g.iter().zip(fd) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn holder_formula_example() {
        assert!((holder_formula(1.0, 0.0, 1.0, 0.0, 1.0, 1.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_costs_give_zero_bound() {
        let d = Domain::unit_disc(0.5).unwrap();
        let h = holder_constant_with(&quadratic_model(1.0), 1.0, &d, 16);
        assert_eq!(h.k, 0.0);
    }

    #[test]
    fn monotonicity_signs() {
        let d = Domain::unit_disc(0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mono = DiracDistance { center: vec![0.0, 0.0], scale: 1.0 };
        assert!(sample_monotonicity(&mono, &d, 50, 4, &mut rng).min_gap >= -1e-12);
        let anti = DiracDistance { center: vec![0.0, 0.0], scale: -1.0 };
        assert!(sample_monotonicity(&anti, &d, 50, 4, &mut rng).min_gap < 0.0);
        let m = random_measure(&d, 5, &mut rng);
        assert_eq!(monotonicity_gap(&mono, &m, &m), 0.0);
    }
}
