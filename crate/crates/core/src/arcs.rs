//! Piecewise-linear constrained trajectories on a uniform time grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::linalg::{dist, dist_sq, is_finite};

/// Uniform grid `t_k = k T / N` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidConfig(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::InvalidConfig("time grid needs at least one step".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn num_nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// The grid of `[t_k, T]`, re-based to start at zero.
    pub fn tail(&self, k: usize) -> Result<Self> {
        if k >= self.steps {
            return Err(Error::GridMismatch(format!("cannot truncate a {}-step grid at node {k}", self.steps)));
        }
        Ok(Self { horizon: self.horizon - self.time(k), steps: self.steps - k })
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::OutOfHorizon { t, horizon: self.horizon });
        }
        Ok(())
    }
}

/// Trajectory through `N + 1` nodes, linear between nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    grid: TimeGrid,
    dim: usize,
    /// Row-major node coordinates.
    coords: Vec<f64>,
}

impl Arc {
    pub fn new(grid: TimeGrid, dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() != dim * grid.num_nodes() {
            return Err(Error::InvalidArc(format!(
                "expected {} coordinates, got {}",
                dim * grid.num_nodes(),
                coords.len()
            )));
        }
        if !is_finite(&coords) {
            return Err(Error::NonFinite(coords));
        }
        Ok(Self { grid, dim, coords })
    }

    pub fn constant(grid: TimeGrid, x: &[f64]) -> Self {
        let coords = x.repeat(grid.num_nodes());
        Self { grid, dim: x.len(), coords }
    }

    /// Constant-speed segment from `x` to `y`.
    pub fn straight_line(grid: TimeGrid, x: &[f64], y: &[f64]) -> Self {
        let n = grid.steps as f64;
        let mut coords = Vec::with_capacity(x.len() * grid.num_nodes());
        for k in 0..grid.num_nodes() {
            let s = k as f64 / n;
            coords.extend(x.iter().zip(y).map(|(a, b)| a + s * (b - a)));
        }
        Self { grid, dim: x.len(), coords }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.grid.num_nodes()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.coords[k * self.dim..(k + 1) * self.dim]
    }

    pub fn start(&self) -> &[f64] {
        self.node(0)
    }

    pub fn end(&self) -> &[f64] {
        self.node(self.grid.steps)
    }

    /// Constant velocity on segment `(t_k, t_{k+1})`.
    pub fn velocity(&self, k: usize) -> Vec<f64> {
        let dt = self.grid.dt();
        self.node(k + 1).iter().zip(self.node(k)).map(|(b, a)| (b - a) / dt).collect()
    }

    pub fn segment_speeds(&self) -> Vec<f64> {
        let dt = self.grid.dt();
        (0..self.grid.steps).map(|k| dist(self.node(k + 1), self.node(k)) / dt).collect()
    }

    pub fn max_speed(&self) -> f64 {
        self.segment_speeds().into_iter().fold(0.0, f64::max)
    }

    /// Position at time `t`, interpolating linearly between nodes.
    pub fn evaluate(&self, t: f64) -> Result<Vec<f64>> {
        self.grid.check_time(t)?;
        let dt = self.grid.dt();
        let k = ((t / dt).floor() as usize).min(self.grid.steps - 1);
        let s = ((t - self.grid.time(k)) / dt).clamp(0.0, 1.0);
        if s == 0.0 {
            return Ok(self.node(k).to_vec());
        }
        if s == 1.0 {
            return Ok(self.node(k + 1).to_vec());
        }
        Ok(self.node(k).iter().zip(self.node(k + 1)).map(|(a, b)| a + s * (b - a)).collect())
    }

    /// `int_0^T |velocity|^2 dt`.
    pub fn kinetic_energy(&self) -> f64 {
        let dt = self.grid.dt();
        (0..self.grid.steps).map(|k| dist_sq(self.node(k + 1), self.node(k))).sum::<f64>() / dt
    }

    /// `L^2` norm of the piecewise-constant velocity.
    pub fn energy_norm(&self) -> f64 {
        self.kinetic_energy().sqrt()
    }

    /// Largest `|x(t_i) - x(t_j)| / |t_i - t_j|^(1/2)` over node pairs.
    pub fn holder_modulus(&self) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..self.num_nodes() {
            for j in i + 1..self.num_nodes() {
                let gap = (self.grid.time(j) - self.grid.time(i)).sqrt();
                best = best.max(dist(self.node(i), self.node(j)) / gap);
            }
        }
        best
    }

    /// Largest node-wise distance to another arc on the same grid.
    pub fn sup_distance(&self, other: &Arc) -> f64 {
        (0..self.num_nodes().min(other.num_nodes())).map(|k| dist(self.node(k), other.node(k))).fold(0.0, f64::max)
    }

    /// Largest signed distance over nodes.
    pub fn max_violation(&self, domain: &Domain) -> f64 {
        (0..self.num_nodes()).map(|k| domain.signed_distance_unchecked(self.node(k))).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_feasible(&self, domain: &Domain, tol: f64) -> bool {
        self.max_violation(domain) <= tol
    }

    /// Translates the arc so that it starts at `new_start`, then projects
    /// every node onto the closure.
    ///
    /// The result starts at `new_start`, stays in the closure, is node-wise
    /// within `2 |new_start - start|` of the input, and its segment speeds are
    /// at most `domain.projection_constant()` times the input speeds.
    pub fn project_arc(&self, domain: &Domain, new_start: &[f64]) -> Result<Arc> {
        if new_start.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: new_start.len() });
        }
        let b0 = domain.signed_distance(new_start)?;
        if b0 > 0.0 {
            return Err(Error::InfeasibleStart(b0));
        }
        let shift: Vec<f64> = new_start.iter().zip(self.start()).map(|(a, b)| a - b).collect();
        let shift_len = crate::linalg::norm(&shift);
        if shift_len >= domain.tube_radius() {
            return Err(Error::TubeExceeded { distance: shift_len, tube_radius: domain.tube_radius() });
        }
        let mut coords = Vec::with_capacity(self.coords.len());
        for k in 0..self.num_nodes() {
            let moved: Vec<f64> = self.node(k).iter().zip(&shift).map(|(a, s)| a + s).collect();
            if k == 0 {
                coords.extend_from_slice(new_start);
            } else {
                coords.extend(domain.project_to_closure(&moved)?);
            }
        }
        Ok(Arc { grid: self.grid, dim: self.dim, coords })
    }

    /// Sub-arc on the nodes `k..=N`, re-based to start at time zero.
    pub fn tail(&self, k: usize) -> Result<Arc> {
        let grid = self.grid.tail(k)?;
        Ok(Arc { grid, dim: self.dim, coords: self.coords[k * self.dim..].to_vec() })
    }
}

/// Default feasibility tolerance for a domain: `1e-9` times its diameter.
pub fn default_feasibility_tol(domain: &Domain) -> f64 {
    1e-9 * domain.diameter()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n).unwrap()
    }

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::new(2.0, 4).unwrap();
        assert_eq!(g.times(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        let tail = g.tail(1).unwrap();
        assert_eq!(tail.steps(), 3);
        assert_eq!(tail.horizon(), 1.5);
        assert!(TimeGrid::new(0.0, 3).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn constant_arc() {
        let a = Arc::constant(grid(5), &[0.2, -0.1]);
        assert_eq!(a.evaluate(0.37).unwrap(), vec![0.2, -0.1]);
        assert_eq!(a.energy_norm(), 0.0);
        assert_eq!(a.holder_modulus(), 0.0);
    }

    #[test]
    fn two_node_interpolation() {
        let a = Arc::straight_line(grid(1), &[0.0, 0.0], &[1.0, 0.0]);
        assert_eq!(a.evaluate(0.5).unwrap(), vec![0.5, 0.0]);
        assert!(matches!(a.evaluate(1.5), Err(Error::OutOfHorizon { .. })));
        assert!(matches!(a.evaluate(-0.1), Err(Error::OutOfHorizon { .. })));
    }

    #[test]
    fn straight_line_norms() {
        let g = TimeGrid::new(4.0, 8).unwrap();
        let a = Arc::straight_line(g, &[0.0, 0.0], &[0.6, 0.8]);
        assert!((a.energy_norm() - 1.0 / 2.0).abs() < 1e-14);
        assert!((a.holder_modulus() - 1.0 / 2.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(Arc::new(grid(2), 2, vec![0.0; 5]).is_err());
    }

    #[test]
    fn project_arc_zero_translation_is_identity() {
        let d = Domain::unit_disc(0.5).unwrap();
        let a = Arc::straight_line(grid(4), &[0.0, 0.0], &[0.99, 0.0]);
        assert_eq!(a.project_arc(&d, &[0.0, 0.0]).unwrap(), a);
    }

    #[test]
    fn project_arc_interior_is_translation() {
        let d = Domain::unit_disc(0.5).unwrap();
        let a = Arc::straight_line(grid(4), &[0.0, 0.0], &[0.5, 0.0]);
        let p = a.project_arc(&d, &[0.0, 0.1]).unwrap();
        for k in 0..5 {
            assert!((p.node(k)[1] - 0.1).abs() < 1e-15);
            assert!((p.node(k)[0] - a.node(k)[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn project_arc_rejects_infeasible_start() {
        let d = Domain::unit_disc(0.5).unwrap();
        let a = Arc::constant(grid(2), &[0.9, 0.0]);
        assert!(matches!(a.project_arc(&d, &[1.2, 0.0]), Err(Error::InfeasibleStart(_))));
    }

    #[test]
    fn tail_shares_nodes() {
        let a = Arc::straight_line(grid(4), &[0.0, 0.0], &[1.0, 0.0]);
        let t = a.tail(1).unwrap();
        assert_eq!(t.num_nodes(), 4);
        assert_eq!(t.start(), a.node(1));
        assert!((t.grid().horizon() - 0.75).abs() < 1e-15);
    }
}
