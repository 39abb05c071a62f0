//! Finitely supported probability measures on the closed domain and on arcs.

mod io;
pub mod transport;

pub use io::{
    read_arc_measure_json, read_flow_csv, read_spatial_csv, write_arc_measure_json, write_flow_csv, write_spatial_csv,
};
pub use transport::TransportPlan;

use crate::arcs::{Arc, TimeGrid};
use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::linalg;

/// Tolerance on the total mass of a probability measure.
pub const MASS_TOL: f64 = 1e-12;
/// Points closer than this are merged by [`ArcMeasure::pushforward`].
pub const MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl SpatialMeasure {
    /// `points` is row-major with `weights.len()` rows of length `dim`.
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let m = Self::from_parts(dim, points, weights)?;
        let total: f64 = m.weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, expected 1")));
        }
        Ok(m)
    }

    /// Same checks as [`new`](Self::new) except the unit total mass.
    pub fn from_parts(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if dim == 0 || points.len() != dim * weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} coordinates for {} atoms in dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        if !linalg::is_finite(&points) {
            return Err(Error::NonFinite(points));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidMeasure(format!("atom weight {w} is not positive")));
        }
        Ok(Self { dim, points, weights })
    }

    pub fn from_atoms(atoms: &[(Vec<f64>, f64)]) -> Result<Self> {
        let dim = atoms.first().ok_or(Error::EmptyMeasure)?.0.len();
        let mut points = Vec::with_capacity(dim * atoms.len());
        for (p, _) in atoms {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
            }
            points.extend_from_slice(p);
        }
        Self::new(dim, points, atoms.iter().map(|a| a.1).collect())
    }

    pub fn dirac(x: &[f64]) -> Result<Self> {
        Self::new(x.len(), x.to_vec(), vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points.chunks(self.dim).zip(self.weights.iter().copied())
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Largest constraint violation `max(b_Omega, 0)` over the atoms.
    pub fn max_violation(&self, domain: &Domain) -> f64 {
        self.points.chunks(self.dim).map(|p| domain.signed_distance_unchecked(p).max(0.0)).fold(0.0, f64::max)
    }

    pub fn check_feasible(&self, domain: &Domain, tol: f64) -> Result<()> {
        if domain.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: domain.dim(), got: self.dim });
        }
        for p in self.points.chunks(self.dim) {
            let b = domain.signed_distance(p)?;
            if b > tol {
                return Err(Error::InvalidMeasure(format!("atom {p:?} lies outside the domain ({b})")));
            }
        }
        Ok(())
    }

    /// Merges atoms whose points lie within `tol` of a group representative.
    pub fn merged(&self, tol: f64) -> Self {
        let d = self.dim;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.point(a)
                .iter()
                .zip(self.point(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut points: Vec<f64> = Vec::with_capacity(self.points.len());
        let mut weights: Vec<f64> = Vec::with_capacity(self.len());
        let mut groups: Vec<usize> = Vec::new();
        for &i in &order {
            let p = self.point(i);
            // Sorted by first coordinate: only groups within tol of it can match.
            let hit = groups
                .iter()
                .rev()
                .take_while(|&&g| p[0] - points[g * d] <= tol)
                .find(|&&g| linalg::dist(&points[g * d..(g + 1) * d], p) <= tol);
            match hit {
                Some(&g) => weights[g] += self.weights[i],
                None => {
                    groups.push(weights.len());
                    points.extend_from_slice(p);
                    weights.push(self.weights[i]);
                }
            }
        }
        Self { dim: d, points, weights }
    }

    /// Exact Kantorovich-Rubinstein distance `d_1`.
    pub fn d1(&self, other: &SpatialMeasure) -> Result<f64> {
        let (a, b) = self.oriented(other);
        Ok(a.transport_plan(b, 1)?.cost)
    }

    /// Exact quadratic Wasserstein distance `d_2`.
    pub fn d2(&self, other: &SpatialMeasure) -> Result<f64> {
        let (a, b) = self.oriented(other);
        Ok(a.transport_plan(b, 2)?.cost.max(0.0).sqrt())
    }

    /// The pair in a fixed order, so distances are bitwise symmetric.
    fn oriented<'a>(&'a self, other: &'a SpatialMeasure) -> (&'a SpatialMeasure, &'a SpatialMeasure) {
        let key = |m: &SpatialMeasure| {
            (m.len(), m.points.iter().chain(&m.weights).map(|v| v.to_bits()).collect::<Vec<u64>>())
        };
        if key(self) <= key(other) {
            (self, other)
        } else {
            (other, self)
        }
    }

    /// Optimal plan for the cost `|x - y|^p`, `p` in {1, 2}.
    pub fn transport_plan(&self, other: &SpatialMeasure, p: u32) -> Result<TransportPlan> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        match p {
            1 => transport::solve(&self.weights, &other.weights, |i, j| linalg::dist(self.point(i), other.point(j))),
            2 => transport::solve(&self.weights, &other.weights, |i, j| linalg::dist_sq(self.point(i), other.point(j))),
            _ => Err(Error::InvalidConfig(format!("transport exponent {p} is not supported"))),
        }
    }
}

/// Free-function form of [`SpatialMeasure::d1`].
pub fn kantorovich_d1(m1: &SpatialMeasure, m2: &SpatialMeasure) -> Result<f64> {
    m1.d1(m2)
}

/// A probability measure on arcs with a recorded initial marginal.
#[derive(Debug, Clone)]
pub struct ArcMeasure {
    arcs: Vec<Arc>,
    weights: Vec<f64>,
    initial: SpatialMeasure,
    /// Index of the initial atom each arc starts from, `None` if it starts elsewhere.
    origin: Vec<Option<usize>>,
}

impl ArcMeasure {
    /// Checks unit mass and that the time-zero marginal equals `initial` atom by atom.
    pub fn new(arcs: Vec<Arc>, weights: Vec<f64>, initial: SpatialMeasure) -> Result<Self> {
        let eta = Self::from_parts(arcs, weights, initial)?;
        let total: f64 = eta.weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!("arc weights sum to {total}, expected 1")));
        }
        let err = eta.marginal_error();
        if err > MASS_TOL {
            return Err(Error::InvalidMeasure(format!(
                "initial marginal differs from the prescribed measure by {err}"
            )));
        }
        Ok(eta)
    }

    /// Structural checks only: unit mass and the initial marginal are not enforced.
    pub fn from_parts(arcs: Vec<Arc>, weights: Vec<f64>, initial: SpatialMeasure) -> Result<Self> {
        if arcs.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if arcs.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!("{} arcs with {} weights", arcs.len(), weights.len())));
        }
        let grid = *arcs[0].grid();
        for a in &arcs {
            if *a.grid() != grid {
                return Err(Error::GridMismatch("arcs use different time grids".into()));
            }
            if a.dim() != initial.dim() {
                return Err(Error::DimensionMismatch { expected: initial.dim(), got: a.dim() });
            }
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidMeasure(format!("arc weight {w} is not positive")));
        }
        let origin = arcs.iter().map(|a| (0..initial.len()).find(|&i| initial.point(i) == a.start())).collect();
        Ok(Self { arcs, weights, initial, origin })
    }

    /// The constant-arc measure `j # m0`.
    pub fn constant_arcs(initial: &SpatialMeasure, grid: TimeGrid) -> Self {
        let arcs = initial.atoms().map(|(p, _)| Arc::constant(grid, p)).collect();
        Self {
            arcs,
            weights: initial.weights().to_vec(),
            initial: initial.clone(),
            origin: (0..initial.len()).map(Some).collect(),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        self.arcs[0].grid()
    }

    pub fn dim(&self) -> usize {
        self.initial.dim()
    }

    pub fn len(&self) -> usize {
        self.arcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn arc(&self, i: usize) -> &Arc {
        &self.arcs[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn initial(&self) -> &SpatialMeasure {
        &self.initial
    }

    /// Index of the initial atom arc `i` starts from.
    pub fn origin(&self, i: usize) -> Option<usize> {
        self.origin[i]
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&Arc, f64)> + '_ {
        self.arcs.iter().zip(self.weights.iter().copied())
    }

    /// Largest per-atom gap between `e_0 # eta` and the initial measure;
    /// infinite if some arc starts outside the initial support.
    pub fn marginal_error(&self) -> f64 {
        let mut mass = vec![0.0; self.initial.len()];
        for (o, w) in self.origin.iter().zip(&self.weights) {
            match o {
                Some(i) => mass[*i] += w,
                None => return f64::INFINITY,
            }
        }
        mass.iter().zip(self.initial.weights()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// `e_t # eta`, with atoms closer than [`MERGE_TOL`] merged.
    pub fn pushforward(&self, t: f64) -> Result<SpatialMeasure> {
        self.grid().check_time(t)?;
        let d = self.dim();
        let mut points = Vec::with_capacity(d * self.len());
        for a in &self.arcs {
            points.extend(a.evaluate(t)?);
        }
        let raw = SpatialMeasure::from_parts(d, points, self.weights.clone())?;
        Ok(raw.merged(MERGE_TOL))
    }

    /// `e_{t_k} # eta` at grid node `k`.
    pub fn pushforward_node(&self, k: usize) -> SpatialMeasure {
        let d = self.dim();
        let mut points = Vec::with_capacity(d * self.len());
        for a in &self.arcs {
            points.extend_from_slice(a.node(k));
        }
        SpatialMeasure { dim: d, points, weights: self.weights.clone() }.merged(MERGE_TOL)
    }

    /// Pushforwards at every grid node.
    pub fn flow(&self) -> Vec<SpatialMeasure> {
        (0..self.grid().num_nodes()).map(|k| self.pushforward_node(k)).collect()
    }

    /// Conditional measures `eta_x`, one per initial atom, in initial-atom order.
    pub fn disintegrate(&self) -> Result<Vec<Conditional>> {
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); self.initial.len()];
        for (i, o) in self.origin.iter().enumerate() {
            let o = o.ok_or_else(|| Error::InvalidMeasure(format!("arc {i} does not start at an initial atom")))?;
            groups[o].push(i);
        }
        groups
            .into_iter()
            .enumerate()
            .map(|(a, members)| {
                let mass: f64 = members.iter().map(|&i| self.weights[i]).sum();
                if members.is_empty() {
                    return Err(Error::InvalidMeasure(format!("initial atom {a} carries no arcs")));
                }
                Ok(Conditional {
                    start: self.initial.point(a).to_vec(),
                    mass,
                    arcs: members.iter().map(|&i| self.arcs[i].clone()).collect(),
                    weights: members.iter().map(|&i| self.weights[i] / mass).collect(),
                })
            })
            .collect()
    }

    /// Inverse of [`disintegrate`](Self::disintegrate): weights `m0(x) * eta_x`.
    pub fn reassemble(initial: &SpatialMeasure, parts: &[Conditional]) -> Result<Self> {
        if parts.len() != initial.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} conditionals for {} initial atoms",
                parts.len(),
                initial.len()
            )));
        }
        let mut arcs = Vec::new();
        let mut weights = Vec::new();
        for (k, part) in parts.iter().enumerate() {
            for (a, w) in part.arcs.iter().zip(&part.weights) {
                arcs.push(a.clone());
                weights.push(initial.weight(k) * w);
            }
        }
        Self::from_parts(arcs, weights, initial.clone())
    }

    /// `(1 - alpha) * self + alpha * other`, merging identical arcs.
    pub fn mix(&self, other: &ArcMeasure, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidConfig(format!("mixing weight {alpha} outside [0, 1]")));
        }
        if other.grid() != self.grid() {
            return Err(Error::GridMismatch("cannot mix measures on different grids".into()));
        }
        let mut arcs = Vec::with_capacity(self.len() + other.len());
        let mut weights = Vec::with_capacity(self.len() + other.len());
        let mut origin = Vec::with_capacity(self.len() + other.len());
        if alpha < 1.0 {
            for i in 0..self.len() {
                arcs.push(self.arcs[i].clone());
                weights.push((1.0 - alpha) * self.weights[i]);
                origin.push(self.origin[i]);
            }
        }
        if alpha > 0.0 {
            for i in 0..other.len() {
                let a = &other.arcs[i];
                let w = alpha * other.weights[i];
                let o = self.initial.atoms().position(|(p, _)| p == a.start());
                match (0..arcs.len()).find(|&j| origin[j] == o && arcs[j].coords() == a.coords()) {
                    Some(j) => weights[j] += w,
                    None => {
                        arcs.push(a.clone());
                        weights.push(w);
                        origin.push(o);
                    }
                }
            }
        }
        Ok(Self { arcs, weights, initial: self.initial.clone(), origin })
    }
}

/// The conditional law `eta_x` of arcs starting at `start`.
#[derive(Debug, Clone)]
pub struct Conditional {
    pub start: Vec<f64>,
    /// `m0(start)`.
    pub mass: f64,
    pub arcs: Vec<Arc>,
    /// Renormalized to sum to one.
    pub weights: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 4).unwrap()
    }

    #[test]
    fn dirac_flow_is_constant() {
        let m0 = SpatialMeasure::dirac(&[0.3, -0.2]).unwrap();
        let eta = ArcMeasure::constant_arcs(&m0, grid());
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(eta.pushforward(t).unwrap(), m0);
        }
    }

    #[test]
    fn pushforward_midpoints_keep_weights() {
        let m0 = SpatialMeasure::from_atoms(&[(vec![0.0, 0.0], 0.3), (vec![0.0, 1.0], 0.7)]).unwrap();
        let arcs = vec![
            Arc::straight_line(grid(), &[0.0, 0.0], &[1.0, 0.0]),
            Arc::straight_line(grid(), &[0.0, 1.0], &[1.0, 1.0]),
        ];
        let eta = ArcMeasure::new(arcs, vec![0.3, 0.7], m0).unwrap();
        let m = eta.pushforward(0.5).unwrap();
        let atoms: Vec<_> = m.atoms().map(|(p, w)| (p.to_vec(), w)).collect();
        assert_eq!(atoms, vec![(vec![0.5, 0.0], 0.3), (vec![0.5, 1.0], 0.7)]);
        assert!(matches!(eta.pushforward(1.5), Err(Error::OutOfHorizon { .. })));
    }

    #[test]
    fn pushforward_at_zero_is_initial() {
        let m0 = SpatialMeasure::from_atoms(&[(vec![0.1], 0.25), (vec![0.4], 0.75)]).unwrap();
        let arcs = vec![
            Arc::straight_line(grid(), &[0.1], &[0.9]),
            Arc::straight_line(grid(), &[0.4], &[0.0]),
            Arc::constant(grid(), &[0.4]),
        ];
        let eta = ArcMeasure::new(arcs, vec![0.25, 0.5, 0.25], m0.clone()).unwrap();
        assert_eq!(eta.pushforward(0.0).unwrap(), m0);
    }

    #[test]
    fn coincident_points_merge() {
        let m = SpatialMeasure::new(1, vec![0.5, 0.5 + 1e-13, 0.7], vec![0.2, 0.3, 0.5]).unwrap();
        let merged = m.merged(MERGE_TOL);
        assert_eq!(merged.len(), 2);
        assert!((merged.weight(0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn disintegration_renormalizes() {
        let m0 = SpatialMeasure::from_atoms(&[(vec![0.0], 0.4), (vec![1.0], 0.6)]).unwrap();
        let arcs = vec![
            Arc::straight_line(grid(), &[0.0], &[0.5]),
            Arc::constant(grid(), &[0.0]),
            Arc::constant(grid(), &[1.0]),
        ];
        let eta = ArcMeasure::new(arcs, vec![0.2, 0.2, 0.6], m0.clone()).unwrap();
        let parts = eta.disintegrate().unwrap();
        assert_eq!(parts[0].weights, vec![0.5, 0.5]);
        assert_eq!(parts[1].weights, vec![1.0]);
        let back = ArcMeasure::reassemble(&m0, &parts).unwrap();
        assert_eq!(back.weights(), eta.weights());
    }

    #[test]
    fn marginal_violation_is_reported() {
        let m0 = SpatialMeasure::from_atoms(&[(vec![0.0], 0.5), (vec![1.0], 0.5)]).unwrap();
        let arcs = vec![Arc::constant(grid(), &[0.0]), Arc::constant(grid(), &[1.0])];
        assert!(ArcMeasure::new(arcs.clone(), vec![0.6, 0.5], m0.clone()).is_err());
        let eta = ArcMeasure::from_parts(arcs, vec![0.6, 0.5], m0).unwrap();
        assert!((eta.marginal_error() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn d1_examples() {
        let dx = SpatialMeasure::dirac(&[0.0, 0.0]).unwrap();
        let dy = SpatialMeasure::dirac(&[0.3, 0.4]).unwrap();
        assert!((dx.d1(&dy).unwrap() - 0.5).abs() < 1e-15);
        let m1 = SpatialMeasure::from_atoms(&[(vec![0.0, 0.0], 0.5), (vec![1.0, 0.0], 0.5)]).unwrap();
        let m2 = SpatialMeasure::dirac(&[0.5, 0.0]).unwrap();
        assert!((m1.d1(&m2).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(m1.d1(&m1).unwrap(), 0.0);
        assert!((m1.d2(&m2).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mixing_merges_identical_arcs() {
        let m0 = SpatialMeasure::dirac(&[0.0]).unwrap();
        let eta = ArcMeasure::constant_arcs(&m0, grid());
        let line = ArcMeasure::new(vec![Arc::straight_line(grid(), &[0.0], &[0.5])], vec![1.0], m0).unwrap();
        let mixed = eta.mix(&line, 0.25).unwrap().mix(&eta, 0.5).unwrap();
        assert_eq!(mixed.len(), 2);
        assert!((mixed.weight(0) - 0.875).abs() < 1e-15);
        assert!(mixed.marginal_error() < 1e-15);
    }
}
