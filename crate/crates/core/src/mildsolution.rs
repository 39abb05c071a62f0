//! Value function of the mild solution on a space-time grid, its one-step
//! Bellman residual, and the two-seed uniqueness cross-check.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::arcs::TimeGrid;
use crate::bestresponse::{atom_seed, best_response_from, BestResponseConfig};
use crate::costs::{monotonicity_gap, sample_monotonicity, Coupling, Monotonicity};
use crate::equilibrium::{solve, Game, Initialization, SolverConfig};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::measures::SpatialMeasure;

/// Default spatial resolution per axis.
pub const DEFAULT_GRID_PER_DIM: usize = 33;

/// Neighbour moves considered by the Bellman residual, in grid spacings.
pub const RESIDUAL_REACH: f64 = 3.0;

/// `u(t_k, x_j)` on every time node and on a uniform spatial grid clipped to
/// the closure. Values are stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    grid: TimeGrid,
    dim: usize,
    points: Vec<f64>,
    spacing: Vec<f64>,
    values: Vec<f64>,
    converged: Vec<bool>,
}

impl ValueGrid {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of spatial points.
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn value(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.len() + j]
    }

    pub fn values_at(&self, k: usize) -> &[f64] {
        let n = self.len();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn converged(&self, k: usize, j: usize) -> bool {
        self.converged[k * self.len() + j]
    }

    /// Cells whose best response missed the stationarity tolerance.
    pub fn unconverged_cells(&self) -> usize {
        self.converged.iter().filter(|c| !**c).count()
    }

    /// Adds `delta` at one cell.
    pub fn perturb(&mut self, k: usize, j: usize, delta: f64) {
        let n = self.len();
        self.values[k * n + j] += delta;
    }

    /// `max |u1 - u2|` over matching cells.
    pub fn sup_difference(&self, other: &ValueGrid) -> Result<f64> {
        if self.grid != other.grid || self.points != other.points {
            return Err(Error::ShapeMismatch("value grids differ in time nodes or sample points".into()));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// Pairs `(j, j')` of points within `reach` spacings along every axis.
    fn neighbours(&self, reach: f64) -> Vec<Vec<usize>> {
        let n = self.len();
        (0..n)
            .map(|j| {
                (0..n)
                    .filter(|&i| {
                        (0..self.dim).all(|d| {
                            (self.point(i)[d] - self.point(j)[d]).abs() <= reach * self.spacing[d] * (1.0 + 1e-9)
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Largest `|u(t, x) - u(t, y)|` between lattice neighbours, a sampled
    /// modulus of continuity at the grid scale.
    pub fn local_modulus(&self) -> f64 {
        let nb = self.neighbours(1.0);
        let mut worst: f64 = 0.0;
        for k in 0..self.grid.num_nodes() {
            let u = self.values_at(k);
            for (j, list) in nb.iter().enumerate() {
                for &i in list {
                    worst = worst.max((u[i] - u[j]).abs());
                }
            }
        }
        worst
    }

    /// Rows `t,x1,...,xn,u,converged`, time-major.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        header.extend(["u".to_string(), "converged".to_string()]);
        w.write_record(&header)?;
        for k in 0..self.grid.num_nodes() {
            let t = self.grid.time(k).to_string();
            for j in 0..self.len() {
                let mut row = vec![t.clone()];
                row.extend(self.point(j).iter().map(|v| v.to_string()));
                row.push(self.value(k, j).to_string());
                row.push(if self.converged(k, j) { "1" } else { "0" }.to_string());
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a grid written by [`ValueGrid::write_csv`]. The horizon is the last
    /// time; spacings are recovered from the sample coordinates.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let dim = r.headers()?.len().checked_sub(3).filter(|&d| d > 0).ok_or_else(|| {
            Error::ShapeMismatch("value grid CSV needs t, coordinate, u and converged columns".into())
        })?;
        let mut times: Vec<f64> = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut converged = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .take(dim + 2)
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::ShapeMismatch(format!("bad number in value grid CSV: {e}")))?;
            if times.last() != Some(&vals[0]) {
                times.push(vals[0]);
            }
            converged.push(rec[dim + 2].trim() == "1");
            rows.push(vals);
        }
        let nodes = times.len();
        if nodes < 2 || !rows.len().is_multiple_of(nodes) {
            return Err(Error::ShapeMismatch("value grid CSV is not a full time-by-point table".into()));
        }
        let n = rows.len() / nodes;
        let points: Vec<f64> = rows[..n].iter().flat_map(|r| r[1..=dim].to_vec()).collect();
        for (i, row) in rows.iter().enumerate() {
            if row[0] != times[i / n] || row[1..=dim] != points[(i % n) * dim..(i % n + 1) * dim] {
                return Err(Error::ShapeMismatch(format!("value grid CSV row {} is out of order", i + 1)));
            }
        }
        let spacing = (0..dim)
            .map(|d| {
                let mut c: Vec<f64> = (0..n).map(|j| points[j * dim + d]).collect();
                c.sort_by(f64::total_cmp);
                c.windows(2).map(|w| w[1] - w[0]).filter(|g| *g > 0.0).fold(f64::INFINITY, f64::min)
            })
            .collect();
        Ok(Self {
            grid: TimeGrid::new(times[nodes - 1], nodes - 1)?,
            dim,
            points,
            spacing,
            values: rows.iter().map(|r| r[dim + 1]).collect(),
            converged,
        })
    }
}

/// Value function against a frozen flow: each cell holds the best-response
/// value on `[t_k, T]` from `x_j`, with `u(T, .) = G(., m(T))` exactly.
/// Unconverged cells are flagged, not rejected.
pub fn value_function(
    game: &Game,
    flow: &[SpatialMeasure],
    per_dim: usize,
    cfg: &BestResponseConfig,
    seed: u64,
    exec: Execution,
) -> Result<ValueGrid> {
    cfg.validate()?;
    if per_dim < 2 {
        return Err(Error::InvalidConfig("value grid needs at least 2 points per axis".into()));
    }
    let domain = &game.domain;
    let costs = game.costs.freeze(flow, game.grid, domain, exec)?;
    let pts = domain.grid_points(per_dim);
    if pts.is_empty() {
        return Err(Error::InvalidConfig("value grid has no points in the domain".into()));
    }
    let n = pts.len();
    let last = game.grid.steps();
    let cells = map_indexed(exec, last * n, |c| {
        let (k, j) = (c / n, c % n);
        best_response_from(k, &pts[j], &costs, domain, cfg, atom_seed(seed, c), &[]).map(|br| (br.value, br.converged))
    });
    let mut values = Vec::with_capacity((last + 1) * n);
    let mut converged = Vec::with_capacity((last + 1) * n);
    for cell in cells {
        let (v, c) = cell?;
        values.push(v);
        converged.push(c);
    }
    for p in &pts {
        values.push(costs.terminal_value(p));
        converged.push(true);
    }
    let bbox = domain.bounding_box();
    Ok(ValueGrid {
        grid: game.grid,
        dim: domain.dim(),
        points: pts.concat(),
        spacing: (0..domain.dim()).map(|d| (bbox.hi[d] - bbox.lo[d]) / (per_dim - 1) as f64).collect(),
        values,
        converged,
    })
}

/// `max (u(t_k, x) - [step cost to y + u(t_{k+1}, y)])^+` over grid points `y`
/// within reach of `x`. Zero when `u` is a sub-solution of its own one-step
/// Bellman relation on the grid.
pub fn dynamic_programming_residual(
    u: &ValueGrid,
    game: &Game,
    flow: &[SpatialMeasure],
    exec: Execution,
) -> Result<f64> {
    if *u.grid() != game.grid || u.dim() != game.domain.dim() {
        return Err(Error::ShapeMismatch("value grid does not match the game".into()));
    }
    let costs = game.costs.freeze(flow, game.grid, &game.domain, exec)?;
    let nb = u.neighbours(RESIDUAL_REACH);
    let n = u.len();
    let steps = game.grid.steps();
    let worst = map_indexed(exec, steps * n, |c| {
        let (k, j) = (c / n, c % n);
        let x = u.point(j);
        nb[j].iter().map(|&i| u.value(k, j) - costs.step_cost(k, x, u.point(i)) - u.value(k + 1, i)).fold(0.0, f64::max)
    });
    Ok(worst.into_iter().fold(0.0, f64::max))
}

/// Differences between two runs of the same game.
#[derive(Debug, Clone, Serialize)]
pub struct RunComparison {
    pub u_sup_difference: f64,
    /// `d_1(m1(t_k), m2(t_k))` per node.
    pub flow_d1: Vec<f64>,
    /// Per-node monotonicity gap of the running coupling between the flows.
    pub monotonicity_gaps: Option<Vec<f64>>,
    pub max_flow_d1: f64,
    pub max_monotonicity_gap: Option<f64>,
}

pub fn compare_runs(
    u1: &ValueGrid,
    flow1: &[SpatialMeasure],
    u2: &ValueGrid,
    flow2: &[SpatialMeasure],
    coupling: Option<&dyn Coupling>,
) -> Result<RunComparison> {
    if flow1.len() != flow2.len() || flow1.len() != u1.grid().num_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "flows have {} and {} snapshots for {} nodes",
            flow1.len(),
            flow2.len(),
            u1.grid().num_nodes()
        )));
    }
    let u_sup_difference = u1.sup_difference(u2)?;
    let flow_d1 = flow1.iter().zip(flow2).map(|(a, b)| a.d1(b)).collect::<Result<Vec<_>>>()?;
    let monotonicity_gaps =
        coupling.map(|f| flow1.iter().zip(flow2).map(|(a, b)| monotonicity_gap(f, a, b)).collect::<Vec<_>>());
    Ok(RunComparison {
        u_sup_difference,
        max_flow_d1: flow_d1.iter().copied().fold(0.0, f64::max),
        flow_d1,
        max_monotonicity_gap: monotonicity_gaps.as_ref().map(|g| g.iter().map(|v| v.abs()).fold(0.0, f64::max)),
        monotonicity_gaps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum UniquenessStatus {
    Completed,
    SkippedNotMonotone { reason: String },
    SkippedNotConverged { seeds: Vec<u64> },
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessRun {
    pub seed: u64,
    pub converged: bool,
    pub exploitability: f64,
    pub best_iteration: usize,
    pub unconverged_cells: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    #[serde(flatten)]
    pub status: UniquenessStatus,
    /// Smallest sampled monotonicity gap of the running and terminal costs.
    pub sampled_running_gap: Option<f64>,
    pub sampled_terminal_gap: Option<f64>,
    pub runs: Vec<UniquenessRun>,
    /// The first run against each later one.
    pub comparisons: Vec<RunComparison>,
}

impl UniquenessReport {
    fn skipped(status: UniquenessStatus) -> Self {
        Self {
            status,
            sampled_running_gap: None,
            sampled_terminal_gap: None,
            runs: Vec::new(),
            comparisons: Vec::new(),
        }
    }

    /// Worst `||u1 - u2||_inf` over the comparisons.
    pub fn max_u_difference(&self) -> Option<f64> {
        self.comparisons.iter().map(|c| c.u_sup_difference).reduce(f64::max)
    }

    pub fn max_monotonicity_gap(&self) -> Option<f64> {
        self.comparisons.iter().filter_map(|c| c.max_monotonicity_gap).reduce(f64::max)
    }
}

/// Random pairs probed when confirming monotonicity before the cross-check.
pub const MONOTONICITY_PROBES: usize = 64;

/// Solves the game from a random initialization for every seed, builds each
/// value function and compares the runs. Requires a strictly monotone running
/// cost and a monotone terminal cost.
pub fn uniqueness_crosscheck(
    game: &Game,
    solver: &SolverConfig,
    br: &BestResponseConfig,
    seeds: &[u64],
    per_dim: usize,
) -> Result<UniquenessReport> {
    if seeds.len() < 2 {
        return Err(Error::InvalidConfig("the cross-check needs at least two seeds".into()));
    }
    let running = game.costs.running.as_ref();
    let terminal = game.costs.terminal.as_ref();
    if running.monotonicity() != Monotonicity::Strict {
        return Ok(UniquenessReport::skipped(UniquenessStatus::SkippedNotMonotone {
            reason: format!("running cost `{}` is not strictly monotone", running.name()),
        }));
    }
    if !matches!(terminal.monotonicity(), Monotonicity::Monotone | Monotonicity::Strict) {
        return Ok(UniquenessReport::skipped(UniquenessStatus::SkippedNotMonotone {
            reason: format!("terminal cost `{}` is not monotone", terminal.name()),
        }));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(solver.seed);
    let f_gap = sample_monotonicity(running, &game.domain, MONOTONICITY_PROBES, 4, &mut rng).min_gap;
    let g_gap = sample_monotonicity(terminal, &game.domain, MONOTONICITY_PROBES, 4, &mut rng).min_gap;
    if f_gap < 0.0 || g_gap < 0.0 {
        let mut report = UniquenessReport::skipped(UniquenessStatus::SkippedNotMonotone {
            reason: format!("sampled monotonicity gaps {f_gap:e} (running) and {g_gap:e} (terminal)"),
        });
        report.sampled_running_gap = Some(f_gap);
        report.sampled_terminal_gap = Some(g_gap);
        return Ok(report);
    }

    let mut runs = Vec::with_capacity(seeds.len());
    let mut results = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = SolverConfig { seed, initialization: Initialization::Random, ..solver.clone() };
        let sol = solve(game, &cfg, br)?;
        let flow = sol.eta.flow();
        let u =
            if sol.converged { Some(value_function(game, &flow, per_dim, br, seed, solver.execution)?) } else { None };
        runs.push(UniquenessRun {
            seed,
            converged: sol.converged,
            exploitability: sol.certificate.exploitability,
            best_iteration: sol.best_iteration,
            unconverged_cells: u.as_ref().map_or(0, ValueGrid::unconverged_cells),
        });
        results.push((u, flow));
    }
    let failed: Vec<u64> = runs.iter().filter(|r| !r.converged).map(|r| r.seed).collect();
    let status = if failed.is_empty() {
        UniquenessStatus::Completed
    } else {
        UniquenessStatus::SkippedNotConverged { seeds: failed }
    };
    let mut comparisons = Vec::new();
    if status == UniquenessStatus::Completed {
        let (u0, flow0) = &results[0];
        for (u, flow) in &results[1..] {
            let (Some(u0), Some(u)) = (u0, u) else { unreachable!() };
            comparisons.push(compare_runs(u0, flow0, u, flow, Some(running))?);
        }
    }
    Ok(UniquenessReport {
        status,
        sampled_running_gap: Some(f_gap),
        sampled_terminal_gap: Some(g_gap),
        runs,
        comparisons,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc as Shared;

    use super::*;
    use crate::costs::{CostModel, Quadratic, SquaredDistance, ZeroCoupling};
    use crate::geometry::Domain;

    fn game(terminal: Shared<dyn Coupling>) -> Game {
        let domain = Domain::unit_disc(0.5).unwrap();
        let costs = CostModel::new(Shared::new(Quadratic::new(1.0)), Shared::new(ZeroCoupling), terminal);
        let m0 = SpatialMeasure::dirac(&[0.0, 0.0]).unwrap();
        Game::new(domain, costs, m0, TimeGrid::new(1.0, 4).unwrap()).unwrap()
    }

    fn frozen_flow(g: &Game) -> Vec<SpatialMeasure> {
        vec![g.initial.clone(); g.grid.num_nodes()]
    }

    #[test]
    fn zero_costs_give_zero_value() {
        let g = game(Shared::new(ZeroCoupling));
        let flow = frozen_flow(&g);
        let u = value_function(&g, &flow, 5, &BestResponseConfig::default(), 0, Execution::Sequential).unwrap();
        assert_eq!(u.len(), 13);
        assert!(u.values.iter().all(|v| *v == 0.0));
        assert_eq!(dynamic_programming_residual(&u, &g, &flow, Execution::Sequential).unwrap(), 0.0);
    }

    #[test]
    fn terminal_layer_is_exact_and_values_respect_constant_arcs() {
        let target = SquaredDistance { target: vec![0.3, -0.2], scale: 1.0 };
        let g = game(Shared::new(target.clone()));
        let flow = frozen_flow(&g);
        let u = value_function(&g, &flow, 7, &BestResponseConfig::default(), 1, Execution::Sequential).unwrap();
        let last = g.grid.steps();
        for j in 0..u.len() {
            let x = u.point(j);
            assert_eq!(u.value(last, j), target.value(x, &flow[last]));
            for k in 0..last {
                assert!(u.value(k, j) <= target.value(x, &flow[last]));
            }
        }
    }

    #[test]
    fn corrupted_cell_shows_in_the_residual() {
        let g = game(Shared::new(SquaredDistance { target: vec![0.3, -0.2], scale: 1.0 }));
        let flow = frozen_flow(&g);
        let mut u = value_function(&g, &flow, 7, &BestResponseConfig::default(), 1, Execution::Sequential).unwrap();
        let clean = dynamic_programming_residual(&u, &g, &flow, Execution::Sequential).unwrap();
        assert!(clean < 1e-6, "{clean}");
        u.perturb(1, u.len() / 2, 1.0);
        let r = dynamic_programming_residual(&u, &g, &flow, Execution::Sequential).unwrap();
        assert!(r >= 1.0 - g.grid.dt(), "{r}");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let g = game(Shared::new(SquaredDistance { target: vec![0.3, -0.2], scale: 1.0 }));
        let u =
            value_function(&g, &frozen_flow(&g), 6, &BestResponseConfig::default(), 1, Execution::Sequential).unwrap();
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("t,x1,x2,u,converged\n"));
        let back = ValueGrid::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.points, u.points);
        assert_eq!(back.values, u.values);
        assert_eq!(back.converged, u.converged);
        assert_eq!(back.grid, u.grid);
        for (a, b) in back.spacing.iter().zip(&u.spacing) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(back.sup_difference(&u).unwrap(), 0.0);
    }

    #[test]
    fn crosscheck_is_skipped_without_strict_monotonicity() {
        let g = game(Shared::new(ZeroCoupling));
        let r =
            uniqueness_crosscheck(&g, &SolverConfig::default(), &BestResponseConfig::default(), &[0, 1], 5).unwrap();
        assert!(matches!(r.status, UniquenessStatus::SkippedNotMonotone { .. }));
        assert!(r.runs.is_empty());
    }
}
