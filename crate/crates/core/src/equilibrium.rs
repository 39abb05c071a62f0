//! Equilibria by damped fictitious play, and certificates recomputed from the
//! returned arc measure.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arcs::{default_feasibility_tol, Arc, TimeGrid};
use crate::bestresponse::{
    atom_seed, best_responses, exploitability_with, line_start, AtomGap, BestResponse, BestResponseConfig,
};
use crate::costs::{holder_constant, CostModel, HolderBound};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::geometry::Domain;
use crate::linalg::dist;
use crate::measures::{ArcMeasure, SpatialMeasure, MASS_TOL};

/// Slack allowed on the energy bound.
pub const ENERGY_TOL: f64 = 1e-6;
/// Above this many atom pairs the flow Holder check first tries the coupling
/// of the two snapshots induced by the arcs, which bounds `d_1` from above.
pub const EXACT_TRANSPORT_LIMIT: usize = 40_000;

/// A game instance: domain, costs, initial distribution and time grid.
#[derive(Debug, Clone)]
pub struct Game {
    pub domain: Domain,
    pub costs: CostModel,
    pub initial: SpatialMeasure,
    pub grid: TimeGrid,
}

impl Game {
    pub fn new(domain: Domain, costs: CostModel, initial: SpatialMeasure, grid: TimeGrid) -> Result<Self> {
        if initial.dim() != domain.dim() {
            return Err(Error::DimensionMismatch { expected: domain.dim(), got: initial.dim() });
        }
        initial.check_feasible(&domain, default_feasibility_tol(&domain))?;
        Ok(Self { domain, costs, initial, grid })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Damping {
    /// `alpha_k = 1 / (k + 1)`: the running average of best responses.
    Harmonic,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    /// Every agent stays at its starting point.
    Constant,
    /// Each agent heads toward a random interior point drawn from the seed.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_outer_iters: usize,
    pub exploitability_tol: f64,
    pub damping: Damping,
    /// Split an atom's weight equally among tied best responses.
    pub split_ties: bool,
    pub seed: u64,
    pub initialization: Initialization,
    pub execution: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 200,
            exploitability_tol: 1e-3,
            damping: Damping::Harmonic,
            split_ties: false,
            seed: 0,
            initialization: Initialization::Constant,
            execution: Execution::Parallel,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidConfig("max_outer_iters must be positive".into()));
        }
        if !(self.exploitability_tol > 0.0) {
            return Err(Error::InvalidConfig("exploitability_tol must be positive".into()));
        }
        if let Damping::Fixed(a) = self.damping {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidConfig(format!("fixed damping {a} outside (0, 1]")));
            }
        }
        Ok(())
    }

    fn alpha(&self, k: usize) -> f64 {
        match self.damping {
            Damping::Harmonic => 1.0 / (k as f64 + 1.0),
            Damping::Fixed(a) => a,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub exploitability: f64,
    pub max_energy: f64,
    pub support_size: usize,
    /// Not serialized, so that artifacts are reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HolderPair {
    pub k1: usize,
    pub k2: usize,
    /// `d_1` itself, or an upper bound when `exact` is false.
    pub distance: f64,
    pub bound: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowHolderCheck {
    pub pairs: usize,
    pub exact_pairs: usize,
    /// `min (K |t2 - t1|^{1/2} - d_1)` over all grid pairs.
    pub min_slack: f64,
    pub worst: Option<HolderPair>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumCertificate {
    pub exploitability: f64,
    pub exploitability_tol: f64,
    pub exploitability_passed: bool,
    pub best_responses_converged: bool,
    pub atoms: Vec<AtomGap>,
    pub holder: HolderBound,
    pub max_energy: f64,
    pub energy_passed: bool,
    pub flow_holder: FlowHolderCheck,
    pub marginal_error: f64,
    pub marginal_passed: bool,
    pub max_violation: f64,
    pub feasibility_passed: bool,
    pub support_size: usize,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
}

impl EquilibriumCertificate {
    pub fn all_passed(&self) -> bool {
        self.exploitability_passed
            && self.energy_passed
            && self.flow_holder.passed
            && self.marginal_passed
            && self.feasibility_passed
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub eta: ArcMeasure,
    pub certificate: EquilibriumCertificate,
    /// Iteration at which the returned measure was produced.
    pub best_iteration: usize,
    pub converged: bool,
}

/// Initial arc measure for fictitious play.
pub fn initial_measure(game: &Game, cfg: &SolverConfig) -> Result<ArcMeasure> {
    match cfg.initialization {
        Initialization::Constant => Ok(ArcMeasure::constant_arcs(&game.initial, game.grid)),
        Initialization::Random => {
            let nodes = game.grid.num_nodes();
            let mut arcs = Vec::with_capacity(game.initial.len());
            for (a, (x, _)) in game.initial.atoms().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(atom_seed(cfg.seed ^ 0x5EED, a));
                let y = game.domain.sample_interior(&mut rng);
                let coords = line_start(x, &y, nodes, &game.domain).unwrap_or_else(|| x.repeat(nodes));
                arcs.push(Arc::new(game.grid, x.len(), coords)?);
            }
            ArcMeasure::new(arcs, game.initial.weights().to_vec(), game.initial.clone())
        }
    }
}

/// Damped fictitious play: best responses to the current flow are averaged
/// into the arc measure until the exploitability falls below tolerance. The
/// lowest-exploitability iterate is returned and certified from scratch.
pub fn solve(game: &Game, cfg: &SolverConfig, br: &BestResponseConfig) -> Result<Solution> {
    solve_with_progress(game, cfg, br, |_| {})
}

pub fn solve_with_progress<P: FnMut(&TraceRecord)>(
    game: &Game,
    cfg: &SolverConfig,
    br: &BestResponseConfig,
    mut progress: P,
) -> Result<Solution> {
    cfg.validate()?;
    br.validate()?;
    let start = Instant::now();
    let holder = holder_constant(&game.costs, game.grid.horizon(), &game.domain);
    let mut eta = initial_measure(game, cfg)?;
    let mut trace = Vec::new();
    let mut best: Option<(f64, usize, ArcMeasure)> = None;
    let mut previous: Vec<Vec<Arc>> = vec![Vec::new(); game.initial.len()];

    for k in 0..cfg.max_outer_iters {
        let frozen = game.costs.freeze(&eta.flow(), game.grid, &game.domain, cfg.execution)?;
        let responses = best_responses(&eta, &frozen, &game.domain, br, cfg.seed, &previous, cfg.execution)?;
        let gap = exploitability_with(&eta, &frozen, &responses)?;
        let record = TraceRecord {
            iteration: k,
            exploitability: gap.value,
            max_energy: eta.arcs().iter().map(Arc::energy_norm).fold(0.0, f64::max),
            support_size: eta.len(),
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        progress(&record);
        trace.push(record);
        if best.as_ref().is_none_or(|(v, _, _)| gap.value < *v) {
            best = Some((gap.value, k, eta.clone()));
        }
        if gap.value <= cfg.exploitability_tol {
            break;
        }
        if k + 1 == cfg.max_outer_iters {
            break;
        }
        let beta = response_measure(game, &responses, cfg.split_ties)?;
        eta = eta.mix(&beta, cfg.alpha(k))?;
        previous = responses.into_iter().map(|r| vec![r.arc]).collect();
    }

    let (_, best_iteration, eta) = best.expect("at least one iteration runs");
    let mut certificate = verify_with(&eta, game, br, cfg.seed, cfg.exploitability_tol, cfg.execution, &holder)?;
    certificate.trace = trace;
    let converged = certificate.exploitability_passed;
    Ok(Solution { eta, certificate, best_iteration, converged })
}

/// The best-response measure: one arc per initial atom, or an equal split
/// among tied minimizers.
fn response_measure(game: &Game, responses: &[BestResponse], split_ties: bool) -> Result<ArcMeasure> {
    let mut arcs = Vec::new();
    let mut weights = Vec::new();
    for (r, (_, w)) in responses.iter().zip(game.initial.atoms()) {
        if split_ties && !r.ties.is_empty() {
            let share = w / (1 + r.ties.len()) as f64;
            arcs.push(r.arc.clone());
            weights.push(share);
            for t in &r.ties {
                arcs.push(t.clone());
                weights.push(share);
            }
        } else {
            arcs.push(r.arc.clone());
            weights.push(w);
        }
    }
    ArcMeasure::from_parts(arcs, weights, game.initial.clone())
}

/// Recomputes every certificate quantity from `eta`.
pub fn verify(
    eta: &ArcMeasure,
    game: &Game,
    br: &BestResponseConfig,
    seed: u64,
    exploitability_tol: f64,
    exec: Execution,
) -> Result<EquilibriumCertificate> {
    let holder = holder_constant(&game.costs, game.grid.horizon(), &game.domain);
    verify_with(eta, game, br, seed, exploitability_tol, exec, &holder)
}

fn verify_with(
    eta: &ArcMeasure,
    game: &Game,
    br: &BestResponseConfig,
    seed: u64,
    exploitability_tol: f64,
    exec: Execution,
    holder: &HolderBound,
) -> Result<EquilibriumCertificate> {
    if *eta.grid() != game.grid {
        return Err(Error::GridMismatch("arc measure and game use different time grids".into()));
    }
    let flow = eta.flow();
    let frozen = game.costs.freeze(&flow, game.grid, &game.domain, exec)?;
    let marginal_error = eta.marginal_error();
    let (exploitability, atoms, converged) = match best_responses(eta, &frozen, &game.domain, br, seed, &[], exec)
        .and_then(|r| exploitability_with(eta, &frozen, &r))
    {
        Ok(g) => (g.value, g.atoms, g.all_converged),
        Err(_) => (f64::INFINITY, Vec::new(), false),
    };
    let max_energy = eta.arcs().iter().map(Arc::energy_norm).fold(0.0, f64::max);
    let max_violation = eta.arcs().iter().map(|a| a.max_violation(&game.domain)).fold(f64::NEG_INFINITY, f64::max);
    let flow_holder = flow_holder_check(eta, &flow, holder.k, exec)?;
    Ok(EquilibriumCertificate {
        exploitability,
        exploitability_tol,
        exploitability_passed: exploitability <= exploitability_tol,
        best_responses_converged: converged,
        atoms,
        holder: holder.clone(),
        max_energy,
        energy_passed: max_energy <= holder.k + ENERGY_TOL,
        flow_holder,
        marginal_error,
        marginal_passed: marginal_error <= MASS_TOL,
        max_violation,
        feasibility_passed: max_violation <= default_feasibility_tol(&game.domain),
        support_size: eta.len(),
        trace: Vec::new(),
    })
}

/// Checks `d_1(m(t2), m(t1)) <= K |t2 - t1|^{1/2}` on all node pairs.
pub fn flow_holder_check(
    eta: &ArcMeasure,
    flow: &[SpatialMeasure],
    k: f64,
    exec: Execution,
) -> Result<FlowHolderCheck> {
    let grid = eta.grid();
    let n = flow.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let results = map_indexed(exec, pairs.len(), |p| -> Result<HolderPair> {
        let (k1, k2) = pairs[p];
        let bound = k * (grid.time(k2) - grid.time(k1)).sqrt();
        let coupled: f64 = eta.atoms().map(|(a, w)| w * dist(a.node(k1), a.node(k2))).sum();
        let small = flow[k1].len() * flow[k2].len() <= EXACT_TRANSPORT_LIMIT;
        if small || coupled > bound {
            let d = flow[k1].d1(&flow[k2])?;
            Ok(HolderPair { k1, k2, distance: d, bound, exact: true })
        } else {
            Ok(HolderPair { k1, k2, distance: coupled, bound, exact: false })
        }
    });
    let mut min_slack = f64::INFINITY;
    let mut worst = None;
    let mut exact_pairs = 0;
    for r in results {
        let r = r?;
        exact_pairs += r.exact as usize;
        let slack = r.bound - r.distance;
        if slack < min_slack {
            min_slack = slack;
            worst = Some(r);
        }
    }
    Ok(FlowHolderCheck { pairs: pairs.len(), exact_pairs, min_slack, worst, passed: min_slack >= -1e-12 })
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc as Shared;

    use super::*;
    use crate::costs::{Quadratic, SquaredDistance, ZeroCoupling};

    fn trivial_game() -> Game {
        let domain = Domain::unit_disc(0.5).unwrap();
        let costs =
            CostModel::new(Shared::new(Quadratic::new(1.0)), Shared::new(ZeroCoupling), Shared::new(ZeroCoupling));
        let m0 = SpatialMeasure::from_atoms(&[(vec![0.1, 0.2], 0.5), (vec![-0.3, 0.0], 0.5)]).unwrap();
        Game::new(domain, costs, m0, TimeGrid::new(1.0, 8).unwrap()).unwrap()
    }

    #[test]
    fn trivial_game_is_solved_by_standing_still() {
        let game = trivial_game();
        let cfg = SolverConfig { execution: Execution::Sequential, ..Default::default() };
        let sol = solve(&game, &cfg, &BestResponseConfig::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.certificate.exploitability, 0.0);
        assert!(sol.certificate.all_passed());
        for m in sol.eta.flow() {
            assert_eq!(m.d1(&game.initial).unwrap(), 0.0);
        }
    }

    #[test]
    fn random_start_reaches_the_same_equilibrium() {
        let game = trivial_game();
        let cfg = SolverConfig {
            initialization: Initialization::Random,
            seed: 11,
            execution: Execution::Sequential,
            ..Default::default()
        };
        let sol = solve(&game, &cfg, &BestResponseConfig::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.best_iteration, 1);
        assert_eq!(sol.certificate.trace.len(), 2);
    }

    #[test]
    fn marginal_violation_fails_the_certificate() {
        let game = trivial_game();
        let arcs: Vec<Arc> = game.initial.atoms().map(|(p, _)| Arc::constant(game.grid, p)).collect();
        let eta = ArcMeasure::from_parts(arcs, vec![0.6, 0.5], game.initial.clone()).unwrap();
        let cert = verify(&eta, &game, &BestResponseConfig::default(), 0, 1e-3, Execution::Sequential).unwrap();
        assert!(!cert.marginal_passed);
        assert!(!cert.all_passed());
    }

    #[test]
    fn measure_independent_costs_give_a_dirac_on_the_best_response() {
        let domain = Domain::unit_disc(0.5).unwrap();
        let costs = CostModel::new(
            Shared::new(Quadratic::kinetic()),
            Shared::new(ZeroCoupling),
            Shared::new(SquaredDistance { target: vec![0.4, 0.1], scale: 1.0 }),
        );
        let m0 = SpatialMeasure::dirac(&[-0.2, 0.0]).unwrap();
        let game = Game::new(domain, costs, m0, TimeGrid::new(1.0, 8).unwrap()).unwrap();
        let cfg = SolverConfig { execution: Execution::Sequential, ..Default::default() };
        let sol = solve(&game, &cfg, &BestResponseConfig::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.eta.len(), 1);
        let frozen = game.costs.freeze(&sol.eta.flow(), game.grid, &game.domain, Execution::Sequential).unwrap();
        let once = crate::bestresponse::best_response(
            &[-0.2, 0.0],
            &frozen,
            &game.domain,
            &BestResponseConfig::default(),
            atom_seed(0, 0),
            &[],
        )
        .unwrap();
        assert!(sol.eta.arc(0).sup_distance(&once.arc) < 1e-9);
    }
}
