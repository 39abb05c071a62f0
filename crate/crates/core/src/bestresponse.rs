//! Individual optimal control against a frozen flow: projected gradient descent
//! over arc nodes with multistart, and the exploitability of an arc measure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arcs::{default_feasibility_tol, Arc};
use crate::costs::FrozenCosts;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::geometry::Domain;
use crate::linalg::{dist, dot, norm};
use crate::measures::ArcMeasure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BestResponseConfig {
    /// Cold starts: the constant arc, a line to a sampled interior point, then
    /// random perturbations of the best arc so far.
    pub multistart_count: usize,
    pub max_iters: usize,
    /// Bound on the node-wise projected gradient divided by the time step.
    pub gradient_tol: f64,
    /// Sufficient decrease constant of the backtracking line search.
    pub armijo: f64,
    /// Step shrink factor per backtrack.
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Perturbation amplitude relative to the domain diameter.
    pub perturbation_scale: f64,
    /// Defaults to `1e-9` times the domain diameter.
    pub feasibility_tol: Option<f64>,
    /// Starts within this of the best value are reported as ties.
    pub tie_tol: f64,
}

impl Default for BestResponseConfig {
    fn default() -> Self {
        Self {
            multistart_count: 4,
            max_iters: 2000,
            gradient_tol: 1e-6,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 50,
            perturbation_scale: 0.1,
            feasibility_tol: None,
            tie_tol: 1e-6,
        }
    }
}

impl BestResponseConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.gradient_tol, self.armijo, self.perturbation_scale, self.tie_tol];
        if self.multistart_count == 0 || self.max_iters == 0 || self.max_backtracks == 0 {
            return Err(Error::InvalidConfig("best-response counts must be positive".into()));
        }
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig("best-response tolerances must be positive".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) || self.armijo >= 1.0 {
            return Err(Error::InvalidConfig("line search parameters must lie in (0, 1)".into()));
        }
        if let Some(t) = self.feasibility_tol {
            if !(t > 0.0) {
                return Err(Error::InvalidConfig("feasibility tolerance must be positive".into()));
            }
        }
        Ok(())
    }

    fn feasibility_tol(&self, domain: &Domain) -> f64 {
        self.feasibility_tol.unwrap_or_else(|| default_feasibility_tol(domain))
    }
}

/// Outcome of one local descent.
#[derive(Debug, Clone)]
pub struct Descent {
    pub coords: Vec<f64>,
    pub value: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BestResponse {
    pub arc: Arc,
    pub value: f64,
    pub stationarity: f64,
    pub converged: bool,
    /// Distinct arcs from other starts whose value is within the tie tolerance.
    pub ties: Vec<Arc>,
    /// Value reached from each start, in start order.
    pub start_values: Vec<f64>,
}

/// Best response on the full grid from `x`.
pub fn best_response(
    x: &[f64],
    costs: &FrozenCosts,
    domain: &Domain,
    cfg: &BestResponseConfig,
    seed: u64,
    warm: &[Arc],
) -> Result<BestResponse> {
    best_response_from(0, x, costs, domain, cfg, seed, warm)
}

/// Best response on `[t_k0, T]` from `x`; the returned arc lives on the tail grid.
pub fn best_response_from(
    k0: usize,
    x: &[f64],
    costs: &FrozenCosts,
    domain: &Domain,
    cfg: &BestResponseConfig,
    seed: u64,
    warm: &[Arc],
) -> Result<BestResponse> {
    let grid = costs.grid().tail(k0)?;
    if x.len() != domain.dim() {
        return Err(Error::DimensionMismatch { expected: domain.dim(), got: x.len() });
    }
    let tol = cfg.feasibility_tol(domain);
    let b = domain.signed_distance(x)?;
    if b > tol {
        return Err(Error::InfeasibleStart(b));
    }
    let dim = x.len();
    let nodes = grid.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut results: Vec<Descent> = Vec::new();
    let run = |start: Vec<f64>, results: &mut Vec<Descent>| {
        results.push(descend(k0, start, dim, costs, domain, cfg));
    };
    run(x.repeat(nodes), &mut results);
    for w in warm {
        if *w.grid() == grid && w.start() == x {
            run(w.coords().to_vec(), &mut results);
        }
    }
    for s in 1..cfg.multistart_count {
        let start = if s == 1 {
            let y = domain.sample_interior(&mut rng);
            line_start(x, &y, nodes, domain)
        } else {
            let best = best_of(&results);
            perturbed_start(&results[best].coords, dim, cfg.perturbation_scale * domain.diameter(), domain, &mut rng)
        };
        if let Some(c) = start {
            run(c, &mut results);
        }
    }

    let best = best_of(&results);
    let top = &results[best];
    let arc = Arc::new(grid, dim, top.coords.clone())?;
    let scale = domain.diameter();
    let mut ties: Vec<Arc> = Vec::new();
    for (i, r) in results.iter().enumerate() {
        if i == best || r.value > top.value + cfg.tie_tol {
            continue;
        }
        let cand = Arc::new(grid, dim, r.coords.clone())?;
        let distinct =
            cand.sup_distance(&arc) > 1e-6 * scale && ties.iter().all(|t| cand.sup_distance(t) > 1e-6 * scale);
        if distinct {
            ties.push(cand);
        }
    }
    Ok(BestResponse {
        arc,
        value: top.value,
        stationarity: top.stationarity,
        converged: top.converged,
        ties,
        start_values: results.iter().map(|r| r.value).collect(),
    })
}

fn best_of(results: &[Descent]) -> usize {
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.value < results[best].value {
            best = i;
        }
    }
    best
}

pub(crate) fn line_start(x: &[f64], y: &[f64], nodes: usize, domain: &Domain) -> Option<Vec<f64>> {
    let mut c = Vec::with_capacity(x.len() * nodes);
    for k in 0..nodes {
        let s = k as f64 / (nodes - 1) as f64;
        let p: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + s * (b - a)).collect();
        if k == 0 {
            c.extend_from_slice(x);
        } else {
            c.extend(domain.project_to_closure(&p).ok()?);
        }
    }
    Some(c)
}

/// Smooth random bump added to `base`, vanishing at the first node.
fn perturbed_start<R: Rng + ?Sized>(
    base: &[f64],
    dim: usize,
    amplitude: f64,
    domain: &Domain,
    rng: &mut R,
) -> Option<Vec<f64>> {
    let nodes = base.len() / dim;
    let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut amp = amplitude.min(0.45 * domain.tube_radius());
    for _ in 0..6 {
        let mut c = base[..dim].to_vec();
        let mut ok = true;
        for k in 1..nodes {
            let s = k as f64 / (nodes - 1) as f64;
            let (w1, w2) = (s, (std::f64::consts::PI * s).sin());
            let p: Vec<f64> = (0..dim).map(|d| base[k * dim + d] + amp * (w1 * a[d] + w2 * b[d])).collect();
            match domain.project_to_closure(&p) {
                Ok(q) => c.extend(q),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Some(c);
        }
        amp *= 0.5;
    }
    None
}

/// Node-wise residual of the first-order conditions, divided by the time step:
/// at boundary nodes the inward component, blocked by the constraint, is dropped.
fn stationarity(coords: &[f64], grad: &[f64], dim: usize, dt: f64, domain: &Domain) -> f64 {
    let active = 1e-8 * domain.diameter();
    let nodes = coords.len() / dim;
    let mut worst: f64 = 0.0;
    for k in 1..nodes {
        let x = &coords[k * dim..(k + 1) * dim];
        let g = &grad[k * dim..(k + 1) * dim];
        let mut r = g.to_vec();
        if domain.signed_distance_unchecked(x) > -active {
            let n = domain.gradient_unchecked(x);
            let gn = dot(g, &n);
            if gn < 0.0 {
                r.iter_mut().zip(&n).for_each(|(ri, ni)| *ri -= gn * ni);
            }
        }
        worst = worst.max(norm(&r));
    }
    worst / dt
}

/// Projected gradient descent from `start` with Barzilai-Borwein steps and
/// backtracking; the first node stays fixed and every trial point is
/// projected node by node onto the closure.
pub fn descend(
    k0: usize,
    start: Vec<f64>,
    dim: usize,
    costs: &FrozenCosts,
    domain: &Domain,
    cfg: &BestResponseConfig,
) -> Descent {
    let dt = costs.grid().dt();
    let max_move = 0.5 * domain.tube_radius();
    let n = start.len();
    let mut z = start;
    let mut g = vec![0.0; n];
    let mut f = costs.evaluate(k0, &z, dim, Some(&mut g));
    g[..dim].iter_mut().for_each(|v| *v = 0.0);
    let mut history = vec![f];
    let mut stat = stationarity(&z, &g, dim, dt, domain);
    // Plain and kinetic-preconditioned step lengths; the preconditioned
    // direction is exact Newton for a quadratic kinetic energy.
    let mut step = 0.25 * dt;
    let mut pstep = 1.0;
    let mut trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut scratch = vec![0.0; n / dim];
    let mut iterations = 0;
    let mut p = vec![0.0; dim];

    while stat > cfg.gradient_tol && iterations < cfg.max_iters {
        iterations += 1;
        let mut accepted = false;
        let mut ft = f;
        for preconditioned in [true, false] {
            if preconditioned {
                kinetic_solve(&g, dim, dt, &mut dir, &mut scratch);
            } else {
                dir.copy_from_slice(&g);
            }
            let dmax = (1..n / dim).map(|k| norm(&dir[k * dim..(k + 1) * dim])).fold(0.0, f64::max);
            if dmax == 0.0 {
                break;
            }
            let mut alpha = if preconditioned { pstep } else { step }.min(max_move / dmax);
            for _ in 0..cfg.max_backtracks {
                trial[..dim].copy_from_slice(&z[..dim]);
                let mut ok = true;
                for k in 1..n / dim {
                    for d in 0..dim {
                        p[d] = z[k * dim + d] - alpha * dir[k * dim + d];
                    }
                    match domain.project_to_closure(&p) {
                        Ok(q) => trial[k * dim..(k + 1) * dim].copy_from_slice(&q),
                        Err(_) => {
                            ok = false;
                            break;
                        }
                    }
                }
                let decrease: f64 = g.iter().zip(trial.iter().zip(&z)).map(|(gi, (t, zi))| gi * (t - zi)).sum();
                if ok && decrease < 0.0 {
                    ft = costs.evaluate(k0, &trial, dim, Some(&mut g_trial));
                    if ft.is_finite() && ft <= f + cfg.armijo * decrease {
                        accepted = true;
                        break;
                    }
                }
                alpha *= cfg.backtrack;
            }
            if accepted {
                g_trial[..dim].iter_mut().for_each(|v| *v = 0.0);
                // Barzilai-Borwein steps from the accepted displacement, in the
                // Euclidean and the kinetic metric.
                let (mut ss, mut sy, mut shs) = (0.0, 0.0, 0.0);
                for k in 1..n / dim {
                    for d in 0..dim {
                        let i = k * dim + d;
                        let s = trial[i] - z[i];
                        let prev = if k == 1 { 0.0 } else { trial[i - dim] - z[i - dim] };
                        ss += s * s;
                        sy += s * (g_trial[i] - g[i]);
                        shs += (s - prev) * (s - prev) / dt;
                    }
                }
                if sy > 0.0 {
                    step = (ss / sy).clamp(1e-12 * dt, 1e6 * dt);
                    pstep = (shs / sy).clamp(1e-12, 1e6);
                } else {
                    step *= 2.0;
                    pstep *= 2.0;
                }
                std::mem::swap(&mut z, &mut trial);
                std::mem::swap(&mut g, &mut g_trial);
                f = ft;
                history.push(f);
                break;
            }
        }
        stat = stationarity(&z, &g, dim, dt, domain);
        if !accepted {
            break;
        }
    }
    Descent { converged: stat <= cfg.gradient_tol, coords: z, value: f, stationarity: stat, iterations, history }
}

/// `dir = dt T^{-1} g` per coordinate, where `T` is the stiffness matrix of
/// `sum |x_{k+1} - x_k|^2` with node 0 fixed (Thomas algorithm).
fn kinetic_solve(g: &[f64], dim: usize, dt: f64, dir: &mut [f64], c: &mut [f64]) {
    let m = g.len() / dim - 1;
    dir[..dim].iter_mut().for_each(|v| *v = 0.0);
    if m == 0 {
        return;
    }
    for d in 0..dim {
        let at = |k: usize| k * dim + d;
        // Forward sweep; `c` holds the modified superdiagonal.
        let mut prev_c = 0.0;
        let mut prev_y = 0.0;
        for k in 1..=m {
            let diag = if k == m { 1.0 } else { 2.0 };
            let denom = diag + prev_c;
            let y = (dt * g[at(k)] + prev_y) / denom;
            c[k] = -1.0 / denom;
            dir[at(k)] = y;
            prev_c = c[k];
            prev_y = y;
        }
        for k in (1..m).rev() {
            dir[at(k)] -= c[k] * dir[at(k + 1)];
        }
    }
}

/// Per-atom contribution to the exploitability.
#[derive(Debug, Clone, Serialize)]
pub struct AtomGap {
    pub start: Vec<f64>,
    pub mass: f64,
    /// Mass-weighted average cost of the support arcs from this atom.
    pub support_cost: f64,
    pub best_value: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Exploitability {
    pub value: f64,
    pub atoms: Vec<AtomGap>,
    pub all_converged: bool,
}

/// RNG seed of the best-response solve for initial atom `atom`.
pub fn atom_seed(seed: u64, atom: usize) -> u64 {
    seed ^ (atom as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Best responses for every initial atom against the flow of `eta`, warm
/// started from the support arcs and from `extra_warm[atom]` when given.
pub fn best_responses(
    eta: &ArcMeasure,
    costs: &FrozenCosts,
    domain: &Domain,
    cfg: &BestResponseConfig,
    seed: u64,
    extra_warm: &[Vec<Arc>],
    exec: Execution,
) -> Result<Vec<BestResponse>> {
    let parts = eta.disintegrate()?;
    let out = map_indexed(exec, parts.len(), |a| {
        let part = &parts[a];
        // The cheapest support arc as a warm start keeps every gap nonnegative.
        let mut warm: Vec<Arc> = Vec::new();
        let mut best: Option<(f64, &Arc)> = None;
        for arc in &part.arcs {
            let c = costs.cost(arc).unwrap_or(f64::INFINITY);
            if best.is_none_or(|(b, _)| c < b) {
                best = Some((c, arc));
            }
        }
        if let Some((_, arc)) = best {
            warm.push(arc.clone());
        }
        if let Some(extra) = extra_warm.get(a) {
            warm.extend(extra.iter().cloned());
        }
        best_response(&part.start, costs, domain, cfg, atom_seed(seed, a), &warm)
    });
    out.into_iter().collect()
}

/// `sum_i w_i (J[gamma_i] - V(gamma_i(0)))` for precomputed best responses.
pub fn exploitability_with(
    eta: &ArcMeasure,
    costs: &FrozenCosts,
    responses: &[BestResponse],
) -> Result<Exploitability> {
    let parts = eta.disintegrate()?;
    if parts.len() != responses.len() {
        return Err(Error::ShapeMismatch("one best response per initial atom expected".into()));
    }
    let mut atoms = Vec::with_capacity(parts.len());
    let mut total = 0.0;
    for (part, br) in parts.iter().zip(responses) {
        let mut support = 0.0;
        for (arc, w) in part.arcs.iter().zip(&part.weights) {
            support += w * costs.cost(arc)?;
        }
        total += part.mass * (support - br.value);
        atoms.push(AtomGap {
            start: part.start.clone(),
            mass: part.mass,
            support_cost: support,
            best_value: br.value,
            converged: br.converged,
        });
    }
    Ok(Exploitability { value: total, all_converged: atoms.iter().all(|a| a.converged), atoms })
}

/// Exploitability of `eta` against its own flow.
pub fn exploitability(
    eta: &ArcMeasure,
    costs: &FrozenCosts,
    domain: &Domain,
    cfg: &BestResponseConfig,
    seed: u64,
    exec: Execution,
) -> Result<Exploitability> {
    let responses = best_responses(eta, costs, domain, cfg, seed, &[], exec)?;
    exploitability_with(eta, costs, &responses)
}

/// Whether two arcs coincide node by node within `tol`.
pub fn same_path(a: &Arc, b: &Arc, tol: f64) -> bool {
    a.num_nodes() == b.num_nodes() && (0..a.num_nodes()).all(|k| dist(a.node(k), b.node(k)) <= tol)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc as Shared;

    use super::*;
    use crate::arcs::TimeGrid;
    use crate::costs::{CostModel, Quadratic, SquaredDistance, ZeroCoupling};
    use crate::measures::SpatialMeasure;

    #[test]
    fn kinetic_solve_inverts_stiffness() {
        let dim = 2;
        let g: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 - 1.5).collect();
        let mut dir = vec![0.0; 12];
        let mut c = vec![0.0; 6];
        kinetic_solve(&g, dim, 0.1, &mut dir, &mut c);
        let m = 5;
        for d in 0..dim {
            for k in 1..=m {
                let x = |j: usize| if j == 0 { 0.0 } else { dir[j * dim + d] };
                let mut r = -x(k - 1) + if k == m { x(k) } else { 2.0 * x(k) - x(k + 1) };
                r -= 0.1 * g[k * dim + d];
                assert!(r.abs() < 1e-12, "row {k}: {r}");
            }
        }
    }

    fn setup(target: Vec<f64>, steps: usize) -> (Domain, FrozenCosts) {
        let d = Domain::unit_disc(0.5).unwrap();
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let model = CostModel::new(
            Shared::new(Quadratic::kinetic()),
            Shared::new(ZeroCoupling),
            Shared::new(SquaredDistance { target, scale: 1.0 }),
        );
        let flow = vec![SpatialMeasure::dirac(&[0.0, 0.0]).unwrap(); steps + 1];
        let frozen = model.freeze(&flow, grid, &d, Execution::Sequential).unwrap();
        (d, frozen)
    }

    #[test]
    fn zero_costs_keep_agent_still() {
        let d = Domain::unit_disc(0.5).unwrap();
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let model =
            CostModel::new(Shared::new(Quadratic::new(1.0)), Shared::new(ZeroCoupling), Shared::new(ZeroCoupling));
        let flow = vec![SpatialMeasure::dirac(&[0.0, 0.0]).unwrap(); 9];
        let frozen = model.freeze(&flow, grid, &d, Execution::Sequential).unwrap();
        let br = best_response(&[0.2, 0.3], &frozen, &d, &BestResponseConfig::default(), 1, &[]).unwrap();
        assert_eq!(br.value, 0.0);
        assert_eq!(br.arc, Arc::constant(grid, &[0.2, 0.3]));
    }

    #[test]
    fn quadratic_target_gives_straight_line() {
        // Minimizing |y - x|^2 / 2 + |y - z|^2 over endpoints y gives y = x + 2(z - x)/3.
        let z = vec![0.3, -0.2];
        let (d, frozen) = setup(z.clone(), 16);
        let x = [-0.3, 0.1];
        let br = best_response(&x, &frozen, &d, &BestResponseConfig::default(), 7, &[]).unwrap();
        assert!(br.converged);
        let expected = dist(&x, &z).powi(2) / 3.0;
        assert!((br.value - expected).abs() < 1e-9, "{} vs {}", br.value, expected);
        assert!(br.start_values.iter().all(|v| *v >= br.value));
    }

    #[test]
    fn target_outside_ends_on_boundary() {
        let (d, frozen) = setup(vec![2.0, 0.0], 8);
        let br = best_response(&[0.0, 0.0], &frozen, &d, &BestResponseConfig::default(), 3, &[]).unwrap();
        assert!(br.converged);
        let end = br.arc.end();
        assert!((norm(end) - 1.0).abs() < 1e-9);
        assert!(br.arc.max_violation(&d) <= 1e-9);
    }

    #[test]
    fn descent_is_monotone() {
        let (d, frozen) = setup(vec![0.5, 0.5], 10);
        let start: Vec<f64> = [0.0, 0.0].repeat(11);
        let out = descend(0, start, 2, &frozen, &d, &BestResponseConfig::default());
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let (d, frozen) = setup(vec![0.0, 0.0], 4);
        let r = best_response(&[1.1, 0.0], &frozen, &d, &BestResponseConfig::default(), 0, &[]);
        assert!(matches!(r, Err(Error::InfeasibleStart(_))));
    }
}
