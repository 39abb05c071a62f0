//! Independent reference computations shared by the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use constrained_mfg::cli::Scenario;
use constrained_mfg::{Domain, SpatialMeasure};
use rand::Rng;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"))
}

pub fn load_scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).expect("bundled scenario parses")
}

/// Random measure with `n` atoms in the disc of radius `r`.
pub fn random_disc_measure<R: Rng>(rng: &mut R, n: usize, r: f64) -> SpatialMeasure {
    let mut atoms = Vec::with_capacity(n);
    for _ in 0..n {
        let p = loop {
            let p = [rng.gen_range(-r..r), rng.gen_range(-r..r)];
            if p[0] * p[0] + p[1] * p[1] <= r * r {
                break p;
            }
        };
        atoms.push((p.to_vec(), rng.gen_range(0.05..1.0)));
    }
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    atoms.iter_mut().for_each(|a| a.1 /= total);
    SpatialMeasure::from_atoms(&atoms).unwrap()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Cost matrix `|x_i - y_j|`.
pub fn distance_matrix(m1: &SpatialMeasure, m2: &SpatialMeasure) -> Vec<Vec<f64>> {
    (0..m1.len()).map(|i| (0..m2.len()).map(|j| dist(m1.point(i), m2.point(j))).collect()).collect()
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Calls `visit` with every spanning tree of the complete bipartite graph
/// on `n` rows and `m` columns, as a list of `(row, col)` cells.
pub fn for_each_spanning_tree<F: FnMut(&[(usize, usize)])>(n: usize, m: usize, mut visit: F) {
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let size = n + m - 1;
    let mut pick: Vec<usize> = (0..size).collect();
    let mut chosen = Vec::with_capacity(size);
    let mut parent = vec![0; n + m];
    loop {
        parent.iter_mut().enumerate().for_each(|(i, p)| *p = i);
        chosen.clear();
        let mut acyclic = true;
        for &c in &pick {
            let (i, j) = cells[c];
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, n + j));
            if ri == rj {
                acyclic = false;
                break;
            }
            parent[ri] = rj;
            chosen.push(cells[c]);
        }
        if acyclic {
            visit(&chosen);
        }
        // Next combination in lexicographic order.
        let total = cells.len();
        let mut k = size;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            if pick[k] < total - size + k {
                break;
            }
            if k == 0 {
                return;
            }
        }
        pick[k] += 1;
        for l in k + 1..size {
            pick[l] = pick[l - 1] + 1;
        }
    }
}

/// Flows on a spanning tree meeting the marginals, by peeling leaves.
fn tree_flows(tree: &[(usize, usize)], a: &[f64], b: &[f64]) -> Vec<f64> {
    let (n, m) = (a.len(), b.len());
    let mut residual: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut degree = vec![0usize; n + m];
    for &(i, j) in tree {
        degree[i] += 1;
        degree[n + j] += 1;
    }
    let mut flow = vec![f64::NAN; tree.len()];
    let mut done = vec![false; tree.len()];
    for _ in 0..tree.len() {
        let e = (0..tree.len())
            .find(|&e| !done[e] && (degree[tree[e].0] == 1 || degree[n + tree[e].1] == 1))
            .expect("a tree always has a leaf");
        let (i, j) = tree[e];
        let (leaf, other) = if degree[i] == 1 { (i, n + j) } else { (n + j, i) };
        flow[e] = residual[leaf];
        residual[other] -= flow[e];
        residual[leaf] = 0.0;
        degree[leaf] -= 1;
        degree[other] -= 1;
        done[e] = true;
    }
    flow
}

/// Minimum transport cost over all vertices of the transport polytope.
pub fn primal_vertex_minimum(a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for_each_spanning_tree(a.len(), b.len(), |tree| {
        let flow = tree_flows(tree, a, b);
        if flow.iter().all(|f| *f >= -1e-12) {
            let c: f64 = tree.iter().zip(&flow).map(|(&(i, j), f)| f * cost[i][j]).sum();
            best = best.min(c);
        }
    });
    best
}

/// Maximum of `sum a_i u_i + sum b_j v_j` over dual basic solutions
/// (`u_i + v_j = c_ij` on a spanning tree, `u_0 = 0`) that are dual feasible.
pub fn dual_vertex_maximum(a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let mut best = f64::NEG_INFINITY;
    for_each_spanning_tree(n, m, |tree| {
        let mut pot = vec![f64::NAN; n + m];
        pot[0] = 0.0;
        let mut changed = true;
        while changed {
            changed = false;
            for &(i, j) in tree {
                if pot[i].is_nan() && !pot[n + j].is_nan() {
                    pot[i] = cost[i][j] - pot[n + j];
                    changed = true;
                } else if !pot[i].is_nan() && pot[n + j].is_nan() {
                    pot[n + j] = cost[i][j] - pot[i];
                    changed = true;
                }
            }
        }
        let feasible = (0..n).all(|i| (0..m).all(|j| pot[i] + pot[n + j] <= cost[i][j] + 1e-12));
        if feasible {
            let v: f64 = a.iter().zip(&pot[..n]).map(|(w, u)| w * u).sum::<f64>()
                + b.iter().zip(&pot[n..]).map(|(w, v)| w * v).sum::<f64>();
            best = best.max(v);
        }
    });
    best
}

/// Minimizer of a unimodal `f` on `[lo, hi]` by golden-section search.
pub fn golden_argmin<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let x1 = hi - r * (hi - lo);
        let x2 = lo + r * (hi - lo);
        if f(x1) < f(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    0.5 * (lo + hi)
}

/// Optimal endpoint coordinate for `a |v|^2` kinetic cost over time `tau` and
/// terminal cost `g |y - z|^2`, by direct scalar minimization.
fn lq_endpoint(x: f64, z: f64, tau: f64, a: f64, g: f64) -> f64 {
    let cost = |y: f64| a * (y - x) * (y - x) / tau + g * (y - z) * (y - z);
    golden_argmin(cost, x.min(z) - 1.0, x.max(z) + 1.0)
}

/// Value of `min int_0^tau a |v|^2 dt + g |y(tau) - z|^2` from `x` without
/// constraints: straight lines are optimal for a fixed endpoint, and the
/// endpoint problem separates across coordinates.
pub fn lq_value(x: &[f64], z: &[f64], tau: f64, a: f64, g: f64) -> (f64, Vec<f64>) {
    let y: Vec<f64> = x.iter().zip(z).map(|(xi, zi)| lq_endpoint(*xi, *zi, tau, a, g)).collect();
    let v =
        x.iter().zip(z).zip(&y).map(|((xi, zi), yi)| a * (yi - xi) * (yi - xi) / tau + g * (yi - zi) * (yi - zi)).sum();
    (v, y)
}

/// Whether the closed segment from `x` to `y` lies in the domain.
pub fn segment_inside(domain: &Domain, x: &[f64], y: &[f64]) -> bool {
    (0..=64).all(|k| {
        let s = k as f64 / 64.0;
        let p: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + s * (b - a)).collect();
        domain.signed_distance(&p).is_ok_and(|b| b <= 0.0)
    })
}
