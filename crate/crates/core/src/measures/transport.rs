//! Exact discrete optimal transport by the transportation network simplex.
//!
//! The basis is a spanning tree of the bipartite source/target graph with
//! `n + m - 1` cells. Entering cells are chosen by block pricing; after a run of
//! degenerate pivots the rule falls back to Bland's (lowest index entering,
//! lowest index leaving), which cannot cycle.

use crate::error::{Error, Result};

/// Optimal coupling between two finite weight vectors.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub sources: usize,
    pub targets: usize,
    /// Basic cells `(i, j, mass)`; every other cell carries zero mass.
    pub entries: Vec<(usize, usize, f64)>,
    pub cost: f64,
    pub row_potentials: Vec<f64>,
    pub col_potentials: Vec<f64>,
    pub pivots: usize,
}

impl TransportPlan {
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.targets]; self.sources];
        for &(i, j, f) in &self.entries {
            out[i][j] += f;
        }
        out
    }

    /// Largest violation of the row and column marginals.
    pub fn marginal_error(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut rows = vec![0.0; self.sources];
        let mut cols = vec![0.0; self.targets];
        for &(i, j, f) in &self.entries {
            rows[i] += f;
            cols[j] += f;
        }
        rows.iter().zip(a).chain(cols.iter().zip(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}

/// Basis tree rooted at row 0; rows are nodes `0..n`, columns `n..n+m`.
struct Tree {
    n: usize,
    cells: Vec<(usize, usize)>,
    flow: Vec<f64>,
    adj: Vec<Vec<usize>>,
    parent: Vec<usize>,
    /// Basis slot joining a node to its parent.
    up: Vec<usize>,
    depth: Vec<usize>,
    /// Row potentials followed by column potentials.
    pot: Vec<f64>,
}

impl Tree {
    fn other(&self, slot: usize, node: usize) -> usize {
        let (i, j) = self.cells[slot];
        if node < self.n {
            self.n + j
        } else {
            i
        }
    }

    fn detach(&mut self, slot: usize) {
        let (i, j) = self.cells[slot];
        let n = self.n;
        self.adj[i].retain(|&s| s != slot);
        self.adj[n + j].retain(|&s| s != slot);
    }

    fn attach(&mut self, slot: usize) {
        let (i, j) = self.cells[slot];
        let n = self.n;
        self.adj[i].push(slot);
        self.adj[n + j].push(slot);
    }

    /// Re-hangs the component containing `root` below `parent` via `slot`,
    /// refreshing depths and potentials inside it.
    fn hang<C: Fn(usize, usize) -> f64>(
        &mut self,
        root: usize,
        parent: usize,
        slot: usize,
        cost: &C,
        stack: &mut Vec<usize>,
    ) {
        self.parent[root] = parent;
        self.up[root] = slot;
        stack.clear();
        stack.push(root);
        while let Some(node) = stack.pop() {
            let p = self.parent[node];
            let s = self.up[node];
            if p == usize::MAX {
                self.depth[node] = 0;
                self.pot[node] = 0.0;
            } else {
                self.depth[node] = self.depth[p] + 1;
                let (i, j) = self.cells[s];
                self.pot[node] = cost(i, j) - self.pot[p];
            }
            for k in 0..self.adj[node].len() {
                let s = self.adj[node][k];
                let child = self.other(s, node);
                if child != p {
                    self.parent[child] = node;
                    self.up[child] = s;
                    stack.push(child);
                }
            }
        }
    }
}

/// Solves `min sum c_ij x_ij` over couplings of `a` and `b`; `cost(i, j)` is
/// evaluated on demand. The target weights are rescaled to the source total.
pub fn solve<C>(a: &[f64], b: &[f64], cost: C) -> Result<TransportPlan>
where
    C: Fn(usize, usize) -> f64,
{
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(Error::EmptyMeasure);
    }
    if a.iter().chain(b).any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidMeasure("weights must be finite and nonnegative".into()));
    }
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    if !(sa > 0.0 && sb > 0.0) {
        return Err(Error::InvalidMeasure("zero total mass".into()));
    }
    let b: Vec<f64> = b.iter().map(|w| w * sa / sb).collect();

    // North-west corner start: always a spanning tree with n + m - 1 cells.
    let mut tree = Tree {
        n,
        cells: Vec::with_capacity(n + m - 1),
        flow: Vec::with_capacity(n + m - 1),
        adj: vec![Vec::new(); n + m],
        parent: vec![usize::MAX; n + m],
        up: vec![usize::MAX; n + m],
        depth: vec![0; n + m],
        pot: vec![0.0; n + m],
    };
    let (mut ra, mut rb) = (a.to_vec(), b.clone());
    let (mut i, mut j) = (0, 0);
    loop {
        let x = ra[i].min(rb[j]);
        ra[i] -= x;
        rb[j] -= x;
        tree.cells.push((i, j));
        tree.flow.push(x);
        tree.attach(tree.cells.len() - 1);
        if i == n - 1 && j == m - 1 {
            break;
        }
        if i == n - 1 {
            j += 1;
        } else if j == m - 1 || ra[i] <= 0.0 {
            i += 1;
        } else {
            j += 1;
        }
    }
    let mut stack = Vec::with_capacity(n + m);
    tree.hang(0, usize::MAX, usize::MAX, &cost, &mut stack);

    let max_cost = (0..n.min(64))
        .flat_map(|i| (0..m.min(64)).map(move |j| (i, j)))
        .map(|(i, j)| cost(i, j).abs())
        .fold(0.0, f64::max);
    let eps = 1e-13 * (1.0 + max_cost);

    let total = n * m;
    let block = ((total as f64).sqrt().ceil() as usize).max(32).min(total);
    let mut cursor = 0usize;
    let mut pivots = 0usize;
    let mut degenerate_run = 0usize;
    let max_pivots = 200 * (n + m) * (n + m).max(10);
    let mut from_col = Vec::new();
    let mut from_row = Vec::new();

    loop {
        let (u, v) = tree.pot.split_at(n);
        let use_bland = degenerate_run > 4 * (n + m);
        let entering = if use_bland {
            (0..total).find_map(|c| {
                let (i, j) = (c / m, c % m);
                let rc = cost(i, j) - u[i] - v[j];
                (rc < -eps).then_some((i, j))
            })
        } else {
            block_search(n, m, &cost, u, v, eps, block, &mut cursor)
        };
        let Some((ei, ej)) = entering else { break };
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::InvalidMeasure("transport simplex did not terminate".into()));
        }

        // Tree path from column ej up to the common ancestor and down to row ei;
        // with the entering cell it closes a cycle. Signs alternate from -theta.
        from_col.clear();
        from_row.clear();
        let (mut x, mut y) = (n + ej, ei);
        while x != y {
            if tree.depth[x] >= tree.depth[y] {
                from_col.push(x);
                x = tree.parent[x];
            } else {
                from_row.push(y);
                y = tree.parent[y];
            }
        }
        let path_len = from_col.len() + from_row.len();
        let node_at = |pos: usize| {
            if pos < from_col.len() {
                from_col[pos]
            } else {
                from_row[path_len - 1 - pos]
            }
        };
        let mut theta = f64::INFINITY;
        let mut leave_pos = usize::MAX;
        for pos in (0..path_len).step_by(2) {
            let slot = tree.up[node_at(pos)];
            let f = tree.flow[slot];
            let better =
                f < theta || (use_bland && f == theta && tree.cells[slot] < tree.cells[tree.up[node_at(leave_pos)]]);
            if better {
                theta = f;
                leave_pos = pos;
            }
        }
        let theta = theta.max(0.0);
        if theta <= 0.0 {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
        for pos in 0..path_len {
            let slot = tree.up[node_at(pos)];
            if pos % 2 == 0 {
                tree.flow[slot] -= theta;
            } else {
                tree.flow[slot] += theta;
            }
        }
        // The leaving edge hangs below `child`; the endpoint of the entering
        // cell on that side becomes the new root of the detached subtree.
        let child = node_at(leave_pos);
        let leave = tree.up[child];
        let (sub_root, anchor) = if leave_pos < from_col.len() { (n + ej, ei) } else { (ei, n + ej) };
        tree.detach(leave);
        tree.cells[leave] = (ei, ej);
        tree.flow[leave] = theta;
        tree.hang(sub_root, anchor, leave, &cost, &mut stack);
        tree.attach(leave);
    }

    let (u, v) = tree.pot.split_at(n);
    let mut entries = Vec::with_capacity(tree.cells.len());
    let mut total_cost = 0.0;
    for (slot, &(i, j)) in tree.cells.iter().enumerate() {
        let f = tree.flow[slot].max(0.0);
        if f > 0.0 {
            total_cost += f * cost(i, j);
            entries.push((i, j, f));
        }
    }
    Ok(TransportPlan {
        sources: n,
        targets: m,
        entries,
        cost: total_cost,
        row_potentials: u.to_vec(),
        col_potentials: v.to_vec(),
        pivots,
    })
}

#[allow(clippy::too_many_arguments)]
fn block_search<C: Fn(usize, usize) -> f64>(
    n: usize,
    m: usize,
    cost: &C,
    u: &[f64],
    v: &[f64],
    eps: f64,
    block: usize,
    cursor: &mut usize,
) -> Option<(usize, usize)> {
    let total = n * m;
    let mut best: Option<(f64, usize)> = None;
    let mut scanned = 0;
    let mut in_block = 0;
    while scanned < total {
        let c = *cursor;
        *cursor = (*cursor + 1) % total;
        scanned += 1;
        in_block += 1;
        let (i, j) = (c / m, c % m);
        let rc = cost(i, j) - u[i] - v[j];
        if rc < -eps && best.is_none_or(|(b, _)| rc < b) {
            best = Some((rc, c));
        }
        if in_block >= block {
            if best.is_some() {
                break;
            }
            in_block = 0;
        }
    }
    best.map(|(_, c)| (c / m, c % m))
}
