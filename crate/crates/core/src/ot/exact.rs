//! Exact discrete OT by the transportation simplex.
//!
//! The basis is a spanning tree over `n` row nodes and `m` column nodes with
//! `n + m - 1` basic cells, started from the northwest-corner rule. Entering
//! cells are found by block pricing on reduced costs `c_ij - u_i - v_j`;
//! leaving cells by the ratio test along the tree cycle, taking the last
//! blocking cell met when walking the cycle from its apex in the direction
//! of the entering cell.

use super::{
    check_marginals, marginal_violation, primal_dual_values, CostMatrix, OtError, SolverKind, TransportSolution,
};

pub const DEFAULT_EXACT_MAX_CELLS: usize = 1_000_000;

/// Flows at or below this are treated as outside the support when choosing
/// among optimal dual solutions.
const SUPPORT_THRESHOLD: f64 = 1e-14;

pub fn solve_exact(cost: &CostMatrix, a: &[f64], b: &[f64]) -> Result<TransportSolution, OtError> {
    solve_exact_with_limit(cost, a, b, DEFAULT_EXACT_MAX_CELLS)
}

pub fn solve_exact_with_limit(
    cost: &CostMatrix,
    a: &[f64],
    b: &[f64],
    max_cells: usize,
) -> Result<TransportSolution, OtError> {
    let (n, m) = (cost.n(), cost.m());
    let cells = n * m;
    if cells > max_cells {
        return Err(OtError::SizeExceeded {
            n,
            m,
            cells,
            limit: max_cells,
        });
    }
    check_marginals(cost, a, b)?;

    let mut simplex = Simplex::northwest(cost, a, b);
    let iterations = simplex.run()?;

    let mut plan = vec![0.0f64; cells];
    for k in 0..simplex.arc_row.len() {
        plan[simplex.arc_row[k] * m + simplex.arc_col[k]] = simplex.flow[k].max(0.0);
    }
    let mut f = simplex.pot[..n].to_vec();
    let mut g = simplex.pot[n..].to_vec();
    canonicalize_duals(cost, &plan, &mut f, &mut g);
    let anchor = g[0];
    f.iter_mut().for_each(|x| *x += anchor);
    g.iter_mut().for_each(|x| *x -= anchor);

    let (primal_value, dual_value) = primal_dual_values(cost, &plan, &f, &g, a, b);
    Ok(TransportSolution {
        n,
        m,
        marginal_violation: marginal_violation(&plan, a, b),
        plan,
        f,
        g,
        primal_value,
        dual_value,
        solver: SolverKind::Exact,
        epsilon: 0.0,
        iterations,
    })
}

struct Simplex<'a> {
    cost: &'a CostMatrix,
    n: usize,
    m: usize,
    arc_row: Vec<usize>,
    arc_col: Vec<usize>,
    flow: Vec<f64>,
    /// Basic arcs incident to each node; rows are `0..n`, columns `n..n+m`.
    adj: Vec<Vec<usize>>,
    parent: Vec<usize>,
    parent_arc: Vec<usize>,
    depth: Vec<usize>,
    pot: Vec<f64>,
    queue: Vec<usize>,
}

impl<'a> Simplex<'a> {
    fn northwest(cost: &'a CostMatrix, a: &[f64], b: &[f64]) -> Self {
        let (n, m) = (cost.n(), cost.m());
        let nodes = n + m;
        let mut s = Self {
            cost,
            n,
            m,
            arc_row: Vec::with_capacity(nodes - 1),
            arc_col: Vec::with_capacity(nodes - 1),
            flow: Vec::with_capacity(nodes - 1),
            adj: vec![Vec::new(); nodes],
            parent: vec![usize::MAX; nodes],
            parent_arc: vec![usize::MAX; nodes],
            depth: vec![0; nodes],
            pot: vec![0.0; nodes],
            queue: Vec::with_capacity(nodes),
        };
        let (mut i, mut j) = (0usize, 0usize);
        let (mut ra, mut rb) = (a[0], b[0]);
        loop {
            let q = ra.min(rb).max(0.0);
            s.push_arc(i, j, q);
            ra -= q;
            rb -= q;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if j == m - 1 || (i < n - 1 && ra <= rb) {
                i += 1;
                ra = a[i];
            } else {
                j += 1;
                rb = b[j];
            }
        }
        s.rebuild_tree();
        s
    }

    fn push_arc(&mut self, i: usize, j: usize, flow: f64) {
        let k = self.arc_row.len();
        self.arc_row.push(i);
        self.arc_col.push(j);
        self.flow.push(flow);
        self.adj[i].push(k);
        self.adj[self.n + j].push(k);
    }

    /// Computes parent links, depths and potentials from column 0.
    fn rebuild_tree(&mut self) {
        let root = self.n;
        self.pot[root] = 0.0;
        self.depth[root] = 0;
        self.parent[root] = usize::MAX;
        self.parent_arc[root] = usize::MAX;
        self.propagate_from(root);
        debug_assert_eq!(self.queue.len(), self.n + self.m, "basis is not a spanning tree");
    }

    fn run(&mut self) -> Result<usize, OtError> {
        let total = self.n * self.m;
        let block = ((total as f64).sqrt().ceil() as usize).clamp(1, total);
        // Relative, so that rescaling the costs does not change any pivot.
        let tol = 1e-12 * self.cost.max();
        let cap = 100_000usize.saturating_mul(self.n + self.m);
        let costs = self.cost.costs();
        let mut next = 0usize;
        let mut iterations = 0usize;
        loop {
            let mut best: Option<usize> = None;
            let mut best_r = -tol;
            let mut scanned = 0usize;
            while scanned < total {
                let end = (scanned + block).min(total);
                for _ in scanned..end {
                    let c = next;
                    next += 1;
                    if next == total {
                        next = 0;
                    }
                    let (i, j) = (c / self.m, c % self.m);
                    let r = costs[c] - self.pot[i] - self.pot[self.n + j];
                    if r < best_r {
                        best_r = r;
                        best = Some(c);
                    }
                }
                scanned = end;
                if best.is_some() {
                    break;
                }
            }
            let Some(cell) = best else {
                return Ok(iterations);
            };
            iterations += 1;
            if iterations > cap {
                return Err(OtError::CycleLimit(iterations));
            }
            self.pivot(cell / self.m, cell % self.m);
        }
    }

    fn pivot(&mut self, i: usize, j: usize) {
        let (mut x, mut y) = (i, self.n + j);
        let mut path_i = Vec::new();
        let mut path_j = Vec::new();
        while self.depth[x] > self.depth[y] {
            path_i.push(self.parent_arc[x]);
            x = self.parent[x];
        }
        while self.depth[y] > self.depth[x] {
            path_j.push(self.parent_arc[y]);
            y = self.parent[y];
        }
        while x != y {
            path_i.push(self.parent_arc[x]);
            x = self.parent[x];
            path_j.push(self.parent_arc[y]);
            y = self.parent[y];
        }

        // Along the tree path column j -> row i, cells alternate -, +, -, ...
        let (li, lj) = (path_i.len(), path_j.len());
        let minus_j = |t: usize| t.is_multiple_of(2);
        let minus_i = |s: usize| (lj + li - 1 - s).is_multiple_of(2);

        let mut leave = usize::MAX;
        let mut theta = f64::INFINITY;
        for s in (0..li).rev() {
            if minus_i(s) && self.flow[path_i[s]] <= theta {
                theta = self.flow[path_i[s]];
                leave = path_i[s];
            }
        }
        for (t, &k) in path_j.iter().enumerate() {
            if minus_j(t) && self.flow[k] <= theta {
                theta = self.flow[k];
                leave = k;
            }
        }
        debug_assert!(leave != usize::MAX);

        for (t, &k) in path_j.iter().enumerate() {
            if minus_j(t) {
                self.flow[k] -= theta;
            } else {
                self.flow[k] += theta;
            }
        }
        for (s, &k) in path_i.iter().enumerate() {
            if minus_i(s) {
                self.flow[k] -= theta;
            } else {
                self.flow[k] += theta;
            }
        }

        // Removing the leaving arc cuts off a subtree holding one endpoint of
        // the entering arc; that subtree is re-hung from the other endpoint.
        let (u_in, u_out) = if path_i.contains(&leave) {
            (i, self.n + j)
        } else {
            (self.n + j, i)
        };
        let (old_r, old_c) = (self.arc_row[leave], self.n + self.arc_col[leave]);
        self.adj[old_r].retain(|&k| k != leave);
        self.adj[old_c].retain(|&k| k != leave);
        self.arc_row[leave] = i;
        self.arc_col[leave] = j;
        self.flow[leave] = theta;
        self.adj[i].push(leave);
        self.adj[self.n + j].push(leave);
        self.rehang(u_in, u_out, leave);
    }

    /// Recomputes parent links, depths and potentials of the subtree below
    /// `node`, which now hangs from `parent` through arc `arc`.
    fn rehang(&mut self, node: usize, parent: usize, arc: usize) {
        self.parent[node] = parent;
        self.parent_arc[node] = arc;
        self.depth[node] = self.depth[parent] + 1;
        self.pot[node] = self.cost.at(self.arc_row[arc], self.arc_col[arc]) - self.pot[parent];
        self.propagate_from(node);
    }

    /// Breadth-first pass over the subtree below `top`, whose own links and
    /// potential are already set.
    fn propagate_from(&mut self, top: usize) {
        self.queue.clear();
        self.queue.push(top);
        let mut head = 0;
        while head < self.queue.len() {
            let x = self.queue[head];
            head += 1;
            for idx in 0..self.adj[x].len() {
                let k = self.adj[x][idx];
                if k == self.parent_arc[x] {
                    continue;
                }
                let (r, c) = (self.arc_row[k], self.n + self.arc_col[k]);
                let y = if x == r { c } else { r };
                self.parent[y] = x;
                self.parent_arc[y] = k;
                self.depth[y] = self.depth[x] + 1;
                self.pot[y] = self.cost.at(self.arc_row[k], self.arc_col[k]) - self.pot[x];
                self.queue.push(y);
            }
        }
    }
}

/// Picks a canonical optimal dual when the optimal plan is degenerate.
///
/// Cells carrying flow split the row/column nodes into connected components.
/// Inside a component the potentials are fixed up to one additive offset
/// `l` (rows `+l`, columns `-l`); across components any offsets keeping
/// `f_i + g_j <= c_ij` remain optimal. Offsets are measured from the level
/// where each component's mean row potential is zero, and the result is the
/// componentwise-largest feasible offset vector not exceeding zero, i.e. the
/// optimal dual whose components sit as close to a common level as the
/// constraints allow. A plan whose support is connected is left untouched.
fn canonicalize_duals(cost: &CostMatrix, plan: &[f64], f: &mut [f64], g: &mut [f64]) {
    let (n, m) = (cost.n(), cost.m());
    let mut uf = UnionFind::new(n + m);
    for i in 0..n {
        for j in 0..m {
            if plan[i * m + j] > SUPPORT_THRESHOLD {
                uf.union(i, n + j);
            }
        }
    }
    let mut comp_of_root = vec![usize::MAX; n + m];
    let mut comp = vec![0usize; n + m];
    let mut k = 0usize;
    for (node, c) in comp.iter_mut().enumerate() {
        let r = uf.find(node);
        if comp_of_root[r] == usize::MAX {
            comp_of_root[r] = k;
            k += 1;
        }
        *c = comp_of_root[r];
    }
    if k <= 1 {
        return;
    }

    let mut row_sum = vec![0.0f64; k];
    let mut row_cnt = vec![0usize; k];
    let mut col_sum = vec![0.0f64; k];
    let mut col_cnt = vec![0usize; k];
    for i in 0..n {
        row_sum[comp[i]] += f[i];
        row_cnt[comp[i]] += 1;
    }
    for j in 0..m {
        col_sum[comp[n + j]] += g[j];
        col_cnt[comp[n + j]] += 1;
    }
    let level: Vec<f64> = (0..k)
        .map(|p| {
            if row_cnt[p] > 0 {
                row_sum[p] / row_cnt[p] as f64
            } else {
                -col_sum[p] / col_cnt[p] as f64
            }
        })
        .collect();
    for i in 0..n {
        f[i] -= level[comp[i]];
    }
    for j in 0..m {
        g[j] += level[comp[n + j]];
    }

    // slack[p][q]: the tightest c_ij - f_i - g_j over rows in p, columns in q.
    let mut slack = vec![f64::INFINITY; k * k];
    for i in 0..n {
        let p = comp[i];
        for j in 0..m {
            let q = comp[n + j];
            if p != q {
                let s = cost.at(i, j) - f[i] - g[j];
                let e = &mut slack[p * k + q];
                if s < *e {
                    *e = s;
                }
            }
        }
    }
    // Offsets must satisfy l_p <= l_q + slack[p][q]; Bellman-Ford from 0.
    let mut offset = vec![0.0f64; k];
    for _ in 0..=k {
        let mut changed = false;
        for p in 0..k {
            for q in 0..k {
                let s = slack[p * k + q];
                if s.is_finite() && offset[q] + s < offset[p] {
                    offset[p] = offset[q] + s;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    for i in 0..n {
        f[i] += offset[comp[i]];
    }
    for j in 0..m {
        g[j] -= offset[comp[n + j]];
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(len: usize) -> Self {
        Self {
            parent: (0..len).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}
