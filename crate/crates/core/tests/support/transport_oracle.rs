//! Brute-force transport oracles, independent of the simplex solver.
//!
//! `integral_min_cost` handles marginals that are integer multiples of a
//! common unit. It sweeps the rows, keeping for every vector of remaining
//! column capacities the cheapest way to reach it, so every integral plan is
//! covered. The polytope's vertices are integral, hence the minimum over
//! integral plans is the LP optimum.
//!
//! `basis_min_cost` enumerates the vertices themselves: it tries every set of
//! `n + m - 1` cells, keeping those forming a spanning tree whose forced
//! flows are nonnegative (the basic feasible solutions). Only for small
//! `n * m`.

#![allow(dead_code)]

use std::collections::HashMap;

/// Minimum of `Σ x_ij c_ij / unit_total` over nonnegative integral `x` with
/// row sums `rows` and column sums `cols`.
pub fn integral_min_cost(costs: &[f64], n: usize, m: usize, rows: &[u64], cols: &[u64]) -> f64 {
    assert_eq!(rows.iter().sum::<u64>(), cols.iter().sum::<u64>());
    let mut layer: HashMap<Vec<u64>, f64> = HashMap::from([(cols.to_vec(), 0.0)]);
    for i in 0..n {
        let mut next: HashMap<Vec<u64>, f64> = HashMap::with_capacity(layer.len());
        for (caps, base) in &layer {
            let mut caps = caps.clone();
            spread(&costs[i * m..(i + 1) * m], &mut caps, 0, rows[i], *base, &mut next);
        }
        layer = next;
    }
    let total = rows.iter().sum::<u64>() as f64;
    layer.get(&vec![0; m]).copied().unwrap_or(f64::INFINITY) / total
}

/// Every way to place `rem` units of one row into columns `j..`.
fn spread(row: &[f64], caps: &mut Vec<u64>, j: usize, rem: u64, cost: f64, out: &mut HashMap<Vec<u64>, f64>) {
    if rem == 0 {
        let slot = out.entry(caps.clone()).or_insert(f64::INFINITY);
        *slot = slot.min(cost);
        return;
    }
    if j == row.len() {
        return;
    }
    for x in 0..=caps[j].min(rem) {
        caps[j] -= x;
        spread(row, caps, j + 1, rem - x, cost + x as f64 * row[j], out);
        caps[j] += x;
    }
}

fn find(uf: &[usize], mut x: usize) -> usize {
    while uf[x] != x {
        x = uf[x];
    }
    x
}

/// Number of `(n + m - 1)`-subsets `basis_min_cost` would try.
pub fn basis_count(n: usize, m: usize) -> u128 {
    let (cells, size) = ((n * m) as u128, (n + m - 1) as u128);
    (0..size).fold(1u128, |acc, k| acc * (cells - k) / (k + 1))
}

/// Smallest cost over all basic feasible solutions, by trying every
/// `(n + m - 1)`-subset of cells. Only for small `n * m`.
pub fn basis_min_cost(costs: &[f64], n: usize, m: usize, a: &[f64], b: &[f64]) -> f64 {
    let cells = n * m;
    let size = n + m - 1;
    let mut best = f64::INFINITY;
    let mut pick: Vec<usize> = (0..size).collect();
    loop {
        if let Some(c) = tree_cost(costs, n, m, a, b, &pick) {
            best = best.min(c);
        }
        // Next combination in lexicographic order.
        let mut k = size;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            if pick[k] < cells - size + k {
                break;
            }
        }
        pick[k] += 1;
        for t in k + 1..size {
            pick[t] = pick[t - 1] + 1;
        }
    }
}

fn tree_cost(costs: &[f64], n: usize, m: usize, a: &[f64], b: &[f64], pick: &[usize]) -> Option<f64> {
    let mut uf: Vec<usize> = (0..n + m).collect();
    for &c in pick {
        let (x, y) = (find(&uf, c / m), find(&uf, n + c % m));
        if x == y {
            return None;
        }
        uf[x] = y;
    }
    // A spanning tree: peel leaves, each leaf's edge carries its remaining supply.
    let mut supply: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut degree = vec![0usize; n + m];
    for &c in pick {
        degree[c / m] += 1;
        degree[n + c % m] += 1;
    }
    let mut alive = vec![true; pick.len()];
    let mut cost = 0.0;
    for _ in 0..pick.len() {
        let (e, leaf) = pick.iter().enumerate().filter(|(e, _)| alive[*e]).find_map(|(e, &c)| {
            let (r, col) = (c / m, n + c % m);
            if degree[r] == 1 {
                Some((e, r))
            } else if degree[col] == 1 {
                Some((e, col))
            } else {
                None
            }
        })?;
        let c = pick[e];
        let (r, col) = (c / m, n + c % m);
        let other = if leaf == r { col } else { r };
        let flow = supply[leaf];
        if flow < -1e-12 {
            return None;
        }
        cost += flow * costs[c];
        supply[other] -= flow;
        supply[leaf] = 0.0;
        degree[r] -= 1;
        degree[col] -= 1;
        alive[e] = false;
    }
    Some(cost)
}

pub fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Integer marginals for uniform weights: `L/n` per row and `L/m` per
/// column with `L = lcm(n, m)`.
pub fn uniform_units(n: usize, m: usize) -> (Vec<u64>, Vec<u64>) {
    let l = (n * m) as u64 / gcd(n as u64, m as u64);
    (vec![l / n as u64; n], vec![l / m as u64; m])
}
