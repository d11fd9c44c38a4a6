//! Exact discrete optimal transport for small instances, by the
//! transportation simplex (MODI potentials on a spanning-tree basis).

use std::collections::VecDeque;

use ndarray::Array2;

use super::{check_shapes, CostMatrix, Histogram, TransportPlan};
use crate::error::{Error, Result};

/// Largest support size accepted on either side.
pub const EXACT_SIZE_LIMIT: usize = 64;

/// Pivots with Dantzig's rule before falling back to Bland's rule.
const DANTZIG_PIVOTS: usize = 5000;
const MAX_PIVOTS: usize = 200_000;

/// Minimum-cost coupling of `a` and `b` under `m`, at a vertex of the
/// transport polytope. Zero-weight bins are excluded from the basis.
pub fn exact_ot(a: &Histogram, b: &Histogram, m: &CostMatrix) -> Result<TransportPlan> {
    check_shapes(a, b, m)?;
    let (n, mm) = m.shape();
    if n > EXACT_SIZE_LIMIT || mm > EXACT_SIZE_LIMIT {
        return Err(Error::OracleSizeLimit {
            n,
            m: mm,
            limit: EXACT_SIZE_LIMIT,
        });
    }
    let rows: Vec<usize> = (0..n).filter(|&i| a.as_slice()[i] > 0.0).collect();
    let cols: Vec<usize> = (0..mm).filter(|&j| b.as_slice()[j] > 0.0).collect();
    let supply: Vec<f64> = rows.iter().map(|&i| a.as_slice()[i]).collect();
    let ratio = supply.iter().sum::<f64>() / cols.iter().map(|&j| b.as_slice()[j]).sum::<f64>();
    let demand: Vec<f64> = cols.iter().map(|&j| b.as_slice()[j] * ratio).collect();
    let cost = Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| m.costs()[[rows[i], cols[j]]]);

    let flow = Simplex::solve(&cost, &supply, &demand)?;
    let mut coupling = Array2::zeros((n, mm));
    for ((i, j), x) in flow.indexed_iter() {
        coupling[[rows[i], cols[j]]] = *x;
    }
    Ok(TransportPlan::from_coupling(coupling, m.costs()))
}

struct Simplex<'a> {
    cost: &'a Array2<f64>,
    flow: Array2<f64>,
    basic: Array2<bool>,
    /// Basis cells; always `n + m - 1` of them, some possibly at zero flow.
    basis: Vec<(usize, usize)>,
}

impl<'a> Simplex<'a> {
    fn solve(cost: &'a Array2<f64>, supply: &[f64], demand: &[f64]) -> Result<Array2<f64>> {
        let mut s = Self::northwest(cost, supply, demand);
        let scale = cost.iter().copied().fold(1.0, f64::max);
        let eps = 1e-12 * scale;
        for pivot in 0..MAX_PIVOTS {
            let (u, v) = s.potentials();
            let Some(enter) = s.entering(&u, &v, eps, pivot >= DANTZIG_PIVOTS) else {
                return Ok(s.flow);
            };
            s.pivot(enter);
        }
        Err(Error::NumericalOverflow("transportation simplex did not terminate".into()))
    }

    fn northwest(cost: &'a Array2<f64>, supply: &[f64], demand: &[f64]) -> Self {
        let (n, m) = cost.dim();
        let mut flow = Array2::zeros((n, m));
        let mut basic = Array2::from_elem((n, m), false);
        let mut basis = Vec::with_capacity(n + m - 1);
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let x = s[i].min(d[j]).max(0.0);
            flow[[i, j]] = x;
            basic[[i, j]] = true;
            basis.push((i, j));
            s[i] -= x;
            d[j] -= x;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if i == n - 1 {
                j += 1;
            } else if j == m - 1 || s[i] <= d[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        // Put any floating-point leftover on the last cell.
        flow[[n - 1, m - 1]] += s[n - 1].max(0.0);
        Self {
            cost,
            flow,
            basic,
            basis,
        }
    }

    /// Dual potentials with `u[0] = 0`, from `u_i + v_j = c_ij` on the basis.
    fn potentials(&self) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = self.cost.dim();
        let mut u = vec![f64::NAN; n];
        let mut v = vec![f64::NAN; m];
        let adj = self.adjacency();
        u[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(node) = queue.pop_front() {
            for &(next, (i, j)) in &adj[node] {
                if next < n {
                    if u[next].is_nan() {
                        u[next] = self.cost[[i, j]] - v[j];
                        queue.push_back(next);
                    }
                } else if v[next - n].is_nan() {
                    v[next - n] = self.cost[[i, j]] - u[i];
                    queue.push_back(next);
                }
            }
        }
        (u, v)
    }

    /// Bipartite tree: rows are nodes `0..n`, columns `n..n+m`.
    fn adjacency(&self) -> Vec<Vec<(usize, (usize, usize))>> {
        let (n, m) = self.cost.dim();
        let mut adj = vec![Vec::new(); n + m];
        for &(i, j) in &self.basis {
            adj[i].push((n + j, (i, j)));
            adj[n + j].push((i, (i, j)));
        }
        adj
    }

    fn entering(&self, u: &[f64], v: &[f64], eps: f64, bland: bool) -> Option<(usize, usize)> {
        let mut best: Option<((usize, usize), f64)> = None;
        for ((i, j), &c) in self.cost.indexed_iter() {
            if self.basic[[i, j]] {
                continue;
            }
            let r = c - u[i] - v[j];
            if r < -eps {
                if bland {
                    return Some((i, j));
                }
                if best.is_none_or(|(_, br)| r < br) {
                    best = Some(((i, j), r));
                }
            }
        }
        best.map(|(cell, _)| cell)
    }

    fn pivot(&mut self, (ei, ej): (usize, usize)) {
        let n = self.cost.nrows();
        // Tree path from row ei to column ej; with the entering cell it closes
        // the unique cycle.
        let adj = self.adjacency();
        let mut parent: Vec<Option<(usize, (usize, usize))>> = vec![None; adj.len()];
        let mut seen = vec![false; adj.len()];
        seen[ei] = true;
        let mut queue = VecDeque::from([ei]);
        while let Some(node) = queue.pop_front() {
            if node == n + ej {
                break;
            }
            for &(next, cell) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, cell));
                    queue.push_back(next);
                }
            }
        }
        // Walking back from the column, cells alternate -, +, -, ...
        let mut cycle = Vec::new();
        let mut node = n + ej;
        while node != ei {
            let (prev, cell) = parent[node].expect("basis is a spanning tree");
            cycle.push(cell);
            node = prev;
        }
        let mut leave = 0;
        for k in (0..cycle.len()).step_by(2) {
            let (li, lj) = cycle[leave];
            let (ci, cj) = cycle[k];
            if self.flow[[ci, cj]] < self.flow[[li, lj]] || (self.flow[[ci, cj]] == self.flow[[li, lj]] && cycle[k] < cycle[leave]) {
                leave = k;
            }
        }
        let theta = self.flow[[cycle[leave].0, cycle[leave].1]];
        self.flow[[ei, ej]] = theta;
        for (k, &(i, j)) in cycle.iter().enumerate() {
            if k % 2 == 0 {
                self.flow[[i, j]] = (self.flow[[i, j]] - theta).max(0.0);
            } else {
                self.flow[[i, j]] += theta;
            }
        }
        let (li, lj) = cycle[leave];
        self.flow[[li, lj]] = 0.0;
        self.basic[[li, lj]] = false;
        self.basic[[ei, ej]] = true;
        let pos = self.basis.iter().position(|&c| c == (li, lj)).expect("leaving cell is basic");
        self.basis[pos] = (ei, ej);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn forced_coupling() {
        let m = CostMatrix::new(array![[3.5]]).unwrap();
        let p = exact_ot(&Histogram::dirac(1, 0), &Histogram::dirac(1, 0), &m).unwrap();
        assert_eq!(p.cost(), 3.5);
        assert_eq!(p.coupling(), &array![[1.0]]);
    }

    #[test]
    fn zero_cost_matching() {
        let m = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let a = Histogram::uniform(2);
        let p = exact_ot(&a, &a, &m).unwrap();
        assert_eq!(p.cost(), 0.0);
        assert_eq!(p.coupling(), &array![[0.5, 0.0], [0.0, 0.5]]);
    }

    #[test]
    fn anti_diagonal_needs_pivots() {
        // Northwest corner starts on the expensive diagonal.
        let m = CostMatrix::new(array![[1.0, 0.0, 1.0], [1.0, 1.0, 0.0], [0.0, 1.0, 1.0]]).unwrap();
        let a = Histogram::uniform(3);
        let p = exact_ot(&a, &a, &m).unwrap();
        assert!(p.cost().abs() < 1e-15);
        assert!(p.marginal_error(&a, &a) < 1e-15);
    }

    #[test]
    fn zero_bins_and_size_limit() {
        let m = CostMatrix::new(array![[0.0, 2.0], [1.0, 5.0]]).unwrap();
        let a = Histogram::new(vec![0.0, 1.0]).unwrap();
        let b = Histogram::new(vec![0.25, 0.75]).unwrap();
        let p = exact_ot(&a, &b, &m).unwrap();
        assert!((p.cost() - 4.0).abs() < 1e-12);
        let big = CostMatrix::new(Array2::zeros((65, 1))).unwrap();
        assert!(matches!(
            exact_ot(&Histogram::uniform(65), &Histogram::uniform(1), &big),
            Err(Error::OracleSizeLimit { .. })
        ));
    }
}
