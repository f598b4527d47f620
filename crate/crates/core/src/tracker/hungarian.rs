//! Minimum-cost rectangular assignment (Kuhn–Munkres with potentials).

use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// (row, column) pairs; every row is matched when rows ≤ columns,
    /// otherwise every column is.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
    /// Dual potentials with u[i] + v[j] ≤ cost[i][j] for all pairs and
    /// equality on the assignment; their sum equals `cost` at the optimum.
    pub row_potentials: Vec<f64>,
    pub col_potentials: Vec<f64>,
}

/// Solves min Σ cost[i][σ(i)] over injective assignments of the smaller
/// side. O(n²·m).
pub fn hungarian(cost: &DMatrix<f64>) -> Assignment {
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return Assignment {
            pairs: Vec::new(),
            cost: 0.0,
            row_potentials: vec![0.0; rows],
            col_potentials: vec![0.0; cols],
        };
    }
    if rows > cols {
        let t = hungarian(&cost.transpose());
        let mut pairs: Vec<(usize, usize)> = t.pairs.into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        return Assignment {
            pairs,
            cost: t.cost,
            row_potentials: t.col_potentials,
            col_potentials: t.row_potentials,
        };
    }
    let (n, m) = (rows, cols);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| cost[(i, j)]).sum();
    Assignment {
        pairs,
        cost: total,
        row_potentials: u[1..].to_vec(),
        col_potentials: v[1..].to_vec(),
    }
}
