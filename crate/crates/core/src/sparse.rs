//! Sparse matrix assembly and a direct LU solver.
//!
//! The factorization is left-looking with partial pivoting. Columns are
//! pre-ordered by minimum degree on the symmetrized pattern and the pivot
//! prefers the structural diagonal when it is within a factor of ten of the
//! column maximum, so the fill-reducing order survives on the circuit-like
//! matrices assembled here.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

/// Pivots below this fraction of the original column's largest entry are
/// treated as zero.
pub const PIVOT_TOLERANCE: f64 = 1e-14;
const DIAGONAL_PREFERENCE: f64 = 0.1;

/// Square matrix with a fixed or growable sparsity pattern that device
/// models stamp into by `(row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StampMatrix {
    n: usize,
    index: HashMap<(usize, usize), usize>,
    rows: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
    frozen: bool,
}

impl StampMatrix {
    pub fn growable(n: usize) -> Self {
        StampMatrix {
            n,
            index: HashMap::new(),
            rows: Vec::new(),
            cols: Vec::new(),
            values: Vec::new(),
            frozen: false,
        }
    }

    /// Matrix restricted to `pattern`; stamping elsewhere is a bug and panics.
    pub fn with_pattern(n: usize, pattern: &[(usize, usize)]) -> Self {
        let mut m = Self::growable(n);
        for &(r, c) in pattern {
            m.slot(r, c);
        }
        m.frozen = true;
        m
    }

    fn slot(&mut self, r: usize, c: usize) -> usize {
        debug_assert!(r < self.n && c < self.n, "stamp ({r},{c}) outside {0}x{0}", self.n);
        if let Some(&k) = self.index.get(&(r, c)) {
            return k;
        }
        assert!(!self.frozen, "stamp ({r},{c}) outside the sparsity pattern");
        let k = self.values.len();
        self.index.insert((r, c), k);
        self.rows.push(r);
        self.cols.push(c);
        self.values.push(0.0);
        k
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let k = self.slot(r, c);
        self.values[k] += v;
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.index.get(&(r, c)).map_or(0.0, |&k| self.values[k])
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries in insertion order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sorted `(row, col)` pattern.
    pub fn pattern(&self) -> Vec<(usize, usize)> {
        let mut p: Vec<_> = self.rows.iter().copied().zip(self.cols.iter().copied()).collect();
        p.sort_unstable();
        p
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for k in 0..self.values.len() {
            y[self.rows[k]] += self.values[k] * x[self.cols[k]];
        }
        y
    }

    pub fn to_csc(&self) -> CscMatrix {
        CscMatrix::from_triplets(self.n, &self.rows, &self.cols, &self.values)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for k in 0..self.values.len() {
            d[self.rows[k]][self.cols[k]] += self.values[k];
        }
        d
    }
}

/// Compressed sparse column matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    /// Duplicate entries are summed.
    pub fn from_triplets(n: usize, rows: &[usize], cols: &[usize], vals: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..vals.len()).collect();
        order.sort_unstable_by_key(|&k| (cols[k], rows[k]));
        let mut col_ptr = vec![0; n + 1];
        let mut row_idx = Vec::with_capacity(vals.len());
        let mut values = Vec::with_capacity(vals.len());
        let mut last: Option<(usize, usize)> = None;
        for k in order {
            let key = (cols[k], rows[k]);
            if last == Some(key) {
                *values.last_mut().unwrap() += vals[k];
            } else {
                row_idx.push(rows[k]);
                values.push(vals[k]);
                col_ptr[cols[k] + 1] += 1;
                last = Some(key);
            }
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        CscMatrix {
            n,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        self.row_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (c, &xc) in x.iter().enumerate().take(self.n) {
            for (r, v) in self.column(c) {
                y[r] += v * xc;
            }
        }
        y
    }
}

/// Greedy minimum-degree order on the pattern of `A + Aᵀ`.
fn minimum_degree(a: &CscMatrix) -> Vec<usize> {
    let n = a.n;
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for c in 0..n {
        for (r, _) in a.column(c) {
            if r != c {
                adj[r].insert(c);
                adj[c].insert(r);
            }
        }
    }
    let mut alive = vec![true; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&i| alive[i])
            .min_by_key(|&i| (adj[i].len(), i))
            .expect("node left");
        alive[v] = false;
        order.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &u in &nbrs {
            adj[u].remove(&v);
        }
        for (i, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[i + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
    }
    order
}

/// LU factors of a column-permuted, row-pivoted sparse matrix.
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    col_order: Vec<usize>,
    pivot_row: Vec<usize>,
    // L column k: (original row, multiplier), unit diagonal implied.
    lower: Vec<Vec<(usize, f64)>>,
    // U column k: (elimination step j < k, value).
    upper: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
}

impl SparseLu {
    pub fn factor(a: &CscMatrix) -> Result<Self> {
        let n = a.n;
        let col_order = minimum_degree(a);
        let mut step_of_row: Vec<Option<usize>> = vec![None; n];
        let mut pivot_row = Vec::with_capacity(n);
        let mut lower: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut upper: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut diag = Vec::with_capacity(n);

        let mut work = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut is_touched = vec![false; n];

        for (k, &col) in col_order.iter().enumerate() {
            let mut col_max = 0.0f64;
            for (r, v) in a.column(col) {
                if !is_touched[r] {
                    is_touched[r] = true;
                    touched.push(r);
                }
                work[r] += v;
                col_max = col_max.max(v.abs());
            }
            // Eliminate with previous columns in step order.
            let mut u_col = Vec::new();
            let mut steps: Vec<usize> = touched.iter().filter_map(|&r| step_of_row[r]).collect();
            steps.sort_unstable();
            let mut queue: BTreeSet<usize> = steps.into_iter().collect();
            while let Some(j) = queue.pop_first() {
                let ujk = work[pivot_row[j]];
                if ujk == 0.0 {
                    continue;
                }
                u_col.push((j, ujk));
                for &(r, l) in &lower[j] {
                    if !is_touched[r] {
                        is_touched[r] = true;
                        touched.push(r);
                    }
                    work[r] -= l * ujk;
                    if let Some(s) = step_of_row[r] {
                        if s > j {
                            queue.insert(s);
                        }
                    }
                }
            }
            // Partial pivot among rows not yet used.
            let mut best: Option<(usize, f64)> = None;
            for &r in &touched {
                if step_of_row[r].is_none() {
                    let v = work[r].abs();
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((r, v));
                    }
                }
            }
            let (mut prow, pmax) = best.unwrap_or((usize::MAX, 0.0));
            if !(pmax > PIVOT_TOLERANCE * col_max) || !pmax.is_finite() {
                return Err(Error::Singular {
                    what: "linear",
                    column: col,
                });
            }
            if step_of_row[col].is_none() && is_touched[col] && work[col].abs() >= DIAGONAL_PREFERENCE * pmax {
                prow = col;
            }
            let pivot = work[prow];
            step_of_row[prow] = Some(k);
            pivot_row.push(prow);
            diag.push(pivot);
            let mut l_col = Vec::new();
            for &r in &touched {
                if step_of_row[r].is_none() && work[r] != 0.0 {
                    l_col.push((r, work[r] / pivot));
                }
                work[r] = 0.0;
                is_touched[r] = false;
            }
            touched.clear();
            lower.push(l_col);
            upper.push(u_col);
        }
        Ok(SparseLu {
            n,
            col_order,
            pivot_row,
            lower,
            upper,
            diag,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut y = b.to_vec();
        let mut z = vec![0.0; self.n];
        for k in 0..self.n {
            let zk = y[self.pivot_row[k]];
            z[k] = zk;
            if zk != 0.0 {
                for &(r, l) in &self.lower[k] {
                    y[r] -= l * zk;
                }
            }
        }
        let mut x = vec![0.0; self.n];
        for k in (0..self.n).rev() {
            let wk = z[k] / self.diag[k];
            x[self.col_order[k]] = wk;
            if wk != 0.0 {
                for &(j, u) in &self.upper[k] {
                    z[j] -= u * wk;
                }
            }
        }
        x
    }

    /// Number of stored entries in L and U, diagonal included.
    pub fn fill(&self) -> usize {
        self.n + self.lower.iter().map(Vec::len).sum::<usize>() + self.upper.iter().map(Vec::len).sum::<usize>()
    }
}

/// Factor and solve `a x = b` in one go, labelling singularity with `what`.
pub fn solve(a: &StampMatrix, b: &[f64], what: &'static str) -> Result<Vec<f64>> {
    let lu = SparseLu::factor(&a.to_csc()).map_err(|e| match e {
        Error::Singular { column, .. } => Error::Singular { what, column },
        other => other,
    })?;
    let x = lu.solve(b);
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Singular { what, column: 0 })
    }
}
