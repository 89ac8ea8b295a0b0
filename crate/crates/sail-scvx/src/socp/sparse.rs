//! Minimal sparse kernels for the embedded conic solver: compressed
//! column storage, a fill-reducing minimum-degree ordering, and a sparse
//! LDL^T factorization with signed dynamic regularization for the
//! quasi-definite KKT systems produced by the interior-point method.

/// Compressed sparse column matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowind: Vec<usize>,
    pub values: Vec<f64>,
}

/// Coordinate-format builder; duplicate entries are summed on compression.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets { nrows, ncols, rows: Vec::new(), cols: Vec::new(), vals: Vec::new() }
    }

    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if val != 0.0 {
            self.rows.push(row);
            self.cols.push(col);
            self.vals.push(val);
        }
    }

    pub fn to_csc(&self) -> CscMatrix {
        CscMatrix::from_triplets(self.nrows, self.ncols, &self.rows, &self.cols, &self.vals)
    }
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CscMatrix { nrows, ncols, colptr: vec![0; ncols + 1], rowind: Vec::new(), values: Vec::new() }
    }

    /// Builds a CSC matrix from coordinate triplets, summing duplicates.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        rows: &[usize],
        cols: &[usize],
        vals: &[f64],
    ) -> Self {
        assert_eq!(rows.len(), cols.len());
        assert_eq!(rows.len(), vals.len());
        let mut count = vec![0usize; ncols + 1];
        for &c in cols {
            count[c + 1] += 1;
        }
        for j in 0..ncols {
            count[j + 1] += count[j];
        }
        let nnz = rows.len();
        let mut ri = vec![0usize; nnz];
        let mut vv = vec![0f64; nnz];
        let mut next = count.clone();
        for k in 0..nnz {
            let p = next[cols[k]];
            ri[p] = rows[k];
            vv[p] = vals[k];
            next[cols[k]] += 1;
        }
        // Sort each column by row index and merge duplicates.
        let mut colptr = vec![0usize; ncols + 1];
        let mut rowind = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for j in 0..ncols {
            scratch.clear();
            for p in count[j]..count[j + 1] {
                scratch.push((ri[p], vv[p]));
            }
            scratch.sort_unstable_by_key(|&(r, _)| r);
            let mut i = 0;
            while i < scratch.len() {
                let (r, mut v) = scratch[i];
                let mut k = i + 1;
                while k < scratch.len() && scratch[k].0 == r {
                    v += scratch[k].1;
                    k += 1;
                }
                rowind.push(r);
                values.push(v);
                i = k;
            }
            colptr[j + 1] = rowind.len();
        }
        CscMatrix { nrows, ncols, colptr, rowind, values }
    }

    pub fn nnz(&self) -> usize {
        self.rowind.len()
    }

    /// y += alpha * A * x
    pub fn axpy(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for j in 0..self.ncols {
            let xj = alpha * x[j];
            if xj == 0.0 {
                continue;
            }
            for p in self.colptr[j]..self.colptr[j + 1] {
                y[self.rowind[p]] += self.values[p] * xj;
            }
        }
    }

    /// y += alpha * A^T * x
    pub fn axpy_t(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for j in 0..self.ncols {
            let mut acc = 0.0;
            for p in self.colptr[j]..self.colptr[j + 1] {
                acc += self.values[p] * x[self.rowind[p]];
            }
            y[j] += alpha * acc;
        }
    }

    pub fn transpose(&self) -> CscMatrix {
        let mut count = vec![0usize; self.nrows + 1];
        for &r in &self.rowind {
            count[r + 1] += 1;
        }
        for i in 0..self.nrows {
            count[i + 1] += count[i];
        }
        let colptr = count.clone();
        let mut rowind = vec![0usize; self.nnz()];
        let mut values = vec![0f64; self.nnz()];
        let mut next = count;
        for j in 0..self.ncols {
            for p in self.colptr[j]..self.colptr[j + 1] {
                let r = self.rowind[p];
                let q = next[r];
                rowind[q] = j;
                values[q] = self.values[p];
                next[r] += 1;
            }
        }
        CscMatrix { nrows: self.ncols, ncols: self.nrows, colptr, rowind, values }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Exact minimum-degree ordering on a symmetric sparsity pattern given as
/// an adjacency list (no self loops required). Returns `perm` such that
/// elimination order k processes original node `perm[k]`.
///
/// The implementation is the classical elimination-graph variant: at each
/// step the minimum-degree node (smallest index on ties, for determinism)
/// is eliminated and its neighborhood turned into a clique. This is run
/// once per problem structure, so the O(sum deg^2) clique formation cost
/// is acceptable.
pub fn min_degree_ordering(n: usize, adjacency: &[Vec<usize>]) -> Vec<usize> {
    use std::collections::BTreeSet;
    assert_eq!(adjacency.len(), n);
    let mut adj: Vec<BTreeSet<usize>> = adjacency
        .iter()
        .enumerate()
        .map(|(i, nb)| nb.iter().copied().filter(|&j| j != i).collect())
        .collect();
    let mut alive: Vec<bool> = vec![true; n];
    let mut perm = Vec::with_capacity(n);
    // Bucketed degrees would be faster; a linear scan is fine at our sizes.
    for _ in 0..n {
        let mut best = usize::MAX;
        let mut best_deg = usize::MAX;
        for i in 0..n {
            if alive[i] {
                let d = adj[i].len();
                if d < best_deg {
                    best_deg = d;
                    best = i;
                }
            }
        }
        let v = best;
        perm.push(v);
        alive[v] = false;
        let neighbors: Vec<usize> = adj[v].iter().copied().collect();
        for &a in &neighbors {
            adj[a].remove(&v);
        }
        for (idx, &a) in neighbors.iter().enumerate() {
            for &b in &neighbors[idx + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        adj[v].clear();
    }
    perm
}

/// Sparse LDL^T factorization of a symmetric quasi-definite matrix given by
/// its upper triangle in CSC form (row indices <= column index in every
/// column). Signs of the D entries are pinned by `expected_sign`: if the
/// computed pivot has the wrong sign or is too small it is replaced by a
/// signed regularization value (dynamic regularization), which iterative
/// refinement later corrects.
pub struct LdlFactor {
    n: usize,
    /// Elimination tree parents (usize::MAX for roots).
    parent: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    /// Workspaces reused across numeric refactorizations.
    lnz: Vec<usize>,
    flag: Vec<usize>,
    pattern: Vec<usize>,
    y: Vec<f64>,
    pub dynamic_bumps: usize,
}

impl LdlFactor {
    /// Symbolic analysis (elimination tree + column counts) of the upper
    /// triangle pattern.
    pub fn analyze(upper: &CscMatrix) -> Self {
        let n = upper.ncols;
        assert_eq!(upper.nrows, n);
        let mut parent = vec![usize::MAX; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz_count = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for p in upper.colptr[k]..upper.colptr[k + 1] {
                let mut i = upper.rowind[p];
                debug_assert!(i <= k, "matrix must be upper triangular");
                while i < k && flag[i] != k {
                    if parent[i] == usize::MAX {
                        parent[i] = k;
                    }
                    lnz_count[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz_count[k];
        }
        let nnz = lp[n];
        LdlFactor {
            n,
            parent,
            lp,
            li: vec![0; nnz],
            lx: vec![0.0; nnz],
            d: vec![0.0; n],
            lnz: vec![0; n],
            flag: vec![usize::MAX; n],
            pattern: vec![0; n],
            y: vec![0.0; n],
            dynamic_bumps: 0,
        }
    }

    /// Numeric factorization. `expected_sign[k]` is +1.0 or -1.0; pivots
    /// violating their expected sign (or smaller than `pivot_floor` in
    /// magnitude) are replaced by `expected_sign * pivot_bump`.
    pub fn factor(
        &mut self,
        upper: &CscMatrix,
        expected_sign: &[f64],
        pivot_floor: f64,
        pivot_bump: f64,
    ) {
        let n = self.n;
        self.dynamic_bumps = 0;
        for k in 0..n {
            self.lnz[k] = 0;
        }
        for k in 0..n {
            // Compute the nonzero pattern of row k of L via etree paths.
            let mut top = n;
            self.flag[k] = k;
            self.y[k] = 0.0;
            for p in upper.colptr[k]..upper.colptr[k + 1] {
                let mut i = upper.rowind[p];
                self.y[i] += upper.values[p];
                let mut len = 0;
                while self.flag[i] != k {
                    self.pattern[len] = i;
                    len += 1;
                    self.flag[i] = k;
                    i = self.parent[i];
                }
                for l in (0..len).rev() {
                    top -= 1;
                    self.pattern[top] = self.pattern[l];
                }
            }
            // Sparse triangular solve along the pattern.
            let mut dk = self.y[k];
            self.y[k] = 0.0;
            for t in top..n {
                let i = self.pattern[t];
                let yi = self.y[i];
                self.y[i] = 0.0;
                let lki = yi / self.d[i];
                for p in self.lp[i]..self.lp[i] + self.lnz[i] {
                    self.y[self.li[p]] -= self.lx[p] * yi;
                }
                dk -= lki * yi;
                let p = self.lp[i] + self.lnz[i];
                self.li[p] = k;
                self.lx[p] = lki;
                self.lnz[i] += 1;
            }
            let sign = expected_sign[k];
            if dk * sign <= pivot_floor {
                dk = sign * pivot_bump;
                self.dynamic_bumps += 1;
            }
            self.d[k] = dk;
        }
    }

    /// In-place solve of L D L^T x = b.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let bi = b[i];
            if bi != 0.0 {
                for p in self.lp[i]..self.lp[i] + self.lnz[i] {
                    b[self.li[p]] -= self.lx[p] * bi;
                }
            }
        }
        for i in 0..n {
            b[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            for p in self.lp[i]..self.lp[i] + self.lnz[i] {
                acc -= self.lx[p] * b[self.li[p]];
            }
            b[i] = acc;
        }
    }
}

/// y += alpha * K x for a symmetric matrix stored as its upper triangle.
pub fn sym_upper_axpy(upper: &CscMatrix, alpha: f64, x: &[f64], y: &mut [f64]) {
    let n = upper.ncols;
    debug_assert_eq!(x.len(), n);
    debug_assert_eq!(y.len(), n);
    for j in 0..n {
        for p in upper.colptr[j]..upper.colptr[j + 1] {
            let i = upper.rowind[p];
            let v = upper.values[p];
            y[i] += alpha * v * x[j];
            if i != j {
                y[j] += alpha * v * x[i];
            }
        }
    }
}
