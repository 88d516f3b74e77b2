//! Sparse symmetric linear algebra: CSR storage, a fill-reducing ordering,
//! a simplicial `L D L^T` factorization, and a preconditioned conjugate
//! gradient loop.
//!
//! The direct factorization is the default for 2D cell problems (hundreds
//! of factorizations per campaign, each reused for several right-hand
//! sides); CG with a symmetric Gauss-Seidel preconditioner serves the 3D
//! problems where fill makes direct factors expensive.

use crate::error::{Error, Result};

/// Compressed-sparse-row matrix; the full symmetric pattern is stored and
/// column indices are sorted within each row.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds the pattern from per-row column lists (deduplicated and
    /// sorted); values start at zero.
    pub fn from_pattern(rows: Vec<Vec<u32>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0usize);
        let mut col_idx = Vec::new();
        for mut cols in rows {
            cols.sort_unstable();
            cols.dedup();
            col_idx.extend_from_slice(&cols);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Position of entry `(r, c)` in `values`.
    #[inline]
    pub fn find(&self, r: usize, c: usize) -> Option<usize> {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        match self.col_idx[lo..hi].binary_search(&(c as u32)) {
            Ok(i) => Some(lo + i),
            Err(_) => None,
        }
    }

    pub fn zero_values(&mut self) {
        for v in self.values.iter_mut() {
            *v = 0.0;
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for r in 0..self.n {
            let mut s = 0.0;
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[p] * x[self.col_idx[p] as usize];
            }
            y[r] = s;
        }
    }

    /// Maximum absolute asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.n {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[p] as usize;
                if c > r {
                    let other = self.find(c, r).map(|q| self.values[q]).unwrap_or(0.0);
                    worst = worst.max((self.values[p] - other).abs());
                }
            }
        }
        worst
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.col_idx[p] as usize)] = self.values[p];
            }
        }
        m
    }
}

/// Reverse Cuthill-McKee ordering of the pattern of `a`.
///
/// Returns `perm` with `perm[new] = old`. Starts from a pseudo-peripheral
/// vertex found by repeated BFS; handles disconnected patterns.
pub fn rcm_order(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n;
    let degree = |v: usize| a.row_ptr[v + 1] - a.row_ptr[v];

    let bfs_far = |start: usize, visited_global: &[bool]| -> usize {
        let mut seen = vec![false; n];
        let mut frontier = vec![start];
        seen[start] = true;
        let mut last = start;
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &v in &frontier {
                for p in a.row_ptr[v]..a.row_ptr[v + 1] {
                    let w = a.col_idx[p] as usize;
                    if !seen[w] && !visited_global[w] {
                        seen[w] = true;
                        next.push(w);
                    }
                }
            }
            if let Some(&v) = next.first() {
                last = v;
            }
            frontier = next;
        }
        last
    };

    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    while order.len() < n {
        // Unvisited vertex of minimum degree, pushed to the periphery.
        let mut start = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| degree(v))
            .expect("unvisited vertex exists");
        for _ in 0..2 {
            start = bfs_far(start, &visited);
        }
        // Cuthill-McKee BFS with degree-sorted neighbor insertion.
        let mut queue = std::collections::VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = (a.row_ptr[v]..a.row_ptr[v + 1])
                .map(|p| a.col_idx[p] as usize)
                .filter(|&w| !visited[w])
                .collect();
            nbrs.sort_unstable_by_key(|&w| degree(w));
            for w in nbrs {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    order.reverse();
    order
}

/// Simplicial `L D L^T` factorization with a fill-reducing permutation.
pub struct LdltFactor {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    iperm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<u32>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

impl LdltFactor {
    /// Factors the SPD matrix `a`; fails with a diagnostic on nonpositive
    /// pivots.
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let perm = rcm_order(a);
        Self::factor_with_perm(a, perm)
    }

    pub fn factor_with_perm(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.n;
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        // Permuted upper-triangular pattern in column-major form: column k
        // holds rows j <= k. Using CSR row `perm[k]` and mapping columns
        // through iperm gives exactly the entries of permuted row k, and by
        // symmetry permuted column k.
        fn col_entries<'x>(
            a: &'x CsrMatrix,
            perm: &'x [usize],
            iperm: &'x [usize],
            k: usize,
        ) -> impl Iterator<Item = (usize, f64)> + 'x {
            let old = perm[k];
            (a.row_ptr[old]..a.row_ptr[old + 1]).filter_map(move |p| {
                let j = iperm[a.col_idx[p] as usize];
                (j <= k).then_some((j, a.values[p]))
            })
        }

        // Symbolic phase: elimination tree and column counts (LDL-style
        // up-looking traversal).
        let mut parent = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        let mut flag = vec![usize::MAX; n];
        for k in 0..n {
            flag[k] = k;
            for (j, _) in col_entries(a, &perm, &iperm, k) {
                if j >= k {
                    continue;
                }
                let mut i = j;
                while flag[i] != k {
                    if parent[i] == usize::MAX {
                        parent[i] = k;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        let nnz_l = lp[n];
        let mut li = vec![0u32; nnz_l];
        let mut lx = vec![0.0f64; nnz_l];
        let mut d = vec![0.0f64; n];

        // Numeric phase.
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0usize; n];
        let mut lnz_cur = vec![0usize; n];
        for v in flag.iter_mut() {
            *v = usize::MAX;
        }
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            y[k] = 0.0;
            for (j, v) in col_entries(a, &perm, &iperm, k) {
                if j > k {
                    continue;
                }
                y[j] += v;
                if j == k {
                    continue;
                }
                // Walk up the etree recording the traversal in reverse
                // topological order.
                let mut len = 0usize;
                let mut i = j;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = pattern[len];
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            for &j in &pattern[top..n] {
                let yj = y[j];
                y[j] = 0.0;
                let pstart = lp[j];
                let pend = pstart + lnz_cur[j];
                for p in pstart..pend {
                    y[li[p] as usize] -= lx[p] * yj;
                }
                let ljk = yj / d[j];
                d[k] -= ljk * yj;
                li[pend] = k as u32;
                lx[pend] = ljk;
                lnz_cur[j] += 1;
            }
            if d[k] <= 0.0 || !d[k].is_finite() {
                return Err(Error::Solver(format!(
                    "nonpositive pivot {} at column {k} of {n}; matrix not positive definite",
                    d[k]
                )));
            }
        }
        Ok(LdltFactor { n, perm, iperm, lp, li, lx, d })
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x = vec![0.0; n];
        for k in 0..n {
            x[k] = b[self.perm[k]];
        }
        // L y = b (unit diagonal, column-major forward substitution).
        for k in 0..n {
            let xk = x[k];
            for p in self.lp[k]..self.lp[k + 1] {
                x[self.li[p] as usize] -= self.lx[p] * xk;
            }
        }
        for k in 0..n {
            x[k] /= self.d[k];
        }
        // L^T z = y (backward).
        for k in (0..n).rev() {
            let mut s = x[k];
            for p in self.lp[k]..self.lp[k + 1] {
                s -= self.lx[p] * x[self.li[p] as usize];
            }
            x[k] = s;
        }
        let mut out = vec![0.0; n];
        for k in 0..n {
            out[self.perm[k]] = x[k];
        }
        out
    }

    pub fn fill_nnz(&self) -> usize {
        self.lx.len()
    }

    pub fn inverse_permutation(&self) -> &[usize] {
        &self.iperm
    }
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, Copy)]
pub struct PcgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients with a symmetric Gauss-Seidel
/// preconditioner. `x` carries the initial guess and receives the solution;
/// convergence is `||b - A x|| <= tol * ||b||`.
pub fn pcg_ssor(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<PcgStats> {
    let n = a.n;
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(PcgStats { iterations: 0, relative_residual: 0.0 });
    }

    let diag: Vec<f64> = (0..n)
        .map(|r| a.find(r, r).map(|p| a.values[p]).unwrap_or(0.0))
        .collect();
    if diag.iter().any(|&d| d <= 0.0) {
        return Err(Error::Solver("nonpositive diagonal entry; CG needs an SPD matrix".into()));
    }

    // z = (D+L)^{-1} D (D+U)^{-1} r, all sweeps in natural order.
    let apply_precond = |r: &[f64], z: &mut [f64], tmp: &mut [f64]| {
        for i in 0..n {
            let mut s = r[i];
            for p in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[p] as usize;
                if j < i {
                    s -= a.values[p] * tmp[j];
                }
            }
            tmp[i] = s / diag[i];
        }
        for i in (0..n).rev() {
            let mut s = diag[i] * tmp[i];
            for p in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[p] as usize;
                if j > i {
                    s -= a.values[p] * z[j];
                }
            }
            z[i] = s / diag[i];
        }
    };

    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    apply_precond(&r, &mut z, &mut tmp);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    let mut rel = norm(&r) / bnorm;
    if rel <= tol {
        return Ok(PcgStats { iterations: 0, relative_residual: rel });
    }
    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::Solver(format!(
                "CG breakdown at iteration {it}: p^T A p = {pap}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = norm(&r) / bnorm;
        if rel <= tol {
            return Ok(PcgStats { iterations: it, relative_residual: rel });
        }
        apply_precond(&r, &mut z, &mut tmp);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver(format!(
        "CG failed to reach tolerance {tol} in {max_iter} iterations (residual {rel:.3e})"
    )))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
