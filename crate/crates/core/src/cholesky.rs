//! Sparse Cholesky factorisation `P A Pᵀ = L Lᵀ` for symmetric positive
//! definite matrices.
//!
//! The ordering is reverse Cuthill-McKee over the leading block of the
//! matrix, with an optional trailing block of "pinned" indices kept last
//! (dense fixed-effect rows would otherwise wreck the profile). The numeric
//! phase is an up-looking factorisation driven by precomputed row patterns
//! of `L`, so refactorising a matrix with the analysed pattern does no
//! symbolic work at all.

use alloc::collections::VecDeque;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::sparse::SymSparse;

const NONE: usize = usize::MAX;

/// Reverse Cuthill-McKee ordering of indices `0..free`, followed by
/// `free..n` in natural order. Returns `perm` with `perm[new] = old`.
pub fn rcm_ordering(a: &SymSparse, free: usize) -> Vec<usize> {
    let n = a.dim();
    assert!(free <= n);
    let adj = |j: usize| {
        a.column(j)
            .0
            .iter()
            .copied()
            .filter(move |&i| i < free && i != j)
    };
    let degree: Vec<usize> = (0..free).map(|j| adj(j).count()).collect();
    let mut visited = vec![false; free];
    let mut order = Vec::with_capacity(n);

    // Breadth-first level structure from `root` over unvisited nodes,
    // without marking them; returns (last level, depth).
    let levels = |root: usize, visited: &[bool]| -> (Vec<usize>, usize) {
        let mut seen = visited.to_vec();
        seen[root] = true;
        let mut level = vec![root];
        let mut depth = 0;
        loop {
            let mut next = Vec::new();
            for &u in &level {
                for v in adj(u) {
                    if !seen[v] {
                        seen[v] = true;
                        next.push(v);
                    }
                }
            }
            if next.is_empty() {
                return (level, depth);
            }
            level = next;
            depth += 1;
        }
    };

    for seed in 0..free {
        if visited[seed] {
            continue;
        }
        // George-Liu pseudo-peripheral node search.
        let mut root = seed;
        let (mut last, mut depth) = levels(root, &visited);
        loop {
            let candidate = *last
                .iter()
                .min_by_key(|&&v| (degree[v], v))
                .unwrap();
            let (l2, d2) = levels(candidate, &visited);
            if d2 > depth {
                root = candidate;
                last = l2;
                depth = d2;
            } else {
                break;
            }
        }

        let mut queue = VecDeque::new();
        visited[root] = true;
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = adj(u).filter(|&v| !visited[v]).collect();
            nbrs.sort_unstable_by_key(|&v| (degree[v], v));
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order.extend(free..n);
    order
}

/// Symbolic analysis: ordering, elimination tree and the full pattern of `L`.
#[derive(Debug, Clone)]
pub struct SymbolicCholesky {
    n: usize,
    perm: Vec<usize>,
    iperm: Vec<usize>,
    parent: Vec<usize>,
    /// Pattern of the analysed matrix, used to validate numeric input.
    a_col_ptr: Vec<usize>,
    a_row_idx: Vec<usize>,
    /// For permuted column `k`: `(position in A.values, permuted row <= k)`.
    a_entries_ptr: Vec<usize>,
    a_entries: Vec<(usize, usize)>,
    /// Column pointers and row indices of `L` (diagonal first, rows sorted).
    l_col_ptr: Vec<usize>,
    l_row_idx: Vec<usize>,
    /// Row pattern of `L(k, 0..k)` in topological order, with the storage
    /// position of each entry.
    row_ptr: Vec<usize>,
    row_cols: Vec<usize>,
    row_pos: Vec<usize>,
}

impl SymbolicCholesky {
    /// Analyses `a` with an RCM ordering of the first `n - pinned_last`
    /// indices; the final `pinned_last` indices are eliminated last.
    pub fn analyze(a: &SymSparse, pinned_last: usize) -> Self {
        let n = a.dim();
        let perm = rcm_ordering(a, n - pinned_last.min(n));
        Self::with_ordering(a, perm)
    }

    pub fn with_ordering(a: &SymSparse, perm: Vec<usize>) -> Self {
        let n = a.dim();
        assert_eq!(perm.len(), n);
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        let mut a_entries_ptr = vec![0usize; n + 1];
        let mut a_entries = Vec::with_capacity(a.nnz() / 2 + n);
        for k in 0..n {
            let old = perm[k];
            let start = a.col_ptr()[old];
            for (off, &r) in a.column(old).0.iter().enumerate() {
                let i = iperm[r];
                if i <= k {
                    a_entries.push((start + off, i));
                }
            }
            a_entries_ptr[k + 1] = a_entries.len();
        }

        // Elimination tree of the permuted matrix.
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for &(_, i0) in &a_entries[a_entries_ptr[k]..a_entries_ptr[k + 1]] {
                let mut i = i0;
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        // Row patterns via elimination-tree reach.
        let mut mark = vec![NONE; n];
        let mut stack = vec![0usize; n];
        let mut row_ptr = vec![0usize; n + 1];
        let mut row_cols = Vec::new();
        let mut col_count = vec![1usize; n];
        for k in 0..n {
            mark[k] = k;
            let mut top = n;
            for &(_, i0) in &a_entries[a_entries_ptr[k]..a_entries_ptr[k + 1]] {
                let mut i = i0;
                let mut len = 0;
                while i != NONE && mark[i] != k {
                    stack[len] = i;
                    len += 1;
                    mark[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    // `stack` doubles as output storage from the top down;
                    // the path being copied lives strictly below `len`.
                    let v = stack[len];
                    stack[top] = v;
                }
            }
            for &i in &stack[top..n] {
                row_cols.push(i);
                col_count[i] += 1;
            }
            row_ptr[k + 1] = row_cols.len();
        }

        let mut l_col_ptr = vec![0usize; n + 1];
        for j in 0..n {
            l_col_ptr[j + 1] = l_col_ptr[j] + col_count[j];
        }
        let mut l_row_idx = vec![0usize; l_col_ptr[n]];
        let mut next: Vec<usize> = l_col_ptr[..n].to_vec();
        for j in 0..n {
            l_row_idx[next[j]] = j;
            next[j] += 1;
        }
        let mut row_pos = vec![0usize; row_cols.len()];
        for k in 0..n {
            for p in row_ptr[k]..row_ptr[k + 1] {
                let i = row_cols[p];
                l_row_idx[next[i]] = k;
                row_pos[p] = next[i];
                next[i] += 1;
            }
        }

        Self {
            n,
            perm,
            iperm,
            parent,
            a_col_ptr: a.col_ptr().to_vec(),
            a_row_idx: a.row_idx().to_vec(),
            a_entries_ptr,
            a_entries,
            l_col_ptr,
            l_row_idx,
            row_ptr,
            row_cols,
            row_pos,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_l(&self) -> usize {
        self.l_row_idx.len()
    }

    /// `perm[new] = old`.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn etree(&self) -> &[usize] {
        &self.parent
    }

    fn matches(&self, a: &SymSparse) -> bool {
        a.dim() == self.n && a.col_ptr() == self.a_col_ptr && a.row_idx() == self.a_row_idx
    }
}

/// Numeric factor `P A Pᵀ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    symbolic: Arc<SymbolicCholesky>,
    l_values: Vec<f64>,
}

impl CholeskyFactor {
    /// Factorises `a`, whose pattern must equal the analysed pattern.
    pub fn factor(symbolic: &Arc<SymbolicCholesky>, a: &SymSparse) -> Result<Self> {
        let s = &**symbolic;
        if !s.matches(a) {
            return Err(Error::PatternMismatch);
        }
        let n = s.n;
        let av = a.values();
        let lp = &s.l_col_ptr;
        let li = &s.l_row_idx;
        let mut lx = vec![0.0; li.len()];
        let mut x = vec![0.0; n];
        for k in 0..n {
            for &(pos, i) in &s.a_entries[s.a_entries_ptr[k]..s.a_entries_ptr[k + 1]] {
                x[i] += av[pos];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for p in s.row_ptr[k]..s.row_ptr[k + 1] {
                let i = s.row_cols[p];
                let here = s.row_pos[p];
                let lki = x[i] / lx[lp[i]];
                x[i] = 0.0;
                for q in lp[i] + 1..here {
                    x[li[q]] -= lx[q] * lki;
                }
                d -= lki * lki;
                lx[here] = lki;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: s.perm[k],
                    value: d,
                });
            }
            lx[lp[k]] = libm::sqrt(d);
        }
        Ok(Self {
            symbolic: symbolic.clone(),
            l_values: lx,
        })
    }

    /// One-shot analysis and factorisation.
    pub fn new(a: &SymSparse) -> Result<Self> {
        let sym = Arc::new(SymbolicCholesky::analyze(a, 0));
        Self::factor(&sym, a)
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    /// `log |A|`.
    pub fn log_det(&self) -> f64 {
        let lp = &self.symbolic.l_col_ptr;
        2.0 * (0..self.dim())
            .map(|j| libm::log(self.l_values[lp[j]]))
            .sum::<f64>()
    }

    fn lower_solve_in_place(&self, y: &mut [f64]) {
        let s = &*self.symbolic;
        for j in 0..s.n {
            let p0 = s.l_col_ptr[j];
            y[j] /= self.l_values[p0];
            let yj = y[j];
            for q in p0 + 1..s.l_col_ptr[j + 1] {
                y[s.l_row_idx[q]] -= self.l_values[q] * yj;
            }
        }
    }

    fn upper_solve_in_place(&self, y: &mut [f64]) {
        let s = &*self.symbolic;
        for j in (0..s.n).rev() {
            let p0 = s.l_col_ptr[j];
            let mut acc = y[j];
            for q in p0 + 1..s.l_col_ptr[j + 1] {
                acc -= self.l_values[q] * y[s.l_row_idx[q]];
            }
            y[j] = acc / self.l_values[p0];
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let s = &*self.symbolic;
        assert_eq!(b.len(), s.n);
        let mut y: Vec<f64> = s.perm.iter().map(|&old| b[old]).collect();
        self.lower_solve_in_place(&mut y);
        self.upper_solve_in_place(&mut y);
        let mut x = vec![0.0; s.n];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Maps standard-normal noise `z` (indexed like the original matrix) to
    /// a draw with covariance `A⁻¹`, by solving `Lᵀ y = P z`.
    pub fn whiten_inverse(&self, z: &[f64]) -> Vec<f64> {
        let s = &*self.symbolic;
        assert_eq!(z.len(), s.n);
        let mut y: Vec<f64> = s.perm.iter().map(|&old| z[old]).collect();
        self.upper_solve_in_place(&mut y);
        let mut x = vec![0.0; s.n];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Entries of `A⁻¹` on the pattern of `L + Lᵀ` (Takahashi recursion).
    pub fn selected_inverse(&self) -> SelectedInverse {
        let s = &*self.symbolic;
        let lp = &s.l_col_ptr;
        let li = &s.l_row_idx;
        let lx = &self.l_values;
        let mut z = vec![0.0; lx.len()];
        let lookup = |z: &[f64], i: usize, k: usize| -> f64 {
            let (r, c) = if i >= k { (i, k) } else { (k, i) };
            let rows = &li[lp[c]..lp[c + 1]];
            match rows.binary_search(&r) {
                Ok(off) => z[lp[c] + off],
                Err(_) => 0.0,
            }
        };
        for j in (0..s.n).rev() {
            let p0 = lp[j];
            let ljj = lx[p0];
            let below = p0 + 1..lp[j + 1];
            for pi in below.clone() {
                let i = li[pi];
                let mut acc = 0.0;
                for pk in below.clone() {
                    acc += lx[pk] * lookup(&z, i, li[pk]);
                }
                z[pi] = -acc / ljj;
            }
            let mut acc = 0.0;
            for pk in below {
                acc += lx[pk] * z[pk];
            }
            z[p0] = 1.0 / (ljj * ljj) - acc / ljj;
        }
        SelectedInverse {
            symbolic: self.symbolic.clone(),
            values: z,
        }
    }
}

/// Entries of `A⁻¹` restricted to the factor pattern.
#[derive(Debug, Clone)]
pub struct SelectedInverse {
    symbolic: Arc<SymbolicCholesky>,
    values: Vec<f64>,
}

impl SelectedInverse {
    /// `(A⁻¹)[i, j]` in original indexing, or `None` when outside the
    /// factor pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let s = &*self.symbolic;
        let (a, b) = (s.iperm[i], s.iperm[j]);
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        let start = s.l_col_ptr[c];
        let rows = &s.l_row_idx[start..s.l_col_ptr[c + 1]];
        rows.binary_search(&r).ok().map(|off| self.values[start + off])
    }

    /// Diagonal of `A⁻¹` in original indexing.
    pub fn diagonal(&self) -> Vec<f64> {
        let s = &*self.symbolic;
        (0..s.n)
            .map(|old| self.values[s.l_col_ptr[s.iperm[old]]])
            .collect()
    }

    /// `tr(B A⁻¹)` for a symmetric `B` whose pattern lies inside the factor
    /// pattern.
    pub fn trace_product(&self, b: &SymSparse) -> Result<f64> {
        let mut acc = 0.0;
        for j in 0..b.dim() {
            let (rows, vals) = b.column(j);
            for (&i, &v) in rows.iter().zip(vals) {
                acc += v * self.get(i, j).ok_or(Error::PatternMismatch)?;
            }
        }
        Ok(acc)
    }
}
