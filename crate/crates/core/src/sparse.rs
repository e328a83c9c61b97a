//! Compressed-column storage for symmetric matrices.
//!
//! Both triangles are stored so that columns can be read directly as rows.
//! Entries supplied to the builder are kept even when their value is zero:
//! the pattern is structural, which lets one symbolic factorisation serve
//! every parameter value of a model.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

/// Accumulates `(row, col, value)` entries of a symmetric matrix.
#[derive(Debug, Clone, Default)]
pub struct SymTriplets {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SymTriplets {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Self {
            n,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Adds `value` at `(i, j)` and, for `i != j`, at `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(i < self.n && j < self.n);
        self.entries.push((i, j, value));
        if i != j {
            self.entries.push((j, i, value));
        }
    }

    /// Adds a single entry without mirroring. The caller is responsible for
    /// supplying the transposed entry.
    pub fn add_one(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(i < self.n && j < self.n);
        self.entries.push((i, j, value));
    }

    /// Sums duplicates (in insertion order) and compresses by column.
    pub fn build(mut self) -> SymSparse {
        self.entries.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut col_ptr = vec![0usize; self.n + 1];
        let mut row_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(i, j, v) in &self.entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(i);
                values.push(v);
                col_ptr[j + 1] += 1;
                last = Some((i, j));
            }
        }
        for j in 0..self.n {
            col_ptr[j + 1] += col_ptr[j];
        }
        SymSparse {
            n: self.n,
            col_ptr,
            row_idx,
            values,
        }
    }
}

/// Symmetric sparse matrix, both triangles stored, rows sorted within columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SymSparse {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SymSparse {
    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    /// Converts the nonzero pattern of a dense symmetric matrix. Entries with
    /// `|a_ij| <= drop_tol` are omitted.
    pub fn from_dense(a: &DMatrix<f64>, drop_tol: f64) -> Self {
        let n = a.nrows();
        let mut t = SymTriplets::new(n);
        for j in 0..n {
            for i in 0..n {
                let v = a[(i, j)];
                if i == j || v.abs() > drop_tol {
                    t.add_one(i, j, v);
                }
            }
        }
        t.build()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Row indices and values of column `j`.
    pub fn column(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.values[r])
    }

    /// Storage position of entry `(i, j)`, if it is in the pattern.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.col_ptr[j];
        let rows = &self.row_idx[start..self.col_ptr[j + 1]];
        rows.binary_search(&i).ok().map(|k| start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn same_pattern(&self, other: &SymSparse) -> bool {
        self.n == other.n && self.col_ptr == other.col_ptr && self.row_idx == other.row_idx
    }

    /// Copy of this pattern with every value set to zero.
    pub fn zeroed(&self) -> SymSparse {
        SymSparse {
            n: self.n,
            col_ptr: self.col_ptr.clone(),
            row_idx: self.row_idx.clone(),
            values: vec![0.0; self.values.len()],
        }
    }

    /// Adds every entry of `other` into `self`. Fails if `other` has an
    /// entry outside the pattern of `self`.
    pub fn add_assign_subpattern(&mut self, other: &SymSparse) -> Option<()> {
        if other.n != self.n {
            return None;
        }
        for j in 0..other.n {
            let (rows, vals) = other.column(j);
            let start = self.col_ptr[j];
            let mine = &self.row_idx[start..self.col_ptr[j + 1]];
            let mut k = 0;
            for (&i, &v) in rows.iter().zip(vals) {
                while k < mine.len() && mine[k] < i {
                    k += 1;
                }
                if k == mine.len() || mine[k] != i {
                    return None;
                }
                self.values[start + k] += v;
            }
        }
        Some(())
    }

    /// Union of the patterns of `self` and `other`, values summed.
    pub fn union(&self, other: &SymSparse) -> SymSparse {
        assert_eq!(self.n, other.n);
        let mut t = SymTriplets::with_capacity(self.n, self.nnz() + other.nnz());
        for m in [self, other] {
            for j in 0..m.n {
                let (rows, vals) = m.column(j);
                for (&i, &v) in rows.iter().zip(vals) {
                    t.add_one(i, j, v);
                }
            }
        }
        t.build()
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.get(j, j)).collect()
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            let (rows, vals) = self.column(j);
            for (&i, &v) in rows.iter().zip(vals) {
                y[i] += v * xj;
            }
        }
        y
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.n {
            let (rows, vals) = self.column(j);
            let mut col = 0.0;
            for (&i, &v) in rows.iter().zip(vals) {
                col += v * x[i];
            }
            acc += col * x[j];
        }
        acc
    }

    /// True when `A[i,j] == A[j,i]` bit for bit over the whole pattern.
    pub fn is_exactly_symmetric(&self) -> bool {
        (0..self.n).all(|j| {
            let (rows, vals) = self.column(j);
            rows.iter()
                .zip(vals)
                .all(|(&i, &v)| self.position(j, i).map(|p| self.values[p]) == Some(v))
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            let (rows, vals) = self.column(j);
            for (&i, &v) in rows.iter().zip(vals) {
                a[(i, j)] = v;
            }
        }
        a
    }

    /// Symmetric permutation `P A Pᵀ` where `perm[new] = old`.
    pub fn permute(&self, perm: &[usize]) -> SymSparse {
        let mut inv = vec![0usize; self.n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut t = SymTriplets::with_capacity(self.n, self.nnz());
        for j in 0..self.n {
            let (rows, vals) = self.column(j);
            for (&i, &v) in rows.iter().zip(vals) {
                t.add_one(inv[i], inv[j], v);
            }
        }
        t.build()
    }
}
