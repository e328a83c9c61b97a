//! Areal adjacency structures and the matrices derived from them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::sparse::{SymSparse, SymTriplets};

/// Above this many sites the extreme adjacency eigenvalues come from power
/// iteration instead of a dense eigensolver.
pub const DENSE_EIGEN_LIMIT: usize = 2000;

/// Undirected simple graph over sites `0..n_sites`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialGraph {
    neighbors: Vec<Vec<usize>>,
}

impl SpatialGraph {
    /// Builds a graph from unordered pairs. Duplicate and reversed pairs
    /// collapse to one edge.
    pub fn from_edges(n_sites: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::InvalidGraph("graph must have at least one site".into()));
        }
        let mut neighbors = vec![Vec::new(); n_sites];
        for &(i, j) in edges {
            if i >= n_sites || j >= n_sites {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) references a site outside 0..{n_sites}"
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at site {i}")));
            }
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
            nb.dedup();
        }
        Ok(Self { neighbors })
    }

    /// Rook neighbourhoods on a `rows x cols` grid wrapped on a torus. Site
    /// `(r, c)` has index `r * cols + c`.
    pub fn torus(rows: usize, cols: usize) -> Result<Self> {
        if rows < 3 || cols < 3 {
            return Err(Error::InvalidLattice { rows, cols });
        }
        let idx = |r: usize, c: usize| r * cols + c;
        let mut edges = Vec::with_capacity(2 * rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                edges.push((idx(r, c), idx(r, (c + 1) % cols)));
                edges.push((idx(r, c), idx((r + 1) % rows, c)));
            }
        }
        Self::from_edges(rows * cols, &edges)
    }

    pub fn n_sites(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, site: usize) -> &[usize] {
        &self.neighbors[site]
    }

    pub fn degree(&self, site: usize) -> usize {
        self.neighbors[site].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    /// First site with no neighbours, if any.
    pub fn isolated_site(&self) -> Option<usize> {
        self.neighbors.iter().position(Vec::is_empty)
    }

    /// 64-bit FNV-1a digest of the site count and edge list.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        feed(self.n_sites() as u64);
        for (i, j) in self.edges() {
            feed(i as u64);
            feed(j as u64);
        }
        h
    }

    /// Neighbourhood matrix `H`: ones on edges, zero diagonal.
    pub fn neighborhood_matrix(&self) -> SymSparse {
        let mut t = SymTriplets::with_capacity(self.n_sites(), 2 * self.n_edges());
        for (i, j) in self.edges() {
            t.add(i, j, 1.0);
        }
        t.build()
    }

    /// Graph Laplacian `Γ = H - diag(degree)`.
    pub fn laplacian(&self) -> SymSparse {
        let n = self.n_sites();
        let mut t = SymTriplets::with_capacity(n, 2 * self.n_edges() + n);
        for i in 0..n {
            t.add(i, i, -(self.degree(i) as f64));
        }
        for (i, j) in self.edges() {
            t.add(i, j, 1.0);
        }
        t.build()
    }

    /// Eigenvalues of `H` in ascending order (dense solver).
    pub fn adjacency_eigenvalues(&self) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.neighborhood_matrix().to_dense());
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Eigenvalues of `diag(1/degree) Γ`, ascending. Requires every site to
    /// have a neighbour. Computed through the similar symmetric matrix
    /// `D^{-1/2} Γ D^{-1/2}`.
    pub fn normalized_laplacian_eigenvalues(&self) -> Result<Vec<f64>> {
        if let Some(site) = self.isolated_site() {
            return Err(Error::DegenerateDegree { site });
        }
        let n = self.n_sites();
        let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / libm::sqrt(self.degree(i) as f64)).collect();
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n {
            s[(i, i)] = -1.0;
            for &j in self.neighbors(i) {
                s[(i, j)] = inv_sqrt[i] * inv_sqrt[j];
            }
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }

    /// Extreme eigenvalues `(ψ_min, ψ_max)` of `H`.
    pub fn adjacency_extreme_eigenvalues(&self) -> (f64, f64) {
        if self.n_sites() <= DENSE_EIGEN_LIMIT {
            let ev = self.adjacency_eigenvalues();
            (ev[0], ev[ev.len() - 1])
        } else {
            let h = self.neighborhood_matrix();
            let shift = self.degrees().into_iter().max().unwrap_or(0) as f64;
            let top = power_iteration(&h, shift, 1.0) - shift;
            let bottom = shift - power_iteration(&h, shift, -1.0);
            (bottom, top)
        }
    }

    /// Open interval `(1/ψ_min, 1/ψ_max)` of spatial autoregression
    /// coefficients for which `I - θ₁H` is nonsingular.
    pub fn theta1_bounds(&self) -> Result<(f64, f64)> {
        if self.n_edges() == 0 {
            return Err(Error::NoValidBounds);
        }
        let (lo, hi) = self.adjacency_extreme_eigenvalues();
        Ok((1.0 / lo, 1.0 / hi))
    }
}

/// Dominant eigenvalue of `shift·I + sign·H` (positive semidefinite when
/// `shift` bounds the spectral radius of `H`).
fn power_iteration(h: &SymSparse, shift: f64, sign: f64) -> f64 {
    let n = h.dim();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * (i % 7) as f64).collect();
    let mut lambda = 0.0;
    for _ in 0..20_000 {
        let hv = h.mul_vec(&v);
        let w: Vec<f64> = v.iter().zip(&hv).map(|(a, b)| shift * a + sign * b).collect();
        let norm = libm::sqrt(w.iter().map(|x| x * x).sum::<f64>());
        let vnorm2 = v.iter().map(|x| x * x).sum::<f64>();
        let next = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / vnorm2;
        v = w.into_iter().map(|x| x / norm).collect();
        if (next - lambda).abs() <= 1e-13 * next.abs().max(1.0) {
            return next;
        }
        lambda = next;
    }
    lambda
}
