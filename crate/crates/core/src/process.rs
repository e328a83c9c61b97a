//! Latent Gaussian process models: the spatially correlated (SAR) field and
//! the reaction-diffusion VAR(1) field.
//!
//! Latent vectors are laid out time block by time block, sites contiguous
//! within a block: index `t * n_sites + s`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::cholesky::CholeskyFactor;
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::sparse::{SymSparse, SymTriplets};

/// Distance kept from every open parameter-space boundary.
pub const GUARD: f64 = 1e-9;

pub(crate) fn check_open(name: &'static str, value: f64, lower: f64, upper: f64) -> Result<()> {
    if value.is_finite() && value > lower + GUARD && value < upper - GUARD {
        Ok(())
    } else {
        Err(Error::ParameterSpace {
            name,
            value,
            lower,
            upper,
        })
    }
}

fn check_variance(sigma2: f64) -> Result<()> {
    check_open("sigma2", sigma2, 0.0, f64::INFINITY)
}

/// Parameters of the spatially correlated latent field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScseParams {
    /// Spatial autoregression coefficient.
    pub theta1: f64,
    /// Innovation variance.
    pub sigma2: f64,
}

impl ScseParams {
    pub fn validate(&self, g: &SpatialGraph) -> Result<()> {
        check_variance(self.sigma2)?;
        if g.n_edges() == 0 {
            // H = 0: every coefficient gives the same (independent) field.
            return if self.theta1.is_finite() {
                Ok(())
            } else {
                Err(Error::ParameterSpace {
                    name: "theta1",
                    value: self.theta1,
                    lower: f64::NEG_INFINITY,
                    upper: f64::INFINITY,
                })
            };
        }
        let (lo, hi) = g.theta1_bounds()?;
        check_open("theta1", self.theta1, lo, hi)
    }
}

/// Parameters of the reaction-diffusion latent field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdseParams {
    /// Removal (decay) rate.
    pub alpha: f64,
    /// Diffusion rate.
    pub kappa: f64,
    /// Innovation variance.
    pub sigma2: f64,
}

impl RdseParams {
    /// Upper end of the admissible diffusion interval for this decay rate.
    pub fn kappa_upper(alpha: f64) -> f64 {
        (2.0 - alpha) / 2.0
    }

    /// Modelling parameter space: `alpha` in (0, 1) and `kappa` inside
    /// `(-alpha/2, (2 - alpha)/2)`.
    pub fn validate(&self) -> Result<()> {
        check_open("alpha", self.alpha, 0.0, 1.0)?;
        self.validate_stationary()
    }

    /// Weaker check used by the matrix builders: every eigenvalue of the
    /// propagator strictly inside (-1, 1). Admits `alpha` up to 2.
    pub fn validate_stationary(&self) -> Result<()> {
        check_variance(self.sigma2)?;
        check_open("alpha", self.alpha, 0.0, 2.0)?;
        check_open(
            "kappa",
            self.kappa,
            -self.alpha / 2.0,
            Self::kappa_upper(self.alpha),
        )
    }
}

/// How the first time block of the reaction-diffusion precision is closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// First and last diagonal blocks are `I / σ²`.
    #[default]
    Printed,
    /// First diagonal block `(σ² Σ_s⁻¹ + MᵀM) / σ²`, so the first time block
    /// has the stationary marginal covariance `Σ_s`.
    Stationary,
}

/// Sparse precision of a latent field over `n_sites x n_time` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionOperator {
    pub n_sites: usize,
    pub n_time: usize,
    pub matrix: SymSparse,
}

impl PrecisionOperator {
    pub fn dim(&self) -> usize {
        self.n_sites * self.n_time
    }
}

/// Latent values `X(s, t)` stored at `t * n_sites + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentField {
    pub n_sites: usize,
    pub n_time: usize,
    pub values: Vec<f64>,
}

impl LatentField {
    pub fn zeros(n_sites: usize, n_time: usize) -> Self {
        Self {
            n_sites,
            n_time,
            values: vec![0.0; n_sites * n_time],
        }
    }

    pub fn constant(n_sites: usize, n_time: usize, value: f64) -> Self {
        Self {
            n_sites,
            n_time,
            values: vec![value; n_sites * n_time],
        }
    }

    pub fn from_values(n_sites: usize, n_time: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_sites * n_time {
            return Err(Error::DimensionMismatch(alloc::format!(
                "latent field of {} values for {n_sites} sites x {n_time} times",
                values.len()
            )));
        }
        Ok(Self {
            n_sites,
            n_time,
            values,
        })
    }

    pub fn get(&self, site: usize, time: usize) -> f64 {
        self.values[time * self.n_sites + site]
    }

    pub fn time_block(&self, time: usize) -> &[f64] {
        &self.values[time * self.n_sites..(time + 1) * self.n_sites]
    }
}

/// Accumulates `Σ_k r_kᵀ r_k` for sparse rows `r_k`, i.e. `AᵀA`, shifted by
/// `offset` on both axes.
fn add_gram(t: &mut SymTriplets, rows: &[Vec<(usize, f64)>], offset: usize, scale: f64) {
    for row in rows {
        for &(a, va) in row {
            for &(b, vb) in row {
                t.add_one(offset + a, offset + b, scale * (va * vb));
            }
        }
    }
}

/// `(1/σ²)(I − θ₁B)ᵀ(I − θ₁B)` with `B = I_{n_time} ⊗ H`.
pub fn scse_precision(g: &SpatialGraph, p: &ScseParams, n_time: usize) -> Result<PrecisionOperator> {
    p.validate(g)?;
    if n_time == 0 {
        return Err(Error::InvalidConfig("n_time must be at least 1".into()));
    }
    let s = g.n_sites();
    let rows: Vec<Vec<(usize, f64)>> = (0..s)
        .map(|k| {
            let mut r = vec![(k, 1.0)];
            r.extend(g.neighbors(k).iter().map(|&j| (j, -p.theta1)));
            r
        })
        .collect();
    let per_block: usize = rows.iter().map(|r| r.len() * r.len()).sum();
    let mut t = SymTriplets::with_capacity(s * n_time, per_block * n_time);
    let inv = 1.0 / p.sigma2;
    for time in 0..n_time {
        add_gram(&mut t, &rows, time * s, inv);
    }
    Ok(PrecisionOperator {
        n_sites: s,
        n_time,
        matrix: t.build(),
    })
}

/// One-step propagator `M = κ·diag(1/degree)·Γ + (1 − α)·I`, stored by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
    alpha: f64,
    kappa: f64,
}

impl Propagator {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Eigenvalues of `M` (all real), ascending, through the spectrum of the
    /// degree-normalised Laplacian.
    pub fn eigenvalues(&self, g: &SpatialGraph) -> Result<Vec<f64>> {
        Ok(g.normalized_laplacian_eigenvalues()?
            .into_iter()
            .map(|l| self.kappa * l + (1.0 - self.alpha))
            .collect())
    }

    pub fn spectral_radius(&self, g: &SpatialGraph) -> Result<f64> {
        let ev = self.eigenvalues(g)?;
        Ok(ev[0].abs().max(ev[ev.len() - 1].abs()))
    }
}

pub fn rdse_propagator(g: &SpatialGraph, p: &RdseParams) -> Result<Propagator> {
    if let Some(site) = g.isolated_site() {
        return Err(Error::DegenerateDegree { site });
    }
    let rows = (0..g.n_sites())
        .map(|i| {
            let w = p.kappa / g.degree(i) as f64;
            let mut r = Vec::with_capacity(g.degree(i) + 1);
            let mut diag_done = false;
            for &j in g.neighbors(i) {
                if !diag_done && j > i {
                    r.push((i, 1.0 - p.alpha - p.kappa));
                    diag_done = true;
                }
                r.push((j, w));
            }
            if !diag_done {
                r.push((i, 1.0 - p.alpha - p.kappa));
            }
            r
        })
        .collect();
    Ok(Propagator {
        n: g.n_sites(),
        rows,
        alpha: p.alpha,
        kappa: p.kappa,
    })
}

/// Deterministic mean path `x_{t+1} = M x_t` for `steps` steps, starting
/// from (and including) `x0`.
pub fn propagate_mean(m: &Propagator, x0: &[f64], steps: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.to_vec());
    for _ in 0..steps {
        let next = m.apply(out.last().unwrap());
        out.push(next);
    }
    out
}

/// Solves `Σ = M Σ Mᵀ + σ² I` by the doubling iteration
/// `S ← S + A S Aᵀ`, `A ← A²`.
pub fn lyapunov_doubling(m: &DMatrix<f64>, sigma2: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let mut s = DMatrix::identity(n, n) * sigma2;
    let mut a = m.clone();
    for _ in 0..64 {
        let inc = &a * &s * a.transpose();
        let inc_max = inc.amax();
        s += inc;
        if inc_max <= 1e-18 * s.amax() {
            break;
        }
        a = &a * &a;
    }
    // Exact symmetry.
    let st = s.transpose();
    (s + st) * 0.5
}

/// Stationary spatial covariance of the reaction-diffusion field.
pub fn rdse_stationary_cov(g: &SpatialGraph, p: &RdseParams) -> Result<DMatrix<f64>> {
    if !(p.sigma2 > 0.0) || !p.sigma2.is_finite() {
        return Err(Error::ParameterSpace {
            name: "sigma2",
            value: p.sigma2,
            lower: 0.0,
            upper: f64::INFINITY,
        });
    }
    let m = rdse_propagator(g, p)?;
    let radius = m.spectral_radius(g)?;
    if !(radius < 1.0) {
        return Err(Error::NonStationary { radius });
    }
    Ok(lyapunov_doubling(&m.to_dense(), p.sigma2))
}

/// Block-tridiagonal precision of the reaction-diffusion field over
/// `n_time >= 2` time blocks: off-diagonal blocks `−M` (below) and `−Mᵀ`
/// (above), interior diagonal blocks `MᵀM + I`, last block `I`, first block
/// according to `boundary`; everything scaled by `1/σ²`.
pub fn rdse_precision(
    g: &SpatialGraph,
    p: &RdseParams,
    n_time: usize,
    boundary: Boundary,
) -> Result<PrecisionOperator> {
    p.validate_stationary()?;
    if n_time < 2 {
        return Err(Error::InvalidConfig(
            "reaction-diffusion precision needs at least 2 time blocks".into(),
        ));
    }
    let s = g.n_sites();
    let m = rdse_propagator(g, p)?;
    let nnz_row: usize = m.rows().iter().map(|r| r.len() * r.len()).sum();
    let mut t = SymTriplets::with_capacity(s * n_time, n_time * (2 * nnz_row + 3 * s));
    let inv = 1.0 / p.sigma2;

    let first_block_dense = match boundary {
        Boundary::Printed => None,
        Boundary::Stationary => {
            let sigma = rdse_stationary_cov(g, p)?;
            let sigma_inv = sigma
                .cholesky()
                .ok_or(Error::NotPositiveDefinite { pivot: 0, value: f64::NAN })?
                .inverse();
            Some(sigma_inv * p.sigma2)
        }
    };

    for time in 0..n_time {
        let off = time * s;
        let last = time + 1 == n_time;
        if time == 0 {
            match &first_block_dense {
                None => {
                    for i in 0..s {
                        t.add(off + i, off + i, inv);
                    }
                }
                Some(d) => {
                    for j in 0..s {
                        for i in 0..=j {
                            let v = 0.5 * (d[(i, j)] + d[(j, i)]);
                            t.add(off + i, off + j, inv * v);
                        }
                    }
                    add_gram(&mut t, m.rows(), off, inv);
                }
            }
        } else {
            for i in 0..s {
                t.add(off + i, off + i, inv);
            }
            if !last {
                add_gram(&mut t, m.rows(), off, inv);
            }
            let prev = off - s;
            for (i, row) in m.rows().iter().enumerate() {
                for &(j, v) in row {
                    t.add(off + i, prev + j, -(inv * v));
                }
            }
        }
    }
    Ok(PrecisionOperator {
        n_sites: s,
        n_time,
        matrix: t.build(),
    })
}

/// Draws `z ~ N(0, I)` in index order.
pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Draws a mean-zero field with precision `q`.
pub fn sample_latent<R: Rng + ?Sized>(q: &PrecisionOperator, rng: &mut R) -> Result<LatentField> {
    let factor = CholeskyFactor::new(&q.matrix)?;
    let z = standard_normal_vec(rng, q.dim());
    Ok(LatentField {
        n_sites: q.n_sites,
        n_time: q.n_time,
        values: factor.whiten_inverse(&z),
    })
}
