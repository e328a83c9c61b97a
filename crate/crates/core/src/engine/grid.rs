//! Grid exploration of `π̃(θ | Y)` around its mode and hyperparameter
//! marginals.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::optimize::{ThetaMode, ThetaObjective};
use super::SolverSettings;
use crate::error::{Error, Result};
use crate::exec::Executor;

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    /// Integer lattice coordinates in the z-parameterisation.
    pub k: Vec<i32>,
    /// Unconstrained coordinates.
    pub u: Vec<f64>,
    /// Natural-scale coordinates.
    pub theta: Vec<f64>,
    pub log_post: f64,
    pub weight: f64,
    /// Spread of the grid cell projected onto each natural coordinate.
    pub kernel_sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGrid {
    pub points: Vec<GridPoint>,
    /// Index of the mode in `points`.
    pub mode_index: usize,
    pub mode_u: Vec<f64>,
    pub mode_hessian: DMatrix<f64>,
    /// Columns map `z` to `u − u*`.
    pub scaling: DMatrix<f64>,
    /// True when the mode Hessian was not negative definite and diagonal
    /// scaling was used instead.
    pub diagonal_fallback: bool,
    pub dz: f64,
    pub dpi: f64,
}

impl ThetaGrid {
    pub fn dim(&self) -> usize {
        self.mode_u.len()
    }

    pub fn mode(&self) -> &GridPoint {
        &self.points[self.mode_index]
    }

    /// Posterior mean of natural coordinate `i`.
    pub fn mean(&self, i: usize) -> f64 {
        self.points.iter().map(|p| p.weight * p.theta[i]).sum()
    }
}

/// `z ↦ u` scaling from the Hessian of the log density at the mode.
fn scaling_from_hessian(hess: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let d = hess.nrows();
    let neg = -hess.clone();
    let eig = neg.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l > 0.0 && l.is_finite()) {
        let mut s = eig.eigenvectors.clone();
        for j in 0..d {
            let f = 1.0 / libm::sqrt(eig.eigenvalues[j]);
            for i in 0..d {
                s[(i, j)] *= f;
            }
        }
        // fixed sign convention so the grid does not depend on the solver
        for j in 0..d {
            let (mut best, mut idx) = (0.0f64, 0);
            for i in 0..d {
                if s[(i, j)].abs() > best {
                    best = s[(i, j)].abs();
                    idx = i;
                }
            }
            if s[(idx, j)] < 0.0 {
                for i in 0..d {
                    s[(i, j)] = -s[(i, j)];
                }
            }
        }
        (s, false)
    } else {
        let s = DMatrix::from_fn(d, d, |i, j| {
            if i != j {
                0.0
            } else {
                let a = neg[(i, i)];
                if a > 0.0 && a.is_finite() {
                    1.0 / libm::sqrt(a)
                } else {
                    1.0
                }
            }
        });
        (s, true)
    }
}

fn u_of(mode_u: &[f64], scaling: &DMatrix<f64>, k: &[i32], dz: f64) -> Vec<f64> {
    let d = mode_u.len();
    (0..d)
        .map(|i| mode_u[i] + (0..d).map(|j| scaling[(i, j)] * dz * k[j] as f64).sum::<f64>())
        .collect()
}

/// Projected cell spread `dz/√12 · ‖(J S)ᵢ‖` with `J` the Jacobian of the
/// natural parameters in `u`.
fn kernel_sd<O: ThetaObjective>(obj: &O, u: &[f64], scaling: &DMatrix<f64>, dz: f64) -> Vec<f64> {
    let d = u.len();
    let h = 1e-6;
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut up = u.to_vec();
        let mut dn = u.to_vec();
        up[j] += h;
        dn[j] -= h;
        let (a, b) = (obj.constrained(&up), obj.constrained(&dn));
        for i in 0..d {
            jac[(i, j)] = (a[i] - b[i]) / (2.0 * h);
        }
    }
    let m = jac * scaling;
    (0..d)
        .map(|i| dz / libm::sqrt(12.0) * libm::sqrt((0..d).map(|j| m[(i, j)] * m[(i, j)]).sum::<f64>()))
        .collect()
}

/// Breadth-first exploration of the lattice `u* + S·δz·k`, keeping points
/// whose log density is within `δπ` of the mode. Evaluations are warm-started
/// from the mode state and run layer by layer in sorted order.
pub fn explore_theta_grid<O: ThetaObjective, E: Executor>(
    obj: &O,
    mode: &ThetaMode<O::State>,
    settings: &SolverSettings,
    exec: &E,
) -> Result<ThetaGrid> {
    let d = mode.u.len();
    let dz = settings.grid_dz;
    let dpi = settings.grid_dpi;
    let (scaling, diagonal_fallback) = scaling_from_hessian(&mode.hessian);
    let origin = vec![0i32; d];
    let mut visited: BTreeSet<Vec<i32>> = BTreeSet::new();
    visited.insert(origin.clone());
    let mut accepted: Vec<(Vec<i32>, Vec<f64>, f64)> = vec![(origin.clone(), mode.u.clone(), mode.log_post)];
    let neighbours = |k: &[i32], visited: &mut BTreeSet<Vec<i32>>, next: &mut BTreeSet<Vec<i32>>| {
        for j in 0..d {
            for step in [-1, 1] {
                let mut n = k.to_vec();
                n[j] += step;
                if visited.insert(n.clone()) {
                    next.insert(n);
                }
            }
        }
    };
    let mut frontier = BTreeSet::new();
    neighbours(&origin, &mut visited, &mut frontier);
    while !frontier.is_empty() {
        let layer: Vec<Vec<i32>> = frontier.into_iter().collect();
        let us: Vec<Vec<f64>> = layer.iter().map(|k| u_of(&mode.u, &scaling, k, dz)).collect();
        let vals = exec.map(layer.len(), |i| match obj.evaluate(&us[i], Some(&mode.state)) {
            Ok((f, _)) => f,
            Err(_) => f64::NEG_INFINITY,
        });
        let mut next = BTreeSet::new();
        for ((k, u), f) in layer.into_iter().zip(us).zip(vals) {
            if f.is_finite() && mode.log_post - f < dpi {
                neighbours(&k, &mut visited, &mut next);
                accepted.push((k, u, f));
                if accepted.len() > settings.grid_max_points {
                    return Err(Error::InvalidConfig("grid exploration exceeded the point limit".into()));
                }
            }
        }
        frontier = next;
    }
    accepted.sort_by(|a, b| a.0.cmp(&b.0));
    let max_lp = accepted.iter().map(|a| a.2).fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = accepted.iter().map(|a| libm::exp(a.2 - max_lp)).collect();
    let total: f64 = raw.iter().sum();
    let mut mode_index = 0;
    let points: Vec<GridPoint> = accepted
        .into_iter()
        .zip(raw)
        .enumerate()
        .map(|(idx, ((k, u, f), w))| {
            if k.iter().all(|&x| x == 0) {
                mode_index = idx;
            }
            GridPoint {
                theta: obj.constrained(&u),
                kernel_sd: kernel_sd(obj, &u, &scaling, dz),
                k,
                u,
                log_post: f,
                weight: w / total,
            }
        })
        .collect();
    Ok(ThetaGrid {
        points,
        mode_index,
        mode_u: mode.u.clone(),
        mode_hessian: mode.hessian.clone(),
        scaling,
        diagonal_fallback,
        dz,
        dpi,
    })
}

/// Marginal posterior of one hyperparameter on its natural scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub mode: f64,
    pub ci95: (f64, f64),
    pub mean: f64,
    pub sd: f64,
    /// `(value, density)` pairs spanning the bulk of the distribution.
    pub curve: Vec<(f64, f64)>,
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / core::f64::consts::SQRT_2)
}

struct Mixture {
    w: Vec<f64>,
    m: Vec<f64>,
    s: Vec<f64>,
}

impl Mixture {
    fn cdf(&self, x: f64) -> f64 {
        self.w
            .iter()
            .zip(&self.m)
            .zip(&self.s)
            .map(|((w, m), s)| w * normal_cdf((x - m) / s))
            .sum()
    }

    fn pdf(&self, x: f64) -> f64 {
        let c = 1.0 / libm::sqrt(2.0 * core::f64::consts::PI);
        self.w
            .iter()
            .zip(&self.m)
            .zip(&self.s)
            .map(|((w, m), s)| {
                let z = (x - m) / s;
                w * c / s * libm::exp(-0.5 * z * z)
            })
            .sum()
    }

    fn quantile(&self, q: f64, lo: f64, hi: f64) -> f64 {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if self.cdf(mid) < q {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }
}

/// Weighted mixture of per-point Gaussian kernels along natural coordinate
/// `index`; the 95% interval is read off the mixture quantiles.
pub fn marginal_hyperparam(grid: &ThetaGrid, index: usize) -> Result<Marginal> {
    if index >= grid.dim() {
        return Err(Error::IndexOutOfRange {
            index,
            len: grid.dim(),
        });
    }
    let mut xs: Vec<f64> = grid.points.iter().map(|p| p.theta[index]).collect();
    xs.sort_by(f64::total_cmp);
    let spread = xs[xs.len() - 1] - xs[0];
    let mut distinct = 1;
    for w in xs.windows(2) {
        if w[1] - w[0] > 1e-12 * spread.max(1e-300) {
            distinct += 1;
        }
    }
    if distinct < 3 {
        return Err(Error::InsufficientGrid { distinct });
    }
    let mix = Mixture {
        w: grid.points.iter().map(|p| p.weight).collect(),
        m: grid.points.iter().map(|p| p.theta[index]).collect(),
        s: grid.points.iter().map(|p| p.kernel_sd[index].max(1e-12 * spread)).collect(),
    };
    let lo = mix.m.iter().zip(&mix.s).map(|(m, s)| m - 10.0 * s).fold(f64::INFINITY, f64::min);
    let hi = mix.m.iter().zip(&mix.s).map(|(m, s)| m + 10.0 * s).fold(f64::NEG_INFINITY, f64::max);
    let mean: f64 = mix.w.iter().zip(&mix.m).map(|(w, m)| w * m).sum();
    let second: f64 = mix.w.iter().zip(&mix.m).zip(&mix.s).map(|((w, m), s)| w * (m * m + s * s)).sum();
    let sd = libm::sqrt((second - mean * mean).max(0.0));

    let n = 2001;
    let step = (hi - lo) / (n - 1) as f64;
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..n {
        let v = mix.pdf(lo + step * i as f64);
        if v > best.1 {
            best = (i, v);
        }
    }
    // golden-section refinement within the neighbouring cells
    let (mut a, mut b) = (lo + step * best.0.saturating_sub(1) as f64, lo + step * (best.0 + 1).min(n - 1) as f64);
    let r = 0.5 * (libm::sqrt(5.0) - 1.0);
    for _ in 0..80 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if mix.pdf(c) >= mix.pdf(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let mode = 0.5 * (a + b);
    let ci95 = (mix.quantile(0.025, lo, hi), mix.quantile(0.975, lo, hi));
    let (c_lo, c_hi) = (mix.quantile(0.0005, lo, hi), mix.quantile(0.9995, lo, hi));
    let curve = (0..201)
        .map(|i| {
            let x = c_lo + (c_hi - c_lo) * i as f64 / 200.0;
            (x, mix.pdf(x))
        })
        .collect();
    Ok(Marginal {
        mode,
        ci95,
        mean,
        sd,
        curve,
    })
}
