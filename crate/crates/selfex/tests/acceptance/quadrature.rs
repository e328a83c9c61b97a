//! Adaptive Gauss-Hermite quadrature of the evidence of a 2-site, 2-time
//! spatial model, used as an oracle for the Laplace approximation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use selfex_core::engine::{find_theta_mode, Problem, SolverSettings, ThetaObjective};
use selfex_core::exec::Sequential;
use selfex_core::graph::SpatialGraph;
use selfex_core::hyper::{EtaMode, HyperParams, ModelSpec};
use selfex_core::likelihood::{Covariates, ObservationPanel};

const COUNTS: [u64; 4] = [6, 9, 4, 7];
const NODES: usize = 24;

/// Physicists' Gauss-Hermite rule by the Golub-Welsch eigenproblem.
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let j = DMatrix::from_fn(n, n, |a, b| {
        if a + 1 == b || b + 1 == a {
            (a.max(b) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(j);
    let pi_sqrt = std::f64::consts::PI.sqrt();
    let w = (0..n).map(|k| pi_sqrt * eig.eigenvectors[(0, k)].powi(2)).collect();
    (eig.eigenvalues.iter().copied().collect(), w)
}

fn ln_factorial(y: u64) -> f64 {
    (1..=y).map(|k| (k as f64).ln()).sum()
}

/// `log π(Y | x) + log N(x; 0, Q⁻¹)` written out densely.
fn log_joint(x: &DVector<f64>, q: &DMatrix<f64>, log_det_q: f64) -> f64 {
    let ll: f64 = x
        .iter()
        .zip(COUNTS)
        .map(|(&xi, y)| y as f64 * xi - xi.exp() - ln_factorial(y))
        .sum();
    let n = x.len() as f64;
    ll - 0.5 * (x.transpose() * q * x)[(0, 0)] + 0.5 * log_det_q - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

/// `log ∫ π(Y | x) π(x | θ) dx` by Newton for the mode and a tensor
/// Gauss-Hermite rule in the whitened coordinates.
fn log_evidence_quadrature(q: &DMatrix<f64>) -> f64 {
    let n = q.nrows();
    let log_det_q = q.clone().cholesky().unwrap().l().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>();
    let mut m = DVector::zeros(n);
    let mut hess = q.clone();
    for _ in 0..100 {
        let mu = m.map(f64::exp);
        let y = DVector::from_iterator(n, COUNTS.iter().map(|&c| c as f64));
        let grad = &y - &mu - q * &m;
        hess = q + DMatrix::from_diagonal(&mu);
        let step = hess.clone().cholesky().unwrap().solve(&grad);
        m += &step;
        if step.amax() < 1e-14 {
            break;
        }
    }
    let l = hess.cholesky().unwrap().l();
    // x = m + √2 L⁻ᵀ z
    let lt_inv = l.transpose().try_inverse().unwrap() * 2f64.sqrt();
    let log_jac = lt_inv.determinant().abs().ln();
    let (z, w) = gauss_hermite(NODES);
    let f0 = log_joint(&m, q, log_det_q);
    let mut acc = 0.0;
    let mut idx = vec![0usize; n];
    loop {
        let zv = DVector::from_iterator(n, idx.iter().map(|&k| z[k]));
        let weight: f64 = idx.iter().map(|&k| w[k]).product();
        let x = &m + &lt_inv * &zv;
        acc += weight * (log_joint(&x, q, log_det_q) - f0 + zv.norm_squared()).exp();
        let mut d = 0;
        while d < n {
            idx[d] += 1;
            if idx[d] < NODES {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == n {
            break;
        }
    }
    f0 + log_jac + acc.ln()
}

/// Largest `|Laplace − quadrature|` over the mode and four points at
/// ±0.4 along each unconstrained axis, with one description line per point.
pub fn worst_discrepancy() -> (f64, Vec<String>) {
    let g = SpatialGraph::from_edges(2, &[(0, 1)]).unwrap();
    let panel = ObservationPanel::new(2, 2, COUNTS.to_vec(), Covariates::empty()).unwrap();
    let mut spec = ModelSpec::scse(EtaMode::Off);
    spec.intercept = false;
    let problem = Problem::new(&spec, &g, &panel, SolverSettings::default()).unwrap();
    assert_eq!(problem.n_aug(), 4);
    let param = problem.parameterization();
    let u0 = param.to_unconstrained(&HyperParams::scse(0.2, 2.0, None)).unwrap();
    let mode = find_theta_mode(&problem, &u0, problem.settings(), &Sequential).unwrap();
    let offsets = [[0.0, 0.0], [0.4, 0.0], [-0.4, 0.0], [0.0, 0.4], [0.0, -0.4]];
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for d in offsets {
        let u: Vec<f64> = mode.u.iter().zip(d).map(|(a, b)| a + b).collect();
        let (h, _) = param.from_unconstrained(&u).unwrap();
        let laplace = problem.log_posterior_theta(&h).unwrap();
        let q = problem.latent_precision(&h).unwrap().to_dense();
        let exact = log_evidence_quadrature(&q) + param.log_prior(&h);
        let err = (laplace - exact).abs();
        lines.push(format!(
            "theta {:?}: laplace {laplace:.5} quadrature {exact:.5} |diff| {err:.5}",
            ThetaObjective::constrained(&problem, &u)
        ));
        worst = worst.max(err);
    }
    (worst, lines)
}
