//! Outer optimisation of `log π̃(θ | Y)` on the unconstrained scale.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::SolverSettings;
use crate::error::{Error, Result};
use crate::exec::Executor;

/// A log density over an unconstrained parameter vector whose evaluation
/// carries reusable state (used to warm-start nearby evaluations).
pub trait ThetaObjective: Sync {
    type State: Clone + Send + Sync;

    fn dim(&self) -> usize;

    fn evaluate(&self, u: &[f64], warm: Option<&Self::State>) -> Result<(f64, Self::State)>;

    /// Parameters on their natural scale.
    fn constrained(&self, u: &[f64]) -> Vec<f64> {
        u.to_vec()
    }
}

/// Result of [`find_theta_mode`].
#[derive(Debug, Clone)]
pub struct ThetaMode<S> {
    pub u: Vec<f64>,
    pub theta: Vec<f64>,
    pub log_post: f64,
    pub state: S,
    pub gradient: Vec<f64>,
    /// Finite-difference Hessian of the log density at `u`.
    pub hessian: DMatrix<f64>,
    pub iterations: usize,
    /// Accepted iterates, starting with the initial point.
    pub trace: Vec<Vec<f64>>,
}

fn value_or_neg_inf<S>(r: Result<(f64, S)>) -> Option<(f64, S)> {
    match r {
        Ok((f, s)) if !f.is_nan() => Some((f, s)),
        _ => None,
    }
}

fn shifted(u: &[f64], moves: &[(usize, f64)]) -> Vec<f64> {
    let mut v = u.to_vec();
    for &(i, d) in moves {
        v[i] += d;
    }
    v
}

/// Central differences `(f(u + h eᵢ) − f(u − h eᵢ)) / 2h`, each evaluation
/// warm-started from `state`.
pub fn finite_difference_gradient<O: ThetaObjective, E: Executor>(
    obj: &O,
    u: &[f64],
    state: &O::State,
    h: f64,
    exec: &E,
) -> Result<Vec<f64>> {
    let d = u.len();
    let vals = exec.map(2 * d, |k| {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        obj.evaluate(&shifted(u, &[(k / 2, sign * h)]), Some(state)).map(|r| r.0)
    });
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    Ok((0..d).map(|i| (vals[2 * i] - vals[2 * i + 1]) / (2.0 * h)).collect())
}

/// Central-difference Hessian using `f(u)` = `f0`.
pub fn finite_difference_hessian<O: ThetaObjective, E: Executor>(
    obj: &O,
    u: &[f64],
    f0: f64,
    state: &O::State,
    h: f64,
    exec: &E,
) -> Result<DMatrix<f64>> {
    let d = u.len();
    let mut stencils: Vec<Vec<(usize, f64)>> = Vec::new();
    for i in 0..d {
        stencils.push(vec![(i, h)]);
        stencils.push(vec![(i, -h)]);
    }
    for i in 0..d {
        for j in i + 1..d {
            for (a, b) in [(h, h), (h, -h), (-h, h), (-h, -h)] {
                stencils.push(vec![(i, a), (j, b)]);
            }
        }
    }
    let vals = exec.map(stencils.len(), |k| obj.evaluate(&shifted(u, &stencils[k]), Some(state)).map(|r| r.0));
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    let mut hm = DMatrix::zeros(d, d);
    for i in 0..d {
        hm[(i, i)] = (vals[2 * i] - 2.0 * f0 + vals[2 * i + 1]) / (h * h);
    }
    let mut k = 2 * d;
    for i in 0..d {
        for j in i + 1..d {
            let v = (vals[k] - vals[k + 1] - vals[k + 2] + vals[k + 3]) / (4.0 * h * h);
            hm[(i, j)] = v;
            hm[(j, i)] = v;
            k += 4;
        }
    }
    Ok(hm)
}

/// Initial inverse curvature: `(−H)⁻¹` when `−H` is positive definite,
/// otherwise the inverse absolute diagonal.
fn initial_inverse(hess: &DMatrix<f64>) -> DMatrix<f64> {
    let neg = -hess.clone();
    if let Some(ch) = neg.clone().cholesky() {
        return ch.inverse();
    }
    let d = hess.nrows();
    DMatrix::from_fn(d, d, |i, j| {
        if i != j {
            0.0
        } else {
            let a = hess[(i, i)].abs();
            if a.is_finite() && a > 1e-8 {
                1.0 / a
            } else {
                1.0
            }
        }
    })
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Maximises `obj` from `u0` by BFGS with finite-difference gradients and a
/// step-halving Armijo line search, then takes the Hessian at the optimum.
pub fn find_theta_mode<O: ThetaObjective, E: Executor>(
    obj: &O,
    u0: &[f64],
    settings: &SolverSettings,
    exec: &E,
) -> Result<ThetaMode<O::State>> {
    let d = obj.dim();
    if u0.len() != d {
        return Err(Error::DimensionMismatch("initial hyperparameter vector".into()));
    }
    let (mut f, mut state) = obj.evaluate(u0, None)?;
    if !f.is_finite() {
        return Err(Error::InvalidConfig("initial hyperparameters have zero posterior density".into()));
    }
    let mut u = u0.to_vec();
    let mut g = finite_difference_gradient(obj, &u, &state, settings.fd_step, exec)?;
    let h0 = finite_difference_hessian(obj, &u, f, &state, settings.hessian_step, exec)?;
    let mut hinv = initial_inverse(&h0);
    let mut trace = vec![u.clone()];
    let mut iterations = 0;
    let mut reset = false;

    while inf_norm(&g) >= settings.outer_tol {
        if iterations >= settings.outer_max_iter {
            return Err(Error::NonConvergence { iterations, trace });
        }
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        let mut p = &hinv * &gv;
        if p.dot(&gv) <= 0.0 {
            hinv = DMatrix::identity(d, d);
            p = gv.clone();
        }
        let pn = p.amax();
        if pn > settings.max_step {
            p *= settings.max_step / pn;
        }
        let slope = p.dot(&gv);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = u.iter().zip(p.iter()).map(|(a, b)| a + t * b).collect();
            if let Some((fc, sc)) = value_or_neg_inf(obj.evaluate(&cand, Some(&state))) {
                if fc.is_finite() && fc >= f + 1e-4 * t * slope {
                    accepted = Some((cand, fc, sc));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((u_new, f_new, s_new)) = accepted else {
            if reset {
                return Err(Error::NonConvergence { iterations, trace });
            }
            // Retry once along the gradient before giving up.
            reset = true;
            hinv = DMatrix::identity(d, d) * (settings.max_step / inf_norm(&g).max(1e-300)).min(1.0);
            continue;
        };
        reset = false;
        let g_new = finite_difference_gradient(obj, &u_new, &s_new, settings.fd_step, exec)?;
        let s = DVector::from_iterator(d, u_new.iter().zip(&u).map(|(a, b)| a - b));
        let y = DVector::from_iterator(d, g.iter().zip(&g_new).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(d, d);
            let left = &i - rho * &s * y.transpose();
            let right = &i - rho * &y * s.transpose();
            hinv = left * &hinv * right + rho * &s * s.transpose();
        }
        u = u_new;
        f = f_new;
        state = s_new;
        g = g_new;
        trace.push(u.clone());
    }
    let hessian = finite_difference_hessian(obj, &u, f, &state, settings.hessian_step, exec)?;
    Ok(ThetaMode {
        theta: obj.constrained(&u),
        u,
        log_post: f,
        state,
        gradient: g,
        hessian,
        iterations,
        trace,
    })
}
