//! Nested Laplace inference.
//!
//! The latent vector is augmented with the fixed effects, `v = (X, β)`, so
//! that `λ = A v` with `λ_c = X_c + F_{s(c)}·β`. The Gaussian approximation
//! to `π(v | θ, Y)` has precision `Q* = Q + Aᵀ diag(c) A` where `c` is the
//! (floored) negative curvature of the data log density.

mod fit;
mod grid;
mod latent;
mod optimize;

pub use fit::{default_start, fit, Fit};
pub use grid::{explore_theta_grid, marginal_hyperparam, GridPoint, Marginal, ThetaGrid};
pub use latent::{fixed_effect_interval, fixed_effect_interval_at, latent_marginal_nested, latent_marginals_gaussian, NestedMarginal};
pub use optimize::{finite_difference_gradient, finite_difference_hessian, find_theta_mode, ThetaMode, ThetaObjective};

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::cholesky::{CholeskyFactor, SymbolicCholesky};
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::hyper::{HyperParams, ModelSpec, Parameterization, ProcessKind, ProcessParams};
use crate::likelihood::{cell_loglik, loglik_derivs, Excitation, ObservationPanel};
use crate::process::{rdse_precision, scse_precision, LatentField};
use crate::sparse::{SymSparse, SymTriplets};

/// Numerical settings for the inner and outer solvers and the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    /// Inner Newton stops when the accepted step has ∞-norm below this.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Lower bound on each curvature entry added to `Q`.
    pub curvature_floor: f64,
    /// Outer optimiser stops when the gradient ∞-norm is below this.
    pub outer_tol: f64,
    pub outer_max_iter: usize,
    /// Central-difference step on the unconstrained scale (gradient).
    pub fd_step: f64,
    /// Central-difference step on the unconstrained scale (Hessian).
    pub hessian_step: f64,
    /// Largest ∞-norm of a single outer step.
    pub max_step: f64,
    pub grid_dz: f64,
    pub grid_dpi: f64,
    pub grid_max_points: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            inner_tol: 1e-8,
            inner_max_iter: 100,
            curvature_floor: 1e-8,
            outer_tol: 1e-4,
            outer_max_iter: 200,
            fd_step: 1e-4,
            hessian_step: 1e-4,
            max_step: 1.5,
            grid_dz: 1.0,
            grid_dpi: 2.5,
            grid_max_points: 5000,
        }
    }
}

/// Gaussian approximation of `π(v | θ, Y)` at its mode.
#[derive(Debug, Clone)]
pub struct ModeResult {
    pub theta: HyperParams,
    /// Latent part of the mode, `x*(θ)`.
    pub x_star: LatentField,
    /// Fixed-effect part of the mode.
    pub beta: Vec<f64>,
    /// Full augmented mode `(x*, β*)`.
    pub v: Vec<f64>,
    /// Linear predictor at the mode.
    pub lambda: Vec<f64>,
    /// Prior precision of `v`, stored on the pattern of `Q*`.
    pub q: SymSparse,
    pub q_star: SymSparse,
    pub factor: CholeskyFactor,
    pub log_det_q: f64,
    pub log_det_q_star: f64,
    /// Data log likelihood at the mode.
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// True when the curvature had to be floored to keep `Q*` positive
    /// definite at the returned point.
    pub floored: bool,
}

impl ModeResult {
    /// `log π(Y | v*) − ½ v*ᵀQ v* + ½ log|Q| − ½ log|Q*|`.
    pub fn laplace_log_marginal(&self) -> f64 {
        self.loglik - 0.5 * self.q.quad_form(&self.v) + 0.5 * self.log_det_q - 0.5 * self.log_det_q_star
    }
}

/// A model bound to a graph and an observation panel, with all symbolic
/// work done once.
#[derive(Debug, Clone)]
pub struct Problem {
    spec: ModelSpec,
    param: Parameterization,
    graph: SpatialGraph,
    panel: ObservationPanel,
    settings: SolverSettings,
    /// Fixed-effect design, `n_sites x n_fixed`, row-major.
    design: Vec<f64>,
    n_fixed: usize,
    n_cells: usize,
    /// Pattern of `Q*` (all values zero).
    template: SymSparse,
    /// Reference pattern of the latent precision.
    q_pattern: SymSparse,
    /// Position in `template` of each stored entry of the latent precision.
    q_map: Vec<usize>,
    diag_pos: Vec<usize>,
    /// `(v_c, β_j)` and `(β_j, v_c)` positions, `n_cells x n_fixed`.
    cross_pos: Vec<(usize, usize)>,
    /// `(β_i, β_j)` positions, `n_fixed x n_fixed`.
    beta_pos: Vec<usize>,
    sym_star: Arc<SymbolicCholesky>,
    sym_q: Arc<SymbolicCholesky>,
}

/// Design matrix columns: intercept (if any) then the covariates.
fn build_design(spec: &ModelSpec, panel: &ObservationPanel) -> (Vec<f64>, usize) {
    let k = panel.covariates.width();
    let p = usize::from(spec.intercept) + k;
    let mut d = Vec::with_capacity(panel.n_sites * p);
    for s in 0..panel.n_sites {
        if spec.intercept {
            d.push(1.0);
        }
        d.extend_from_slice(panel.covariates.row(s));
    }
    (d, p)
}

/// Cholesky of the design Gram matrix with a relative pivot test.
fn check_design(design: &[f64], n_rows: usize, p: usize) -> Result<()> {
    let mut g = vec![0.0; p * p];
    for r in 0..n_rows {
        let row = &design[r * p..(r + 1) * p];
        for i in 0..p {
            for j in 0..p {
                g[i * p + j] += row[i] * row[j];
            }
        }
    }
    let mut l = vec![0.0; p * p];
    for j in 0..p {
        let d = g[j * p + j] - (0..j).map(|k| l[j * p + k] * l[j * p + k]).sum::<f64>();
        if !(d > 1e-10 * g[j * p + j]) {
            return Err(Error::SingularDesign { column: j });
        }
        l[j * p + j] = libm::sqrt(d);
        for i in j + 1..p {
            let x = g[i * p + j] - (0..j).map(|k| l[i * p + k] * l[j * p + k]).sum::<f64>();
            l[i * p + j] = x / l[j * p + j];
        }
    }
    Ok(())
}

impl Problem {
    pub fn new(spec: &ModelSpec, graph: &SpatialGraph, panel: &ObservationPanel, settings: SolverSettings) -> Result<Self> {
        if graph.n_sites() != panel.n_sites {
            return Err(Error::DimensionMismatch(format!(
                "graph has {} sites, panel has {}",
                graph.n_sites(),
                panel.n_sites
            )));
        }
        let param = Parameterization::new(spec, graph)?;
        let (design, n_fixed) = build_design(spec, panel);
        if n_fixed > 0 {
            check_design(&design, panel.n_sites, n_fixed)?;
        }
        let n_cells = panel.n_cells();
        let n_aug = n_cells + n_fixed;

        let reference = match spec.process {
            ProcessKind::Scse => {
                let (lo, hi) = param.theta1_range();
                HyperParams::scse(0.5 * (lo + hi), 1.0, None)
            }
            ProcessKind::Rdse => HyperParams::rdse(0.5, 0.1, 1.0, None),
        };
        let q_pattern = latent_precision_raw(spec, graph, panel.n_time, &reference.process)?;

        let mut t = SymTriplets::with_capacity(n_aug, q_pattern.nnz() + n_cells * (1 + 2 * n_fixed) + n_fixed * n_fixed);
        for j in 0..n_cells {
            let (rows, _) = q_pattern.column(j);
            for &i in rows {
                t.add_one(i, j, 0.0);
            }
            t.add_one(j, j, 0.0);
        }
        for c in 0..n_cells {
            for k in 0..n_fixed {
                t.add(c, n_cells + k, 0.0);
            }
        }
        for a in 0..n_fixed {
            for b in 0..n_fixed {
                t.add_one(n_cells + a, n_cells + b, 0.0);
            }
        }
        let template = t.build();

        let mut q_map = Vec::with_capacity(q_pattern.nnz());
        for j in 0..n_cells {
            let (rows, _) = q_pattern.column(j);
            for &i in rows {
                q_map.push(template.position(i, j).expect("template covers Q"));
            }
        }
        let diag_pos = (0..n_aug).map(|i| template.position(i, i).unwrap()).collect();
        let mut cross_pos = Vec::with_capacity(n_cells * n_fixed);
        for c in 0..n_cells {
            for k in 0..n_fixed {
                let b = n_cells + k;
                cross_pos.push((template.position(c, b).unwrap(), template.position(b, c).unwrap()));
            }
        }
        let mut beta_pos = Vec::with_capacity(n_fixed * n_fixed);
        for a in 0..n_fixed {
            for b in 0..n_fixed {
                beta_pos.push(template.position(n_cells + a, n_cells + b).unwrap());
            }
        }
        let sym_star = Arc::new(SymbolicCholesky::analyze(&template, n_fixed));
        let sym_q = Arc::new(SymbolicCholesky::analyze(&q_pattern, 0));
        Ok(Self {
            spec: spec.clone(),
            param,
            graph: graph.clone(),
            panel: panel.clone(),
            settings,
            design,
            n_fixed,
            n_cells,
            template,
            q_pattern,
            q_map,
            diag_pos,
            cross_pos,
            beta_pos,
            sym_star,
            sym_q,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn parameterization(&self) -> &Parameterization {
        &self.param
    }

    pub fn graph(&self) -> &SpatialGraph {
        &self.graph
    }

    pub fn panel(&self) -> &ObservationPanel {
        &self.panel
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_fixed(&self) -> usize {
        self.n_fixed
    }

    /// Dimension of the augmented latent vector.
    pub fn n_aug(&self) -> usize {
        self.n_cells + self.n_fixed
    }

    /// Names of the fixed effects: `beta0` then `beta_<covariate>`.
    pub fn fixed_effect_names(&self) -> Vec<alloc::string::String> {
        let mut v = Vec::new();
        if self.spec.intercept {
            v.push("beta0".into());
        }
        for n in &self.panel.covariates.names {
            v.push(format!("beta_{n}"));
        }
        v
    }

    pub fn excitation(&self, h: &HyperParams) -> Excitation {
        Excitation {
            eta: h.eta_value(),
            initial: self.spec.initial,
        }
    }

    fn design_row(&self, site: usize) -> &[f64] {
        &self.design[site * self.n_fixed..(site + 1) * self.n_fixed]
    }

    /// `λ = A v`.
    pub fn linear_predictor(&self, v: &[f64]) -> Vec<f64> {
        let s = self.panel.n_sites;
        let beta = &v[self.n_cells..];
        let offsets: Vec<f64> = (0..s)
            .map(|site| self.design_row(site).iter().zip(beta).map(|(f, b)| f * b).sum())
            .collect();
        (0..self.n_cells).map(|c| v[c] + offsets[c % s]).collect()
    }

    /// `Aᵀ w` for a cell vector `w`.
    pub fn transpose_apply(&self, w: &[f64]) -> Vec<f64> {
        let s = self.panel.n_sites;
        let mut out = vec![0.0; self.n_aug()];
        out[..self.n_cells].copy_from_slice(w);
        for (c, &wc) in w.iter().enumerate() {
            for (k, f) in self.design_row(c % s).iter().enumerate() {
                out[self.n_cells + k] += f * wc;
            }
        }
        out
    }

    /// Latent-process precision for `h` on its native pattern.
    pub fn latent_precision(&self, h: &HyperParams) -> Result<SymSparse> {
        let q = latent_precision_raw(&self.spec, &self.graph, self.panel.n_time, &h.process)?;
        if !q.same_pattern(&self.q_pattern) {
            return Err(Error::PatternMismatch);
        }
        Ok(q)
    }

    /// Prior precision of `v` on the pattern of `Q*`.
    pub fn augmented_precision(&self, q_latent: &SymSparse) -> SymSparse {
        let mut q = self.template.clone();
        let vals = q.values_mut();
        for (k, &v) in q_latent.values().iter().enumerate() {
            vals[self.q_map[k]] += v;
        }
        let prec = 1.0 / self.spec.priors.beta_variance;
        for k in 0..self.n_fixed {
            vals[self.diag_pos[self.n_cells + k]] += prec;
        }
        q
    }

    /// `log π(Y | λ)` summed over active cells.
    pub fn data_loglik(&self, lambda: &[f64], exc: &Excitation) -> f64 {
        let s = self.panel.n_sites;
        let mut acc = 0.0;
        for t in 0..self.panel.n_time {
            if !exc.is_active(t) {
                continue;
            }
            for site in 0..s {
                let c = t * s + site;
                acc += cell_loglik(lambda[c], self.panel.counts[c], exc.previous(&self.panel, site, t), exc.eta);
            }
        }
        acc
    }

    fn derivs(&self, lambda: &[f64], exc: &Excitation) -> (Vec<f64>, Vec<f64>) {
        let s = self.panel.n_sites;
        let mut d1 = vec![0.0; self.n_cells];
        let mut d2 = vec![0.0; self.n_cells];
        for t in 0..self.panel.n_time {
            if !exc.is_active(t) {
                continue;
            }
            for site in 0..s {
                let c = t * s + site;
                let (a, b) = loglik_derivs(lambda[c], self.panel.counts[c], exc.previous(&self.panel, site, t), exc.eta);
                d1[c] = a;
                d2[c] = b;
            }
        }
        (d1, d2)
    }

    /// Exact log full conditional of `v` up to a constant.
    pub fn full_conditional(&self, q_aug: &SymSparse, v: &[f64], exc: &Excitation) -> f64 {
        self.data_loglik(&self.linear_predictor(v), exc) - 0.5 * q_aug.quad_form(v)
    }

    /// Gradient of the exact log full conditional, `Aᵀ d1 − Q v`.
    pub fn full_conditional_gradient(&self, h: &HyperParams, v: &[f64]) -> Result<Vec<f64>> {
        let q = self.augmented_precision(&self.latent_precision(h)?);
        let exc = self.excitation(h);
        let (d1, _) = self.derivs(&self.linear_predictor(v), &exc);
        let mut g = self.transpose_apply(&d1);
        for (gi, qv) in g.iter_mut().zip(q.mul_vec(v)) {
            *gi -= qv;
        }
        Ok(g)
    }

    /// `Q + Aᵀ diag(c) A`.
    fn updated_precision(&self, q_aug: &SymSparse, c: &[f64]) -> SymSparse {
        let s = self.panel.n_sites;
        let p = self.n_fixed;
        let mut qs = q_aug.clone();
        let vals = qs.values_mut();
        let mut bb = vec![0.0; p * p];
        for (cell, &w) in c.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            vals[self.diag_pos[cell]] += w;
            let f = self.design_row(cell % s);
            for k in 0..p {
                let (a, b) = self.cross_pos[cell * p + k];
                let x = w * f[k];
                vals[a] += x;
                vals[b] += x;
            }
            for i in 0..p {
                for j in 0..p {
                    bb[i * p + j] += w * f[i] * f[j];
                }
            }
        }
        for (k, &x) in bb.iter().enumerate() {
            vals[self.beta_pos[k]] += x;
        }
        qs
    }

    #[allow(clippy::type_complexity)]
    fn factor_updated(
        &self,
        q: &SymSparse,
        c: Vec<f64>,
        pin: Option<(usize, f64)>,
    ) -> Result<(Vec<f64>, SymSparse, Option<Vec<(usize, f64)>>, CholeskyFactor)> {
        let mut q_star = self.updated_precision(q, &c);
        let pinned_column = pin.map(|(i, _)| pin_coordinate(&mut q_star, i));
        let factor = CholeskyFactor::factor(&self.sym_star, &q_star)?;
        Ok((c, q_star, pinned_column, factor))
    }

    fn theta_values(&self, h: &HyperParams) -> Vec<f64> {
        self.param.names().iter().filter_map(|n| h.get(n)).collect()
    }

    /// Mode of the Gaussian approximation by damped Newton iterations from
    /// `v_init` (zeros when `None`).
    pub fn gaussian_approx(&self, h: &HyperParams, v_init: Option<&[f64]>) -> Result<ModeResult> {
        let q_latent = self.latent_precision(h)?;
        let q_factor = CholeskyFactor::factor(&self.sym_q, &q_latent)?;
        let q = self.augmented_precision(&q_latent);
        let log_det_q = q_factor.log_det() + self.n_fixed as f64 * -libm::log(self.spec.priors.beta_variance);
        self.mode_with_prior(h, q, log_det_q, v_init, None)
    }

    /// Like [`Problem::gaussian_approx`] but with coordinate `pin.0` held at
    /// `pin.1`; `q_star` and its factor then describe the remaining
    /// coordinates (the pinned row and column are replaced by the identity).
    pub(crate) fn mode_with_prior(
        &self,
        h: &HyperParams,
        q: SymSparse,
        log_det_q: f64,
        v_init: Option<&[f64]>,
        pin: Option<(usize, f64)>,
    ) -> Result<ModeResult> {
        let exc = self.excitation(h);
        exc.validate()?;
        let n = self.n_aug();
        let mut v = match v_init {
            Some(x) if x.len() == n => x.to_vec(),
            Some(_) => return Err(Error::DimensionMismatch("initial latent vector".into())),
            None => vec![0.0; n],
        };
        if let Some((i, a)) = pin {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            v[i] = a;
        }
        let floor = self.settings.curvature_floor;
        let tol = self.settings.inner_tol;
        let mut f = self.full_conditional(&q, &v, &exc);
        let mut converged = false;
        let mut iterations = 0;
        loop {
            let lambda = self.linear_predictor(&v);
            let (d1, d2) = self.derivs(&lambda, &exc);
            let active = |i: usize| exc.is_active(i / self.panel.n_sites);
            // Exact curvature while the updated precision stays positive
            // definite; otherwise every entry is floored.
            let exact: Vec<f64> = d2.iter().enumerate().map(|(i, &x)| if active(i) { -x } else { 0.0 }).collect();
            let mut floored = false;
            let (c, q_star, pinned_column, factor) = match self.factor_updated(&q, exact, pin) {
                Ok(r) => r,
                Err(_) => {
                    floored = true;
                    let floored: Vec<f64> = d2
                        .iter()
                        .enumerate()
                        .map(|(i, &x)| if active(i) { (-x).max(floor) } else { 0.0 })
                        .collect();
                    self.factor_updated(&q, floored, pin).map_err(|_| Error::IndefiniteCurvature {
                        theta: self.theta_values(h),
                    })?
                }
            };
            if converged || iterations >= self.settings.inner_max_iter {
                let loglik = self.data_loglik(&lambda, &exc);
                let log_det_q_star = factor.log_det();
                return Ok(ModeResult {
                    theta: *h,
                    x_star: LatentField::from_values(self.panel.n_sites, self.panel.n_time, v[..self.n_cells].to_vec())?,
                    beta: v[self.n_cells..].to_vec(),
                    v,
                    lambda,
                    q,
                    q_star,
                    factor,
                    log_det_q,
                    log_det_q_star,
                    loglik,
                    iterations,
                    converged,
                    floored,
                });
            }
            iterations += 1;
            let b: Vec<f64> = d1.iter().zip(&c).zip(&lambda).map(|((d, w), l)| d + w * l).collect();
            let mut rhs = self.transpose_apply(&b);
            if let (Some((i, a)), Some(col)) = (pin, &pinned_column) {
                for &(r, x) in col {
                    rhs[r] -= x * a;
                }
                rhs[i] = a;
            }
            let target = factor.solve(&rhs);
            let step: Vec<f64> = target.iter().zip(&v).map(|(a, b)| a - b).collect();
            let step_norm = step.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            // Ascent is judged up to rounding of the objective itself.
            let slack = 1e-13 * f.abs().max(1.0);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand: Vec<f64> = v.iter().zip(&step).map(|(a, s)| a + t * s).collect();
                let fc = self.full_conditional(&q, &cand, &exc);
                if fc >= f - slack {
                    v = cand;
                    f = fc.max(f);
                    accepted = true;
                    break;
                }
                t *= 0.5;
                if t * step_norm < 1e-3 * tol {
                    break;
                }
            }
            if !accepted {
                converged = step_norm < tol;
                if !converged {
                    iterations = self.settings.inner_max_iter;
                }
                continue;
            }
            if t * step_norm < tol {
                converged = true;
            }
        }
    }

    /// `log π̃(θ | Y)` on the constrained scale.
    pub fn log_posterior_theta(&self, h: &HyperParams) -> Result<f64> {
        Ok(self.log_posterior_with_mode(h, None)?.0)
    }

    /// Log posterior together with the mode used to compute it.
    pub fn log_posterior_with_mode(&self, h: &HyperParams, warm: Option<&[f64]>) -> Result<(f64, Option<ModeResult>)> {
        let lp = self.param.log_prior(h);
        if lp == f64::NEG_INFINITY {
            return Ok((f64::NEG_INFINITY, None));
        }
        let mode = self.gaussian_approx(h, warm)?;
        if !mode.converged {
            return Err(Error::NonConvergence {
                iterations: mode.iterations,
                trace: vec![self.theta_values(h)],
            });
        }
        Ok((mode.laplace_log_marginal() + lp, Some(mode)))
    }

    /// Log posterior on the unconstrained scale (with the Jacobian).
    pub fn log_posterior_unconstrained(&self, u: &[f64], warm: Option<&[f64]>) -> Result<(f64, Option<ModeResult>)> {
        let (h, log_jac) = self.param.from_unconstrained(u)?;
        let (lp, mode) = self.log_posterior_with_mode(&h, warm)?;
        Ok((lp + log_jac, mode))
    }
}

/// Replaces row and column `i` by those of the identity, returning the
/// original off-diagonal column entries.
fn pin_coordinate(m: &mut SymSparse, i: usize) -> Vec<(usize, f64)> {
    let (rows, vals) = m.column(i);
    let col: Vec<(usize, f64)> = rows.iter().zip(vals).filter(|(&r, _)| r != i).map(|(&r, &x)| (r, x)).collect();
    for &(r, _) in &col {
        let a = m.position(r, i).unwrap();
        let b = m.position(i, r).unwrap();
        m.values_mut()[a] = 0.0;
        m.values_mut()[b] = 0.0;
    }
    let d = m.position(i, i).unwrap();
    m.values_mut()[d] = 1.0;
    col
}

fn latent_precision_raw(spec: &ModelSpec, graph: &SpatialGraph, n_time: usize, p: &ProcessParams) -> Result<SymSparse> {
    match (spec.process, p) {
        (ProcessKind::Scse, ProcessParams::Scse(p)) => Ok(scse_precision(graph, p, n_time)?.matrix),
        (ProcessKind::Rdse, ProcessParams::Rdse(p)) => Ok(rdse_precision(graph, p, n_time, spec.boundary)?.matrix),
        _ => Err(Error::InvalidConfig("hyperparameters do not match the model".into())),
    }
}

impl ThetaObjective for Problem {
    type State = Vec<f64>;

    fn dim(&self) -> usize {
        self.param.dim()
    }

    fn evaluate(&self, u: &[f64], warm: Option<&Vec<f64>>) -> Result<(f64, Vec<f64>)> {
        match self.log_posterior_unconstrained(u, warm.map(|w| w.as_slice())) {
            Ok((lp, Some(mode))) => Ok((lp, mode.v)),
            Ok((lp, None)) => Ok((lp, warm.cloned().unwrap_or_else(|| vec![0.0; self.n_aug()]))),
            Err(e) => Err(e),
        }
    }

    fn constrained(&self, u: &[f64]) -> Vec<f64> {
        match self.param.from_unconstrained(u) {
            Ok((h, _)) => self.theta_values(&h),
            Err(_) => vec![f64::NAN; u.len()],
        }
    }
}
