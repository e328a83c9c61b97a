//! Data generators for the reference study designs and custom settings.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::hyper::{EtaMode, HyperParams, ModelSpec, ProcessKind, ProcessParams};
use crate::likelihood::{simulate_counts, Covariates, Excitation, FixedEffects, ObservationPanel};
use crate::process::{
    rdse_precision, rdse_propagator, sample_latent, scse_precision, standard_normal_vec, Boundary, LatentField,
};

/// Everything used to generate a data set.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub process: ProcessKind,
    pub hyper: HyperParams,
    pub beta: Vec<f64>,
    pub boundary: Boundary,
    pub seed: u64,
    pub graph_fingerprint: u64,
    pub n_sites: usize,
    pub n_time: usize,
    /// Torus shape, when the graph is a torus.
    pub lattice: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct Study {
    pub graph: SpatialGraph,
    pub latent: LatentField,
    pub panel: ObservationPanel,
    pub truth: Truth,
}

/// How the latent field is initialised.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum LatentStart {
    /// Draw the whole field from the process precision.
    #[default]
    Process,
    /// Start from a given first time block and run the dynamics forward
    /// (reaction-diffusion), or add it to every block (spatial model).
    Fixed(Vec<f64>),
}

pub const STUDY_SIDE: usize = 8;
pub const STUDY_TIMES: usize = 100;

/// Truth of the reference spatial self-exciting design.
pub fn scse_study_params() -> (HyperParams, FixedEffects) {
    (HyperParams::scse(0.22, 0.4, Some(0.2)), FixedEffects::intercept(-1.0))
}

/// Truth of the reference reaction-diffusion design.
pub fn rdse_study_params() -> (HyperParams, FixedEffects) {
    (HyperParams::rdse(0.1, 0.2, 0.25, Some(0.4)), FixedEffects::intercept(0.0))
}

pub fn generate_scse_study(seed: u64) -> Result<Study> {
    let g = SpatialGraph::torus(STUDY_SIDE, STUDY_SIDE)?;
    let (h, fe) = scse_study_params();
    let mut st = generate_custom(
        &ModelSpec::scse(EtaMode::Free),
        &g,
        STUDY_TIMES,
        &h,
        &fe,
        &Covariates::empty(),
        &LatentStart::Process,
        seed,
    )?;
    st.truth.lattice = Some((STUDY_SIDE, STUDY_SIDE));
    Ok(st)
}

pub fn generate_rdse_study(seed: u64) -> Result<Study> {
    let g = SpatialGraph::torus(STUDY_SIDE, STUDY_SIDE)?;
    let (h, fe) = rdse_study_params();
    let mut st = generate_custom(
        &ModelSpec::rdse(EtaMode::Free),
        &g,
        STUDY_TIMES,
        &h,
        &fe,
        &Covariates::empty(),
        &LatentStart::Process,
        seed,
    )?;
    st.truth.lattice = Some((STUDY_SIDE, STUDY_SIDE));
    Ok(st)
}

/// Generates a latent field and counts for any model, graph and parameter
/// set. One ChaCha stream seeded by `seed` drives the latent draw followed
/// by the counts.
#[allow(clippy::too_many_arguments)]
pub fn generate_custom(
    spec: &ModelSpec,
    g: &SpatialGraph,
    n_time: usize,
    h: &HyperParams,
    fe: &FixedEffects,
    covariates: &Covariates,
    start: &LatentStart,
    seed: u64,
) -> Result<Study> {
    let s = g.n_sites();
    if covariates.values.len() != s * covariates.width() {
        return Err(Error::DimensionMismatch("covariate table does not match the graph".into()));
    }
    let eta = match spec.eta {
        EtaMode::Off => 0.0,
        EtaMode::Fixed(e) => e,
        EtaMode::Free => h.eta_value(),
    };
    let exc = Excitation::new(eta);
    exc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = match (spec.process, &h.process) {
        (ProcessKind::Scse, ProcessParams::Scse(p)) => {
            let q = scse_precision(g, p, n_time)?;
            let mut x = sample_latent(&q, &mut rng)?;
            if let LatentStart::Fixed(x0) = start {
                check_start(x0, s)?;
                for (i, v) in x.values.iter_mut().enumerate() {
                    *v += x0[i % s];
                }
            }
            x
        }
        (ProcessKind::Rdse, ProcessParams::Rdse(p)) => match start {
            LatentStart::Process => sample_latent(&rdse_precision(g, p, n_time, spec.boundary)?, &mut rng)?,
            LatentStart::Fixed(x0) => {
                check_start(x0, s)?;
                p.validate_stationary()?;
                let m = rdse_propagator(g, p)?;
                let sd = libm::sqrt(p.sigma2);
                let mut values = Vec::with_capacity(s * n_time);
                values.extend_from_slice(x0);
                for t in 1..n_time {
                    let prev = &values[(t - 1) * s..t * s];
                    let next: Vec<f64> = m
                        .apply(prev)
                        .into_iter()
                        .zip(standard_normal_vec(&mut rng, s))
                        .map(|(a, z)| a + sd * z)
                        .collect();
                    values.extend(next);
                }
                LatentField::from_values(s, n_time, values)?
            }
        },
        _ => return Err(Error::InvalidConfig("hyperparameters do not match the model".into())),
    };
    let panel = simulate_counts(&latent, fe, &exc, covariates, &mut rng)?;
    let hyper = HyperParams {
        process: h.process,
        eta: match spec.eta {
            EtaMode::Off => None,
            _ => Some(eta),
        },
    };
    Ok(Study {
        graph: g.clone(),
        latent,
        panel,
        truth: Truth {
            process: spec.process,
            hyper,
            beta: fe.beta.clone(),
            boundary: spec.boundary,
            seed,
            graph_fingerprint: g.fingerprint(),
            n_sites: s,
            n_time,
            lattice: None,
        },
    })
}

fn check_start(x0: &[f64], s: usize) -> Result<()> {
    if x0.len() != s || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::DimensionMismatch("initial latent state must have one finite value per site".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scse_study_shape_and_reproducibility() {
        let a = generate_scse_study(7).unwrap();
        assert_eq!(a.panel.n_cells(), 6400);
        let b = generate_scse_study(7).unwrap();
        assert_eq!(a.panel, b.panel);
        let mean = a.panel.total() as f64 / 6400.0;
        assert!(mean > 0.2 && mean < 2.0, "{mean}");
        assert!(a.latent.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rdse_study_shape() {
        let a = generate_rdse_study(3).unwrap();
        assert_eq!(a.panel.n_cells(), 6400);
        assert_eq!(a.truth.graph_fingerprint, SpatialGraph::torus(8, 8).unwrap().fingerprint());
        assert_eq!(a.truth.boundary, Boundary::Stationary);
    }

    #[test]
    fn eta_off_matches_eta_fixed_zero() {
        let g = SpatialGraph::torus(3, 3).unwrap();
        let h = HyperParams::scse(0.1, 0.5, None);
        let fe = FixedEffects::intercept(0.3);
        let run = |m| {
            generate_custom(&ModelSpec::scse(m), &g, 5, &h, &fe, &Covariates::empty(), &LatentStart::Process, 9)
                .unwrap()
                .panel
        };
        assert_eq!(run(EtaMode::Off), run(EtaMode::Fixed(0.0)));
    }
}
