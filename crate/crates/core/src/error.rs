use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the model-building and inference routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid lattice {rows}x{cols}: both dimensions must be at least 3")]
    InvalidLattice { rows: usize, cols: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("graph has no edges, so the spatial autoregression has no valid parameter bounds")]
    NoValidBounds,

    #[error("parameter {name} = {value} outside ({lower}, {upper})")]
    ParameterSpace {
        name: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("site {site} has no neighbours; the degree-normalised Laplacian is undefined")]
    DegenerateDegree { site: usize },

    #[error("propagator spectral radius {radius} is not below 1")]
    NonStationary { radius: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("sparsity pattern does not match the symbolic analysis")]
    PatternMismatch,

    #[error("updated precision could not be factorised at theta = {theta:?}")]
    IndefiniteCurvature { theta: Vec<f64> },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no convergence after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        trace: Vec<Vec<f64>>,
    },

    #[error("grid has only {distinct} distinct abscissae for this parameter (need at least 3)")]
    InsufficientGrid { distinct: usize },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("fixed-effect design is singular (column {column} is collinear with earlier columns)")]
    SingularDesign { column: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = core::result::Result<T, Error>;
