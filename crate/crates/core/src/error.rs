use serde::Serialize;
use thiserror::Error;

/// Witness attached to an infeasibility verdict.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InfeasibilityWitness {
    /// Name of the violated identity, e.g. `"displacement"` or `"farkas_ray"`.
    pub identity: String,
    /// Signed defect of the identity (or `b·y` of the Farkas ray).
    pub defect: f64,
    /// Free-form numeric context (means, integrals, ray norms).
    pub details: Vec<(String, f64)>,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("CFL violation at step {step}: courant number {courant:.4} > 1")]
    Cfl { step: usize, courant: f64 },

    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: String, detail: String },

    #[error("no convergence after {iterations} iterations (last residual {last_residual:.3e})")]
    NonConvergence {
        iterations: usize,
        last_residual: f64,
        history: Vec<f64>,
    },

    #[error("root finding failed: {0}")]
    RootFind(String),

    #[error("degenerate price equation at step {step}: denominator {denominator:.3e} < {bound:.3e}")]
    Degenerate {
        step: usize,
        denominator: f64,
        bound: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("negative mass {value:.3e} at step {step}, node {node}")]
    NegativeMass { step: usize, node: usize, value: f64 },

    #[error("linear program is infeasible ({})", .0.identity)]
    Infeasible(InfeasibilityWitness),

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("at {label}: {source}")]
    Context {
        label: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            detail: detail.into(),
        }
    }

    /// Wraps the error with a label (refinement level, viscosity value, ...).
    pub fn with_context(self, label: impl Into<String>) -> Self {
        Error::Context {
            label: label.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error after stripping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
