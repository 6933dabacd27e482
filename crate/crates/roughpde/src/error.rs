//! Error type shared by every stage of the pipeline.

use thiserror::Error;

/// Pipeline stage that raised an error. Surfaced in diagnostics so a failed
/// run can be attributed to driver construction, the flow solve, operator
/// conjugation, the finite-difference scheme, or the assembled pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    RoughPath,
    Flow,
    Operators,
    PdeSolve,
    Rpde,
}

impl Stage {
    pub fn tag(self) -> &'static str {
        match self {
            Stage::RoughPath => "roughpath",
            Stage::Flow => "flow",
            Stage::Operators => "operators",
            Stage::PdeSolve => "pdesolve",
            Stage::Rpde => "rpde",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("times must be strictly increasing and start at 0")]
    NonMonotoneTimes,

    #[error("unsupported variation exponent p = {0}; this crate handles 1 <= p < 3")]
    UnsupportedVariation(f64),

    #[error("mesh point t = {0} does not lie on the fine driver grid")]
    MeshNotNested(f64),

    #[error("invalid axis pair (i = {i}, j = {j}) for dimension d = {d}")]
    InvalidAxes { i: usize, j: usize, d: usize },

    #[error("bracket word must have length >= 2")]
    WordTooShort,

    #[error("vector field index {0} out of range ({1} fields)")]
    FieldIndex(usize, usize),

    #[error("query time t = {t} outside the driver horizon [0, {horizon}]")]
    Extrapolation { t: f64, horizon: f64 },

    #[error("flow trajectory diverged near t = {t}: |y| = {norm:.3e} exceeded the guard {guard:.1e}")]
    FlowDiverged { t: f64, norm: f64, guard: f64 },

    #[error("adaptive step size underflowed near t = {t} (local error {err:.3e})")]
    StepUnderflow { t: f64, err: f64 },

    #[error("control set is empty")]
    EmptyControlSet,

    #[error("operator kind `{0}` has no finite-difference realization")]
    SchemeUnsupported(&'static str),

    #[error(
        "cross-diffusion too strong for the seven-point stencil at node {node:?}: \
         a11 = {a11:.4e}, a22 = {a22:.4e}, |a12| = {a12:.4e}"
    )]
    NotDiagonallyDominant {
        node: Vec<usize>,
        a11: f64,
        a22: f64,
        a12: f64,
    },

    #[error("explicit step lost monotonicity at node {node:?}: {detail}")]
    NonMonotone { node: Vec<usize>, detail: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("unsupported spatial dimension n = {0}; the scheme covers n = 1 and n = 2")]
    UnsupportedGridDim(usize),

    #[error("non-finite value produced at stage {stage}: {detail}")]
    NonFinite { stage: Stage, detail: String },

    #[error("{stage}: {msg}")]
    Invalid { stage: Stage, msg: String },
}

impl Error {
    pub fn invalid(stage: Stage, msg: impl Into<String>) -> Self {
        Error::Invalid {
            stage,
            msg: msg.into(),
        }
    }

    /// Stage attribution for diagnostics.
    pub fn stage(&self) -> Stage {
        match self {
            Error::NonMonotoneTimes
            | Error::UnsupportedVariation(_)
            | Error::MeshNotNested(_)
            | Error::InvalidAxes { .. } => Stage::RoughPath,
            Error::WordTooShort
            | Error::FieldIndex(..)
            | Error::Extrapolation { .. }
            | Error::FlowDiverged { .. }
            | Error::StepUnderflow { .. } => Stage::Flow,
            Error::EmptyControlSet | Error::SchemeUnsupported(_) => Stage::Operators,
            Error::NotDiagonallyDominant { .. }
            | Error::NonMonotone { .. }
            | Error::GridMismatch(_)
            | Error::UnsupportedGridDim(_) => Stage::PdeSolve,
            Error::NonFinite { stage, .. } | Error::Invalid { stage, .. } => *stage,
            Error::DimensionMismatch(_) => Stage::Rpde,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
