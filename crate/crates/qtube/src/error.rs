//! Error type shared by the solver modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("conformal parameter problem did not converge: residual {residual:.3e} after {iterations} iterations (tolerance {tolerance:.3e})")]
    ParameterProblem {
        residual: f64,
        iterations: usize,
        tolerance: f64,
    },

    #[error("evaluation at a sharp-corner prevertex (u = {u:.6})")]
    SingularPoint { u: f64 },

    #[error("rounding radius {radius:.3e} too large for corner {corner} (limit {limit:.3e})")]
    RoundingTooLarge {
        corner: usize,
        radius: f64,
        limit: f64,
    },

    #[error("cutoff-degenerate energy: axial wavenumber of mode {mode} vanishes")]
    CutoffDegenerate { mode: usize },

    #[error("splitting operator is singular at u = {u:.6} (mode {mode})")]
    SingularSplitter { u: f64, mode: usize },

    #[error("truncation N = {requested} exceeds the {available} available cosine coefficients")]
    InsufficientCoefficients { requested: usize, available: usize },

    #[error("sample grid of {got} points cannot resolve {needed} modes")]
    InsufficientResolution { got: usize, needed: usize },

    #[error("reflection norm {norm:.3e} exceeded the blow-up bound at u = {u:.6}; likely proximity to a bound state")]
    RiccatiBlowUp { u: f64, norm: f64 },

    #[error("ODE integrator failed at u = {u:.6}: {reason}")]
    IntegratorFailure { u: f64, reason: String },

    #[error("singular interface system in composition (condition estimate {condition:.3e}); possible trapped mode")]
    SingularInterface { condition: f64 },

    #[error("incompatible interface: {0}")]
    IncompatibleInterface(String),

    #[error("cut point x = {x:.6} does not lie in a straight horizontal section")]
    InvalidCutPoint { x: f64 },

    #[error("singular mode-matching system")]
    SingularMatching,

    #[error("grid too coarse: grid-halving disagreement {disagreement:.3e}")]
    GridTooCoarse { disagreement: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<V> = std::result::Result<V, SolverError>;
