use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KpoError {
    #[error("invalid Fock space: dimension {dim} < 2")]
    InvalidSpace { dim: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("ambiguous steady state: two eigenvalues near zero ({lambda0}, {lambda1})")]
    AmbiguousSteadyState { lambda0: String, lambda1: String },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("integrator failed at t = {t}: {reason}")]
    IntegratorFailure { t: f64, reason: String },

    #[error("trace drift {drift:e} at t = {t}")]
    TraceDrift { t: f64, drift: f64 },

    #[error("positivity violated at t = {t} (min eigenvalue {min_eigenvalue:e}); reduce the step size")]
    StepSize { t: f64, min_eigenvalue: f64 },

    #[error("no phase switch found (largest jump {max_jump:.3} rad)")]
    NoSwitch { max_jump: f64 },

    #[error("arctan fit did not converge from {initial:?}; residual trace {residuals:?}")]
    FitFailed { initial: [f64; 3], residuals: Vec<f64> },

    #[error("calibration failed: Δ*(F) not monotone at grid points {offending:?}")]
    CalibrationFailed { offending: Vec<usize> },

    #[error("Δ* = {delta_star} outside calibrated range [{lo}, {hi}]")]
    Extrapolation { delta_star: f64, lo: f64, hi: f64 },

    #[error("protocol degraded: {failed} of {total} shots failed ({taxonomy})")]
    ProtocolDegraded { failed: usize, total: usize, taxonomy: String },

    #[error("Husimi grid not normalized: mass {mass}")]
    UnnormalizedGrid { mass: f64 },

    #[error("state is not pure (purity {purity})")]
    NotPure { purity: f64 },

    #[error("Fisher information formulas disagree: {eigenbasis} vs {spectral}")]
    FormulaMismatch { eigenbasis: f64, spectral: f64 },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for KpoError {
    fn from(e: std::io::Error) -> Self {
        KpoError::Io(e.to_string())
    }
}

impl KpoError {
    /// Errors that stem from bad user input rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            KpoError::InvalidSpace { .. }
                | KpoError::InvalidParams(_)
                | KpoError::InvalidConfig(_)
                | KpoError::Extrapolation { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, KpoError>;
