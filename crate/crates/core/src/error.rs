use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("population component {component} fell to {value} at t = {t}")]
    NegativePopulation {
        t: f64,
        component: &'static str,
        value: f64,
    },

    #[error("density fell to {value} at t = {t} (tolerance {tolerance})")]
    NegativeDensity { t: f64, value: f64, tolerance: f64 },

    #[error("repeated eigenvalue in the linearized SEIR spectrum (r = {r})")]
    DegenerateSpectrum { r: f64 },

    #[error("grid resolution {0} is not a power of two >= 64")]
    BadResolution(usize),

    #[error("blue steady state is infeasible (phi_I = {phi_i})")]
    InfeasibleState { phi_i: f64 },

    #[error("no reaction can fire (total propensity is zero)")]
    Extinction,

    #[error("imaginary part of the Langevin field exceeded 10% of the real part at t = {t}")]
    ImaginaryBlowup { t: f64 },

    #[error("gradient descent stalled after {halvings} consecutive step halvings")]
    Stalled { halvings: usize },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{0}: no data rows")]
    EmptyFile(PathBuf),

    #[error("series too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::NegativePopulation { .. }
                | Error::NegativeDensity { .. }
                | Error::DegenerateSpectrum { .. }
                | Error::InfeasibleState { .. }
                | Error::ImaginaryBlowup { .. }
                | Error::Stalled { .. }
        )
    }
}
