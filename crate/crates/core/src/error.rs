use thiserror::Error;

/// Errors raised by the reconstruction toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("refinement error: {0}")]
    Refinement(String),
    #[error("stability error: time step {dt} exceeds CFL bound {dt_max}")]
    Stability { dt: f64, dt_max: f64 },
    #[error("divergence detected at step {step}")]
    Divergence { step: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("line search stalled after {trials} trials")]
    LineSearchStall { trials: usize },
    #[error("gradient vanishes identically, nothing to refine")]
    ConvergedFlat,
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors that stem from the numerics rather than from inputs or files.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Stability { .. }
                | Error::Divergence { .. }
                | Error::LineSearchStall { .. }
                | Error::ConvergedFlat
                | Error::Calibration(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
