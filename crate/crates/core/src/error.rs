use thiserror::Error;

/// Errors surfaced by the simulator, estimator and harness.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("vertex index {0} out of range (expected 0..12)")]
    VertexIndex(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("collision delta requested with no active contacts")]
    NoActiveContacts,
    #[error("estimator fault: {0}")]
    EstimatorFault(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config parse error: {0}")]
    Config(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

pub(crate) fn ensure_finite_vec(v: &nalgebra::Vector3<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(SimError::NonFinite(what))
    }
}
