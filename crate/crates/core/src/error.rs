use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("loss must be scalar (got shape {0:?})")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("cutoff out of range: k={cutoff}, horizon={horizon}")]
    CutoffOutOfRange { cutoff: usize, horizon: usize },

    #[error("time out of range: t={0}")]
    TimeOutOfRange(f64),

    #[error("diverged: training loss is not finite")]
    Diverged,

    #[error("sampler diverged at step {step}")]
    SamplerDiverged { step: usize },

    #[error("jitter frequency out of band: m_hf={m_hf}, horizon={horizon}")]
    JitterOutOfBand { m_hf: usize, horizon: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGradient | Error::Diverged | Error::SamplerDiverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
