use thiserror::Error;

/// Errors raised anywhere in the conditioner pipeline.
#[derive(Debug, Error)]
pub enum NcError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("matrix is not symmetric positive definite (pivot {pivot} = {value:e})")]
    NotSpd { pivot: usize, value: f64 },

    #[error("degenerate conditioning: {0}")]
    DegenerateConditioning(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value in {block}")]
    NonFinite { block: String },

    #[error("numeric failure at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<NcError>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid mask: {0}")]
    Mask(String),

    #[error("bandwidth error: {0}")]
    Bandwidth(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NcError {
    /// True for failures that originate in arithmetic rather than in
    /// configuration or input validation.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            NcError::NonFinite { .. }
                | NcError::NotSpd { .. }
                | NcError::DegenerateConditioning(_)
                | NcError::AtStep { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, NcError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NcError::Shape(msg.into()))
}
