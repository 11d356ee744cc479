use alloc::string::String;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("histogram has all of its mass in a single bin")]
    SingleClassHistogram,
    #[error("every gene exceeded the missing-value limit")]
    AllGenesDropped,
    #[error("need at least {min} cases, got {got}")]
    TooFewCases { got: usize, min: usize },
    #[error("need more than {t} points for neighbour order {t}, got {got}")]
    TooFewPoints { got: usize, t: usize },
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { got: usize, min: usize },
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch { context: &'static str, expected: usize, got: usize },
    #[error("{heads} heads do not divide model width {d}")]
    HeadsDontDivide { d: usize, heads: usize },
    #[error("no tiles available")]
    NoTiles,
    #[error("encoder failure: {0}")]
    EncoderFailure(String),
    #[error("missing labels: {0}")]
    MissingLabels(String),
    #[error("non-finite {what} at step {step}")]
    NonFiniteLoss { step: u64, what: &'static str },
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { context, expected, got })
    }
}
