use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid has {sites} sites, above the cap of {cap}")]
    SiteCap { sites: u128, cap: usize },
    #[error("grid mismatch between operands")]
    GridMismatch,
    #[error("value count {got} does not match the {expected} grid sites")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at site {0}")]
    NonFinite(usize),
    #[error("Wick power {0} is outside 1..=4")]
    WickOrder(u32),
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("all three scales vanish; request the free theory explicitly")]
    FreeTheory,
    #[error("{sites} sites per side cannot be split into {blocks} blocks per side")]
    IndivisibleBlocks { sites: usize, blocks: usize },
    #[error("invalid chain configuration: {0}")]
    Chain(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("test function `{0}` takes negative values")]
    NegativeTestFunction(String),
    #[error("spatial mean {mean} exceeds eps = {eps}")]
    MeanAboveEps { mean: f64, eps: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
