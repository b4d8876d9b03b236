use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("ellipticity violated: word {word:?}, displacement {displacement}, probability {value} below floor")]
    EllipticityViolation { word: Vec<u8>, displacement: i64, value: f64 },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("malformed local word: expected length {expected}, got {got}")]
    MalformedWord { expected: usize, got: usize },

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("empty box")]
    EmptyBox,

    #[error("invalid box pair: {0}")]
    InvalidBoxPair(String),

    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),

    #[error("rounding grid floor(delta*h/4) is zero (delta*h = {delta_h})")]
    GridTooCoarse { delta_h: f64 },

    #[error("invalid scale ladder: {0}")]
    InvalidLadder(String),

    #[error("path does not start in the interval I_H(w)")]
    StartOutsideInterval,

    #[error("trajectory has {len} positions, need at least {needed}")]
    ShortTrajectory { len: usize, needed: usize },

    #[error("empty interval of starting points")]
    EmptyInterval,

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("below resolution: {0}")]
    BelowResolution(String),

    #[error("insufficient events: need {needed}, got {got}")]
    InsufficientEvents { needed: usize, got: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("skeleton mismatch: {0}")]
    SkeletonMismatch(String),
}
