use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid profile: {0}")]
    Profile(String),

    #[error("invalid scope: {0}")]
    Scope(String),

    #[error("arm {arm} out of range for {arms} arms")]
    ArmOutOfRange { arm: usize, arms: usize },

    #[error("invalid allocation ratios: {0}")]
    Ratios(String),

    #[error("invalid biased probabilities: {0}")]
    BiasedProbabilities(String),

    #[error("invalid imbalance weights: {0}")]
    Weights(String),

    #[error("invalid block size: {0}")]
    BlockSize(String),

    #[error("invalid probability table: {0}")]
    Pmf(String),

    #[error("conditional probability undefined: {0}")]
    UndefinedConditional(String),

    #[error("infeasible entropy bounds: lower {lower} exceeds upper {upper}")]
    InfeasibleBounds { lower: f64, upper: f64 },

    #[error("invalid model parameter: {0}")]
    Model(String),

    #[error("cohort exhausted: requested patient {requested} from a cohort of {size}")]
    CohortExhausted { requested: usize, size: usize },

    #[error("cohort ingestion: {0}")]
    Ingest(String),

    #[error("not a number: {0}")]
    NotANumber(String),

    #[error("invalid study configuration: {0}")]
    Config(String),

    #[error("replicate {index} failed: {source}")]
    Replicate {
        index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("empty sample")]
    EmptySample,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
