use std::io;
use std::path::PathBuf;

/// Errors raised anywhere in the trajectory pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic in {0}")]
    BadMagic(PathBuf),
    #[error("unsupported trial format version {version} in {path}")]
    BadVersion { path: PathBuf, version: u32 },
    #[error("truncated trial {0}")]
    TruncatedTrial(PathBuf),
    #[error("missing trial file {0}")]
    MissingTrialFile(PathBuf),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("character {0:?} outside alphabet")]
    OutsideAlphabet(char),
    #[error("empty text")]
    EmptyText,
    #[error("no steps sampled")]
    NoStepsSampled,
    #[error("divergence: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("no usable units")]
    NoUsableUnits,
    #[error("covariance rank deficiency: rank {rank} < {dim}")]
    RankDeficient { rank: usize, dim: usize },
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("too few points: {have} < {need}")]
    TooFewPoints { have: usize, need: usize },
    #[error("empty sample")]
    EmptySample,
    #[error("a group empty: {0}")]
    GroupEmpty(String),
    #[error("rank-deficient input")]
    RankDeficientInput,
    #[error("no trials match filter")]
    NoMatchingTrials,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
