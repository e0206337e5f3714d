use std::path::PathBuf;

use privtranslate_nn::ParametersError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("path not found: {0}")]
    NotFound(PathBuf),
    #[error("no decodable images in {0}")]
    EmptyDataset(PathBuf),
    #[error("unknown domain tag `{0}`")]
    InvalidDomain(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("need at least {needed} groups for {k} folds, found {found}")]
    TooFewGroups { k: usize, needed: usize, found: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("model does not expose input gradients")]
    UnsupportedModel,
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("corrupt checkpoint at {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },
    #[error("need at least two classes, found {0}")]
    TooFewClasses(usize),
    #[error("class `{0}` has no samples")]
    EmptyClass(&'static str),
    #[error("reports cover different identities")]
    MismatchedReports,
    #[error("victim parameters changed during the attack ({before} -> {after})")]
    FrozenViolation { before: String, after: String },
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("model has no reverse generator")]
    NoReverseGenerator,
    #[error("non-finite values after step {step} in {network}")]
    NonFinite { step: u64, network: String },
    #[error(transparent)]
    Parameters(#[from] ParametersError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
