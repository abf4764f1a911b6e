use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("corrupted pool indices: {0}")]
    CorruptIndices(String),

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("stale or mismatched forward cache: {0}")]
    StaleCache(String),

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("shape mismatch for layer `{layer}`: expected {expected:?}, found {found:?}")]
    ParamShape {
        layer: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("parameter count mismatch: expected {expected} arrays, found {found}")]
    ParamCount { expected: usize, found: usize },

    #[error("element type mismatch for `{layer}`: expected {expected}, found {found}")]
    ElementType {
        layer: String,
        expected: &'static str,
        found: &'static str,
    },

    #[error("truncated data: {0}")]
    Truncated(String),

    #[error("non-finite gradient in layer `{0}`")]
    NonFiniteGradient(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("class `{0}` is absent from every mask; its weight is undefined")]
    ClassAbsent(&'static str),

    #[error("dataset not found: {} has no manifest.csv", .0.display())]
    DatasetNotFound(PathBuf),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dataset contains a single class only ({0}); training needs both")]
    SingleClass(&'static str),

    #[error("mask is not binary: found value {0}")]
    NonBinaryMask(u8),

    #[error("dimension mismatch: {0}")]
    Dimensions(String),

    #[error("empty record set")]
    EmptyRecords,

    #[error("unknown image ids: {}", .0.join(", "))]
    UnknownIds(Vec<String>),

    #[error("sample `{id}`: file not found: {}", .path.display())]
    MissingFile { id: String, path: PathBuf },

    #[error("sample `{id}`: cannot decode {}: {source}", .path.display())]
    Decode {
        id: String,
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("sample `{id}`: image is {image:?} but mask is {mask:?}")]
    SizeMismatch {
        id: String,
        image: (u32, u32),
        mask: (u32, u32),
    },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("{}:{line}: {msg}", .path.display())]
    Malformed {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
