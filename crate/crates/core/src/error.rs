use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("tensor `{name}`: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("undefined metric: {0}")]
    Metric(String),

    #[error(transparent)]
    Load(#[from] LoadError),

    #[error(transparent)]
    Codec(#[from] CodecError),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error once stage labels are peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures caused by reading or writing files.
    pub fn is_io(&self) -> bool {
        matches!(
            self.root(),
            Error::Io { .. } | Error::Load(_) | Error::Codec(_)
        )
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}

/// Failures while decoding the weight container.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("bad magic {found:?}, expected \"NCSD\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated file at byte {offset} while reading {what}")]
    Truncated { offset: u64, what: String },

    #[error("tensor `{name}`: unknown dtype byte {byte} at byte {offset}")]
    UnknownDtype { name: String, byte: u8, offset: u64 },

    #[error("tensor `{name}`: invalid extents {extents:?}")]
    BadExtents { name: String, extents: Vec<u64> },

    #[error("tensor name at byte {offset} is not valid UTF-8")]
    BadName { offset: u64 },

    #[error("tensor `{name}`: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor `{0}` is not part of the configured model")]
    UnexpectedTensor(String),

    #[error("tensor `{0}` appears twice")]
    DuplicateTensor(String),

    #[error("{0} trailing bytes after tensor table")]
    TrailingBytes(u64),

    #[error("config block: {0}")]
    Config(String),
}

/// Failures in the .flo / PFM / image codecs.
#[derive(Debug, Error)]
pub enum CodecError {
    #[error("{format}: bad magic")]
    BadMagic { format: &'static str },

    #[error("{format}: invalid header: {detail}")]
    BadHeader {
        format: &'static str,
        detail: String,
    },

    #[error("{format}: expected {expected} payload bytes, found {found}")]
    Truncated {
        format: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}
