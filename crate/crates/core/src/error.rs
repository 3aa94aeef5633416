use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage an error surfaced in, used to tag propagated failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Profile,
    Features,
    Prediction,
    Stream1,
    Stream2,
    Stream3,
    Container,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Profile => "profile",
            Stage::Features => "features",
            Stage::Prediction => "prediction",
            Stage::Stream1 => "stream1",
            Stage::Stream2 => "stream2",
            Stage::Stream3 => "stream3",
            Stage::Container => "container",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] io::Error),

    #[error("malformed image file: {0}")]
    MalformedImage(String),

    #[error("malformed annotation (line {line}): {reason}")]
    MalformedAnnotation { line: usize, reason: String },

    #[error("malformed dictionary (line {line}): {reason}")]
    MalformedDictionary { line: usize, reason: String },

    #[error("unknown category id {0}")]
    UnknownCategory(u32),

    #[error("category {category} has more than 255 instances")]
    TooManyInstances { category: u16 },

    #[error("category id {0} outside [1, 256]")]
    CategoryOutOfRange(u32),

    #[error("instance index {0} outside [1, 255]")]
    InstanceOutOfRange(u32),

    #[error("profile value {0} is background, not an instance")]
    BackgroundValue(u16),

    #[error("profile value {0} is a multiple of 256 and cannot encode an instance")]
    UnrepresentableValue(u16),

    #[error("corrupt profile: {0}")]
    CorruptProfile(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("truncated data: {0}")]
    Truncated(&'static str),

    #[error("bad magic or version: {0}")]
    BadMagic(&'static str),

    #[error("checksum mismatch in {what} (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum {
        what: &'static str,
        stored: u32,
        computed: u32,
    },

    #[error("dimensions overflow or are invalid: {0}")]
    BadDimensions(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("missing stream: {0}")]
    MissingStream(&'static str),

    #[error("model checksum mismatch (container {container:#010x}, loaded {loaded:#010x})")]
    ModelMismatch { container: u32, loaded: u32 },

    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Strips any stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
