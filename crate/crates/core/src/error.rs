use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("scan index {got} does not follow {prev}")]
    NonMonotoneIndex { prev: usize, got: usize },

    #[error("empty local map")]
    EmptyMap,

    #[error("rank-deficient ground fit")]
    RankDeficientGround,

    #[error("degenerate point set: {0}")]
    Degenerate(&'static str),

    #[error("map index {0} already inserted")]
    DuplicateMap(u32),

    #[error("bad magic")]
    BadMagic,

    #[error("unsupported database version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated database file")]
    Truncated,

    #[error("checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("malformed database: {0}")]
    Malformed(String),

    #[error("{}: {msg}", path.display())]
    ScanFormat { path: PathBuf, msg: String },

    #[error("pose file line {line}: {msg}")]
    PoseLine { line: usize, msg: String },

    #[error("missing ground-truth poses for scans {0:?}")]
    MissingPoses(Vec<usize>),

    #[error("partition mismatch: {0}")]
    PartitionMismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("map {map}: {stage} failed: {source}")]
    Stage {
        map: u32,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_stage(self, map: u32, stage: &'static str) -> Error {
        Error::Stage {
            map,
            stage,
            source: Box::new(self),
        }
    }
}
