use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{rejected} of {total} lines malformed; input is probably not in the expected record format")]
    MostlyMalformed { rejected: usize, total: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("requested {requested} users but only {available} are eligible")]
    NotEnoughUsers { requested: usize, available: usize },

    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error("matrix factorization diverged at epoch {epoch}")]
    MfDiverged { epoch: usize },

    #[error("tower training produced a non-finite loss at epoch {epoch}, batch {batch}")]
    TowerDiverged { epoch: usize, batch: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("profile generator failed on every chunk ({chunks} chunks)")]
    GeneratorUnusable { chunks: usize },

    #[error("generator error: {0}")]
    Generator(String),

    #[error("vocabulary hash mismatch: file has {found:016x}, expected {expected:016x}")]
    VocabMismatch { expected: u64, found: u64 },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact {path}; run the `{stage}` stage first")]
    MissingArtifact { stage: &'static str, path: PathBuf },

    #[error("artifact {path} was produced with config hash {found}, expected {expected}")]
    ConfigHashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
