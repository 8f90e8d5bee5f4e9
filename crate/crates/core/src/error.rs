//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors produced by the scene memory, its file formats and the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate projection: point lies on the camera plane (z_c = {z_c:e})")]
    DegenerateProjection { z_c: f64 },
    #[error("invalid depth sample {0}")]
    InvalidDepth(f64),
    #[error("patch index ({row}, {col}) outside the {rows}x{cols} grid")]
    PatchOutOfRange { row: usize, col: usize, rows: usize, cols: usize },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("mask/feature dimension mismatch: {0}")]
    MaskMismatch(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },
    #[error("zero-norm vector in {0}")]
    ZeroNorm(&'static str),
    #[error("degenerate anchor: candidate or target coincides with its view center (row {row}, column {col})")]
    DegenerateAnchor { row: usize, col: usize },
    #[error("unknown ground-truth id {0}")]
    UnknownObject(u32),
    #[error("object placement failed after {0} attempts")]
    PlacementFailed(usize),
    #[error("action protocol violation: {0}")]
    ActionProtocol(String),
    #[error("history holds {0} actions; at most 4 allowed")]
    HistoryTooLong(usize),
    #[error("snapshot decode: {0}")]
    Snapshot(String),
    #[error("unsupported snapshot version {found} (expected {expected})")]
    SnapshotVersion { found: u16, expected: u16 },
    #[error("parameter file: {0}")]
    Params(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("dataset has no ground-truth ids")]
    MissingGroundTruth,
    #[error("config: {0}")]
    Config(String),
    #[error("sidecar decode: {0}")]
    Sidecar(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
