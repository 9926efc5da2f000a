use thiserror::Error;

/// Errors produced by the tracking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("event stream is empty")]
    EmptyStream,

    #[error("chunk [{alpha}, {beta}] contains no events")]
    EmptyChunk { alpha: u64, beta: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ray does not project in front of the camera")]
    BehindCamera,

    #[error("degenerate line: temporal direction component {0:e}")]
    DegenerateLine(f64),

    #[error(
        "insufficient correspondences: {n_events} events, {n_cells_over_delta} cells over threshold, rank(C) = {rank}"
    )]
    InsufficientCorrespondences {
        n_events: usize,
        n_cells_over_delta: usize,
        rank: usize,
    },

    #[error("relative-rotation graph is disconnected: no edge covers ({gap_start_us} us, {gap_end_us} us)")]
    Disconnected { gap_start_us: u64, gap_end_us: u64 },

    #[error("no ground truth attitude at t = {0} us")]
    MissingGroundTruth(u64),

    #[error("optimizer aborted: {0}")]
    OptimizerAbort(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
