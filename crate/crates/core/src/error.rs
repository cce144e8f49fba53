use thiserror::Error;

use crate::sim::Halt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("track {id}: {reason}")]
    InvalidTrack { id: String, reason: String },
    #[error("track {id} does not close: position residual {position_residual:.3e} m, heading residual {heading_residual:.3e} rad")]
    OpenTrack { id: String, position_residual: f64, heading_residual: f64 },
    #[error("track file line {line}: {reason}")]
    TrackParse { line: usize, reason: String },
    #[error("cannot place {requested} traffic cars: track capacity is {capacity}")]
    TrafficCapacity { requested: usize, capacity: usize },
    #[error("cannot step a halted world ({0:?})")]
    Halted(Halt),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite loss at example {index}")]
    NonFiniteLoss { index: usize },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid network spec: {0}")]
    NetSpec(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("safe strategy requires a safety policy")]
    MissingSafetyPolicy,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
