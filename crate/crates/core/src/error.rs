use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rank violation: cell {inner:?} (rank {inner_rank}) is contained in {outer:?} (rank {outer_rank})")]
    RankViolation {
        inner: Vec<usize>,
        inner_rank: usize,
        outer: Vec<usize>,
        outer_rank: usize,
    },
    #[error("duplicate cell {vertices:?} at rank {rank}")]
    DuplicateCell { vertices: Vec<usize>, rank: usize },
    #[error("vertex {vertex} is out of range for a complex with {vertex_count} vertices")]
    UnknownVertex { vertex: usize, vertex_count: usize },
    #[error("invalid cell: {0}")]
    InvalidCell(String),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("label {label} is not a valid class id (num_classes = {num_classes})")]
    InvalidLabel { label: usize, num_classes: usize },
    #[error("graph-level readout of an empty complex")]
    EmptyComplex,
    #[error("empty split: {0}")]
    EmptySplit(String),
    #[error("complex too large for exhaustive search: {0} vertices (max 10)")]
    TooLarge(usize),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::RankViolation { .. } => "rank_violation",
            Error::DuplicateCell { .. } => "duplicate_cell",
            Error::UnknownVertex { .. } => "unknown_vertex",
            Error::InvalidCell(_) => "invalid_cell",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NonScalarLoss(_) => "non_scalar_loss",
            Error::InvalidLabel { .. } => "invalid_label",
            Error::EmptyComplex => "empty_complex",
            Error::EmptySplit(_) => "empty_split",
            Error::TooLarge(_) => "too_large",
            Error::Config(_) => "config",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
