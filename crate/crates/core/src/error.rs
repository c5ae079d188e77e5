use thiserror::Error;

/// Errors raised while building or evaluating the network and market models.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("case file line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("no reference (type 3) bus in case")]
    NoReferenceBus,

    #[error("network is not radial: {0}")]
    NotRadial(String),

    #[error("duplicate branch between buses {0} and {1}")]
    DuplicateBranch(usize, usize),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("voltage deviation {0} outside (0, 1)")]
    VoltageDeviation(f64),

    #[error("line {0} has no flow limit")]
    MissingFlowLimit(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("interval bound inverted at index {index}: lo {lo} > hi {hi}")]
    InvertedInterval { index: usize, lo: f64, hi: f64 },

    #[error("negative quantity: {0}")]
    NegativeQuantity(String),

    #[error("negative price: {0}")]
    NegativePrice(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bus {bus}: consumption bounds cannot meet the access interval")]
    InfeasibleAccess { bus: usize },

    #[error("capacity {capacity} outside bid curve domain [{lo}, {hi}]")]
    OutsideCurve { capacity: f64, lo: f64, hi: f64 },

    #[error("bid for bus {0} does not match any non-reference network bus")]
    BidBusMismatch(usize),

    #[error("auction infeasible: constraint block {block} (row {row})")]
    Infeasible { block: String, row: usize },

    #[error("solver: {0}")]
    Solver(String),

    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
