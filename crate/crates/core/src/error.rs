use thiserror::Error;

use crate::kernels::Side;

pub type Result<T> = std::result::Result<T, MrdError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MrdError {
    #[error("invalid boundary frame: {0}")]
    InvalidFrame(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Too few records with positive kernel weight, or a numerically singular
    /// weighted Gram matrix.
    #[error(
        "insufficient local data on the {side} side: effective n = {effective_n}, \
         condition number = {condition:.3e}"
    )]
    InsufficientLocalData {
        side: Side,
        effective_n: usize,
        condition: f64,
    },

    #[error("kernel unsuitable: {0}")]
    KernelUnsuitable(String),

    #[error("degenerate bandwidth selection: {0}")]
    DegenerateSelection(String),

    #[error("point ({0}, {1}) lies outside the design support")]
    OutOfSupport(f64, f64),

    #[error("unknown design id {0}; expected 1..=4")]
    UnknownDesign(u8),

    #[error("no records on the {0} side")]
    EmptySide(Side),
}

impl MrdError {
    /// Stable machine-readable tag used in serialized error records.
    pub fn kind(&self) -> &'static str {
        match self {
            MrdError::InvalidFrame(_) => "invalid-frame",
            MrdError::InvalidArgument(_) => "invalid-argument",
            MrdError::InsufficientLocalData { .. } => "insufficient-local-data",
            MrdError::KernelUnsuitable(_) => "kernel-unsuitable",
            MrdError::DegenerateSelection(_) => "degenerate-selection",
            MrdError::OutOfSupport(..) => "out-of-support",
            MrdError::UnknownDesign(_) => "unknown-design",
            MrdError::EmptySide(_) => "empty-side",
        }
    }
}
