//! Error type shared across the simulator.

use thiserror::Error;

/// Errors surfaced by configuration loading, program loading and runs.
#[derive(Debug, Error)]
pub enum SimError {
    /// A configuration field failed validation. The message names the field.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An instruction was rejected at load time (bad length, missing
    /// scale-address pair, address overlap, ...).
    #[error("invalid instruction {instruction_id}: {reason}")]
    InvalidInstruction { instruction_id: u32, reason: String },

    /// A memory transaction touched an unmapped or out-of-range address.
    #[error("memory fault at accelerator {accelerator}, address {address:#x}: {reason}")]
    MemoryFault {
        accelerator: usize,
        address: u64,
        reason: String,
    },

    /// The engine made no forward progress for the configured number of
    /// cycles. Carries an inventory of what was still in flight.
    #[error("deadlock after {cycles_without_progress} idle cycles at cycle {cycle}: {inventory}")]
    Deadlock {
        cycle: u64,
        cycles_without_progress: u64,
        inventory: String,
    },

    /// A data-carrying collective produced a result that differs from the
    /// reduction oracle.
    #[error("{algorithm} result mismatch at accelerator {accelerator}, byte {byte_offset}")]
    ResultMismatch {
        algorithm: &'static str,
        accelerator: usize,
        byte_offset: u64,
    },

    /// A malformed workload/spec/profile input file.
    #[error("invalid input {path}: {reason}")]
    InvalidInput { path: String, reason: String },

    /// Wrapped I/O error with the offending path.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SimError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid_input(path: impl Into<String>, reason: impl Into<String>) -> Self {
        SimError::InvalidInput {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
