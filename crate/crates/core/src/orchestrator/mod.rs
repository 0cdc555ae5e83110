//! Session engine: target supervision, learning per timeout setting,
//! optimization, differential analysis and crash logging.

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub mod config;
pub mod references;
pub mod session;
pub mod supervisor;

pub use crate::differ::reference_check;
pub use config::{ReferenceSources, SessionConfig, TargetSpec, Transport};
pub use references::{bundled_references, render_reference, BundledReference};
pub use session::{connect, run_session, run_session_with, LearnedModel, SessionOutcome};
pub use supervisor::{CrashRecord, MockTarget, ProcessTarget, SupervisedOracle, Target};

/// Process exit code for a session without findings.
pub const EXIT_CLEAN: i32 = 0;
/// Deviations or crashes were found. This is a report outcome, not a failure.
pub const EXIT_FINDINGS: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Config,
    Launch,
    Calibrate,
    Learn,
    Optimize,
    Diff,
    Write,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Config => "config",
            Phase::Launch => "launch",
            Phase::Calibrate => "calibrate",
            Phase::Learn => "learn",
            Phase::Optimize => "optimize",
            Phase::Diff => "diff",
            Phase::Write => "write",
        })
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{phase}: {message}")]
    Phase { phase: Phase, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl OrchestratorError {
    pub fn phase(phase: Phase, message: impl fmt::Display) -> Self {
        OrchestratorError::Phase { phase, message: message.to_string() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OrchestratorError::Io { path: path.into(), source }
    }
}
