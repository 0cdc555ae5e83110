//! A mock QUIC server that serves a Mealy machine, optionally with seeded faults.
//!
//! Every mode is served over the symbol pipe. The Basic handshake is also
//! served over UDP with real packet protection, see [`wire_server`].

use std::time::Duration;

use thiserror::Error;

use crate::alphabet::SymbolRegistry;

pub mod faults;
pub mod pipe_server;
pub mod reference;
pub mod scenarios;
pub mod wire_server;

pub use faults::{compact_alphabet, default_crash_trigger, fault_catalog, CatalogEntry, Expectation, FaultProfile, PingBehavior, Signature};
pub use pipe_server::{spawn_pipe, RunningPipe};
pub use reference::{bundled_alphabet, reference_model};
pub use wire_server::{spawn_wire, RunningWire};

#[derive(Debug, Error)]
pub enum MockError {
    #[error("cannot bind transport: {0}")]
    TransportBindFailure(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid fault: {0}")]
    BadFault(String),
}

/// What happens when a crash trigger is reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CrashAction {
    /// Abort the whole process without cleanup.
    #[default]
    Abort,
    /// End the serving loop only; for in-process tests.
    StopServing,
}

/// Scripted nondeterminism: a step's answer is replaced by silence with probability `rate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flaky {
    pub rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default)]
pub struct MockOptions {
    /// Added before every answer.
    pub delay: Duration,
    pub flaky: Option<Flaky>,
    pub crash: CrashAction,
    pub registry: Option<SymbolRegistry>,
}
