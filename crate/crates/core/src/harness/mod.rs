//! The mapper between abstract symbols and a live QUIC server.
//!
//! Two backends implement the learner's oracle interface: [`wire::WireHarness`]
//! speaks QUIC v1 over UDP, and [`pipe::PipeClient`] exchanges symbols with a
//! mock server over a local stream socket.

use std::time::Duration;

use thiserror::Error;

use crate::alphabet::TimeoutClass;
use crate::learner::{LearnError, MembershipOracle};

pub mod calibrate;
pub mod certs;
pub mod crypto;
pub mod packet;
pub mod pipe;
pub mod symbolize;
pub mod tls;
pub mod wire;

pub use calibrate::{calibrate_short, CalibrationParams, Calibrate};
pub use crypto::{derive_initial_keys, InitialSecrets, KeyMaterial};
pub use pipe::PipeClient;
pub use wire::{ConnectionContext, WireConfig, WireHarness};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("target unreachable: {0}")]
    TargetUnreachable(String),
    #[error("calibration inconclusive: no responses in {0} trials")]
    CalibrationInconclusive(usize),
    #[error("setup handshake failed: {0}")]
    SetupHandshakeFailed(String),
    #[error("no keys for the {0} level")]
    NoKeysForLevel(crate::alphabet::EncryptionLevel),
    #[error("socket error: {0}")]
    Socket(#[from] std::io::Error),
    #[error(transparent)]
    Crypto(#[from] crypto::CryptoError),
    #[error(transparent)]
    Codec(#[from] packet::CodecError),
}

impl From<HarnessError> for LearnError {
    fn from(e: HarnessError) -> Self {
        LearnError::OracleUnavailable(e.to_string())
    }
}

/// Wait durations for the two timeout classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HarnessTimeouts {
    pub short: Duration,
    pub long: Duration,
    /// Delay after launching a target before the first query.
    pub startup_grace: Duration,
}

impl HarnessTimeouts {
    /// Long is always exactly `LONG_FACTOR` times short.
    pub fn new(short: Duration, startup_grace: Duration) -> Self {
        HarnessTimeouts { short, long: short * TimeoutClass::LONG_FACTOR, startup_grace }
    }

    pub fn wait(&self, class: Option<TimeoutClass>) -> Duration {
        match class {
            Some(TimeoutClass::Long) => self.long,
            _ => self.short,
        }
    }
}

impl Default for HarnessTimeouts {
    fn default() -> Self {
        HarnessTimeouts::new(Duration::from_millis(50), Duration::from_millis(500))
    }
}

/// A membership oracle bound to a concrete target.
pub trait Backend: MembershipOracle + Calibrate {
    /// Whether the target answers at all; used after a restart.
    fn ready(&mut self, within: Duration) -> bool;

    fn timeouts(&self) -> HarnessTimeouts;

    fn set_timeouts(&mut self, timeouts: HarnessTimeouts);

    /// True if the server explicitly answered the last step, so it was alive
    /// after processing the input. Silence proves nothing.
    fn last_step_answered(&self) -> bool {
        false
    }
}
