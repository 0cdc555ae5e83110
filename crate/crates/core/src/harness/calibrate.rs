//! Picking the short wait from observed handshake latencies.

use std::time::Duration;

use super::HarnessError;

/// Something that can run one timing trial against its target.
pub trait Calibrate {
    /// Runs one handshake and returns when the last response arrived, if any did.
    fn trial(&mut self, window: Duration) -> Result<Option<Duration>, HarnessError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationParams {
    pub trials: usize,
    /// Multiplier applied to the slowest observed response.
    pub factor: f64,
    /// How long a trial listens for responses.
    pub window: Duration,
    /// Lower bound for the result, so a fast loopback target still gets scheduling slack.
    pub floor: Duration,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams {
            trials: 5,
            factor: 2.0,
            window: Duration::from_secs(2),
            floor: Duration::from_millis(20),
        }
    }
}

/// Short wait = slowest response over all trials times `factor`, at least `floor`.
pub fn calibrate_short<C: Calibrate + ?Sized>(target: &mut C, params: &CalibrationParams) -> Result<Duration, HarnessError> {
    let mut slowest: Option<Duration> = None;
    for i in 0..params.trials {
        match target.trial(params.window)? {
            Some(t) => slowest = Some(slowest.map_or(t, |s| s.max(t))),
            None => log::debug!("calibration trial {i} saw no response"),
        }
    }
    let slowest = slowest.ok_or(HarnessError::CalibrationInconclusive(params.trials))?;
    Ok(slowest.mul_f64(params.factor).max(params.floor))
}
