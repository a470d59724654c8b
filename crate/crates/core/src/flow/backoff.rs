use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Exponential polling backoff: `min(initial * factor^attempt, cap)` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackoffPolicy {
    initial: f64,
    factor: f64,
    cap: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid backoff policy: {0}")]
pub struct InvalidPolicy(&'static str);

impl Default for BackoffPolicy {
    /// One second, doubling, capped at ten minutes.
    fn default() -> Self {
        Self {
            initial: 1.0,
            factor: 2.0,
            cap: 600.0,
        }
    }
}

impl BackoffPolicy {
    pub fn new(initial: f64, factor: f64, cap: f64) -> Result<Self, InvalidPolicy> {
        if !(initial > 0.0 && initial.is_finite()) {
            return Err(InvalidPolicy("initial must be > 0"));
        }
        if !(factor > 1.0 && factor.is_finite()) {
            return Err(InvalidPolicy("factor must be > 1"));
        }
        if !(cap >= initial && cap.is_finite()) {
            return Err(InvalidPolicy("cap must be >= initial"));
        }
        Ok(Self { initial, factor, cap })
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    /// Wait in seconds before poll number `attempt` (0-based).
    pub fn poll_interval(&self, attempt: u32) -> f64 {
        let exp = i32::try_from(attempt).unwrap_or(i32::MAX);
        (self.initial * self.factor.powi(exp)).min(self.cap)
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        Duration::from_secs_f64(self.poll_interval(attempt))
    }
}
