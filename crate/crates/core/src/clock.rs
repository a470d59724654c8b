//! Process-wide monotonic clock. Durations are always taken from here; wall
//! time is only recorded for display.

use std::sync::OnceLock;
use std::time::Instant;

static EPOCH: OnceLock<Instant> = OnceLock::new();

pub fn epoch() -> Instant {
    *EPOCH.get_or_init(Instant::now)
}

/// Seconds since the process epoch.
pub fn now() -> f64 {
    epoch().elapsed().as_secs_f64()
}
