use std::time::{Duration, Instant};

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeState {
    Cold,
    Provisioning { ready_at: Instant },
    Warm { idle_since: Instant },
}

/// Single batch node with a provisioning delay and an idle timeout.
///
/// Time is passed in explicitly so the state machine can be driven by tests.
/// Transitions that depend only on time passing (provisioning finishing,
/// idling out) are applied lazily on the next call.
#[derive(Debug, Clone)]
pub struct NodeSimulator {
    state: NodeState,
    running: bool,
    pub provision_delay: Duration,
    pub idle_timeout: Duration,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeView {
    pub state: &'static str,
    pub running: bool,
    /// Seconds until provisioning completes, when provisioning.
    pub ready_in_s: Option<f64>,
}

impl NodeSimulator {
    pub fn new(provision_delay: Duration, idle_timeout: Duration) -> Self {
        Self {
            state: NodeState::Cold,
            running: false,
            provision_delay,
            idle_timeout,
        }
    }

    pub fn state(&mut self, now: Instant) -> NodeState {
        self.advance(now);
        self.state
    }

    fn advance(&mut self, now: Instant) {
        loop {
            self.state = match self.state {
                NodeState::Provisioning { ready_at } if now >= ready_at => NodeState::Warm { idle_since: ready_at },
                NodeState::Warm { idle_since }
                    if !self.running && now.saturating_duration_since(idle_since) >= self.idle_timeout =>
                {
                    NodeState::Cold
                }
                _ => return,
            };
        }
    }

    /// Asks for the node, starting provisioning if it is cold. Returns when it
    /// will be ready (`now` if already warm).
    pub fn request(&mut self, now: Instant) -> Instant {
        self.advance(now);
        match self.state {
            NodeState::Cold => {
                let ready_at = now + self.provision_delay;
                self.state = if self.provision_delay.is_zero() {
                    NodeState::Warm { idle_since: now }
                } else {
                    NodeState::Provisioning { ready_at }
                };
                ready_at
            }
            NodeState::Provisioning { ready_at } => ready_at,
            NodeState::Warm { .. } => now,
        }
    }

    /// Marks the node busy. Fails unless it is warm and idle.
    pub fn begin_task(&mut self, now: Instant) -> Result<(), NodeState> {
        self.advance(now);
        match self.state {
            NodeState::Warm { .. } if !self.running => {
                self.running = true;
                Ok(())
            }
            other => Err(other),
        }
    }

    pub fn end_task(&mut self, now: Instant) {
        self.running = false;
        self.state = NodeState::Warm { idle_since: now };
    }

    pub fn view(&mut self, now: Instant) -> NodeView {
        let state = self.state(now);
        NodeView {
            state: match state {
                NodeState::Cold => "cold",
                NodeState::Provisioning { .. } => "provisioning",
                NodeState::Warm { .. } => "warm",
            },
            running: self.running,
            ready_in_s: match state {
                NodeState::Provisioning { ready_at } => Some(ready_at.saturating_duration_since(now).as_secs_f64()),
                _ => None,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn secs(s: u64) -> Duration {
        Duration::from_secs(s)
    }

    #[test]
    fn cold_start_then_warm_reuse() {
        let t0 = Instant::now();
        let mut n = NodeSimulator::new(secs(60), secs(300));
        assert_eq!(n.state(t0), NodeState::Cold);
        assert_eq!(n.request(t0), t0 + secs(60));
        assert!(n.begin_task(t0 + secs(30)).is_err());
        assert_eq!(n.request(t0 + secs(30)), t0 + secs(60));
        assert!(n.begin_task(t0 + secs(60)).is_ok());
        assert!(n.begin_task(t0 + secs(61)).is_err(), "one task at a time");
        n.end_task(t0 + secs(70));
        assert_eq!(n.request(t0 + secs(100)), t0 + secs(100));
    }

    #[test]
    fn idles_out_only_when_not_running() {
        let t0 = Instant::now();
        let mut n = NodeSimulator::new(secs(5), secs(10));
        n.request(t0);
        n.begin_task(t0 + secs(5)).unwrap();
        // a long task keeps the node warm
        assert!(matches!(n.state(t0 + secs(100)), NodeState::Warm { .. }));
        n.end_task(t0 + secs(100));
        assert!(matches!(n.state(t0 + secs(109)), NodeState::Warm { .. }));
        assert_eq!(n.state(t0 + secs(110)), NodeState::Cold);
        assert_eq!(n.request(t0 + secs(120)), t0 + secs(125));
    }

    #[test]
    fn unused_provisioned_node_idles_out_from_ready_time() {
        let t0 = Instant::now();
        let mut n = NodeSimulator::new(secs(5), secs(10));
        n.request(t0);
        assert!(matches!(n.state(t0 + secs(14)), NodeState::Warm { .. }));
        assert_eq!(n.state(t0 + secs(15)), NodeState::Cold);
    }

    #[test]
    fn zero_delay_is_immediately_warm() {
        let t0 = Instant::now();
        let mut n = NodeSimulator::new(Duration::ZERO, secs(10));
        assert_eq!(n.request(t0), t0);
        assert!(n.begin_task(t0).is_ok());
    }
}
