use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::template::TemplateConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsWindow {
    pub cls: String,
    pub window_ms: u64,
    pub observed_rps: f64,
    pub p95_latency_ms: f64,
    pub error_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ScaleReason {
    Load,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScalingDecision {
    pub new_replicas: u32,
    pub reason: ScaleReason,
}

/// `clamp(ceil(rps / capacity), 1, max)`, or zero once the class has seen no
/// traffic for `idle_timeout_ms`.
pub fn autoscale_step(config: &TemplateConfig, m: &MetricsWindow, idle_for: Duration) -> ScalingDecision {
    if m.observed_rps <= 0.0 && idle_for >= Duration::from_millis(config.idle_timeout_ms) {
        return ScalingDecision {
            new_replicas: 0,
            reason: ScaleReason::Idle,
        };
    }
    let needed = (m.observed_rps / config.per_replica_capacity_rps).ceil();
    let max = config.max_replicas.max(1);
    let new_replicas = if needed.is_finite() {
        (needed as u64).clamp(1, max as u64) as u32
    } else {
        max
    };
    ScalingDecision {
        new_replicas,
        reason: ScaleReason::Load,
    }
}

/// Sliding record of arrivals and completions for one class.
#[derive(Debug)]
pub struct WindowRecorder {
    window: Duration,
    arrivals: VecDeque<Instant>,
    /// `(finished at, latency ms, ok)`
    completions: VecDeque<(Instant, f64, bool)>,
}

impl WindowRecorder {
    pub fn new(window: Duration) -> Self {
        assert!(!window.is_zero(), "window must be positive");
        WindowRecorder {
            window,
            arrivals: VecDeque::new(),
            completions: VecDeque::new(),
        }
    }

    pub fn arrival(&mut self, at: Instant) {
        self.arrivals.push_back(at);
    }

    pub fn completion(&mut self, at: Instant, latency_ms: f64, ok: bool) {
        self.completions.push_back((at, latency_ms, ok));
    }

    fn prune(&mut self, now: Instant) {
        let horizon = now.checked_sub(self.window);
        let stale = |t: &Instant| horizon.is_some_and(|h| *t <= h);
        while self.arrivals.front().is_some_and(stale) {
            self.arrivals.pop_front();
        }
        while self.completions.front().is_some_and(|c| stale(&c.0)) {
            self.completions.pop_front();
        }
    }

    /// The window `(now - window, now]`.
    pub fn observe(&mut self, cls: &str, now: Instant) -> MetricsWindow {
        self.prune(now);
        let in_window = |t: &Instant| *t <= now;
        let arrivals = self.arrivals.iter().filter(|t| in_window(t)).count();
        let mut lat: Vec<f64> = Vec::new();
        let mut errors = 0usize;
        for (t, l, ok) in &self.completions {
            if in_window(t) {
                lat.push(*l);
                errors += usize::from(!ok);
            }
        }
        lat.sort_by(f64::total_cmp);
        let p95 = if lat.is_empty() {
            0.0
        } else {
            lat[((lat.len() as f64 * 0.95).ceil() as usize).clamp(1, lat.len()) - 1]
        };
        MetricsWindow {
            cls: cls.to_string(),
            window_ms: self.window.as_millis() as u64,
            observed_rps: arrivals as f64 / self.window.as_secs_f64(),
            p95_latency_ms: p95,
            error_rate: if lat.is_empty() { 0.0 } else { errors as f64 / lat.len() as f64 },
        }
    }
}
