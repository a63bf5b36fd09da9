//! Per-episode smoothness metrics and cross-suite aggregation.

use serde::{Deserialize, Serialize};

use crate::chunking::BoundaryEvent;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub success: bool,
    pub env_steps: usize,
    pub l2_mean: f64,
    pub l2_max: f64,
    pub max_acc: f64,
    pub max_jerk: f64,
}

impl EpisodeMetrics {
    /// Collect metrics from an executed (clipped) action trace.
    pub fn from_trace(
        success: bool,
        env_steps: usize,
        actions: &[Vec<f64>],
        events: &[BoundaryEvent],
    ) -> Self {
        let (l2_mean, l2_max) = chunk_switch_l2(events);
        let (max_acc, max_jerk) = max_acc_jerk(actions);
        EpisodeMetrics {
            success,
            env_steps,
            l2_mean,
            l2_max,
            max_acc,
            max_jerk,
        }
    }
}

/// Mean and max L2 jump across chunk swaps; `(0, 0)` without swaps.
pub fn chunk_switch_l2(events: &[BoundaryEvent]) -> (f64, f64) {
    if events.is_empty() {
        return (0.0, 0.0);
    }
    let (sum, max) = events
        .iter()
        .map(BoundaryEvent::jump)
        .fold((0.0, 0.0f64), |(s, m), j| (s + j, m.max(j)));
    // Guard the last ulp so mean <= max holds exactly.
    ((sum / events.len() as f64).min(max), max)
}

/// Peak L2 norm of the second and third differences of the action sequence.
///
/// `acc_t = a_{t+1} − 2a_t + a_{t−1}`,
/// `jerk_t = a_{t+2} − 3a_{t+1} + 3a_t − a_{t−1}`, one control tick per step.
/// A quantity that needs more samples than available is reported as 0.
pub fn max_acc_jerk(actions: &[Vec<f64>]) -> (f64, f64) {
    let t = actions.len();
    let dim = actions.first().map_or(0, Vec::len);

    let mut max_acc = 0.0f64;
    for i in 1..t.saturating_sub(1) {
        let sq: f64 = (0..dim)
            .map(|k| {
                let v = actions[i + 1][k] - 2.0 * actions[i][k] + actions[i - 1][k];
                v * v
            })
            .sum();
        max_acc = max_acc.max(sq.sqrt());
    }

    let mut max_jerk = 0.0f64;
    for i in 1..t.saturating_sub(2) {
        let sq: f64 = (0..dim)
            .map(|k| {
                let v = actions[i + 2][k] - 3.0 * actions[i + 1][k] + 3.0 * actions[i][k]
                    - actions[i - 1][k];
                v * v
            })
            .sum();
        max_jerk = max_jerk.max(sq.sqrt());
    }
    (max_acc, max_jerk)
}

/// Episode-weighted cross-suite mean `Σ N_s m_s / Σ N_s`.
pub fn aggregate_weighted(suite_means: &[(u64, f64)]) -> Result<f64> {
    if suite_means.is_empty() {
        return Err(Error::structure("no suites to aggregate"));
    }
    if let Some((n, _)) = suite_means.iter().find(|(n, _)| *n == 0) {
        return Err(Error::domain("suite weight", *n as f64, "[1, inf)"));
    }
    let total: f64 = suite_means.iter().map(|(n, _)| *n as f64).sum();
    let weighted: f64 = suite_means.iter().map(|(n, m)| *n as f64 * m).sum();
    Ok(weighted / total)
}

/// Worst suite: the maximum of per-suite (delay-averaged) values.
pub fn worst_case(suite_means: &[f64]) -> Result<f64> {
    if suite_means.is_empty() {
        return Err(Error::structure("no suites for worst-case summary"));
    }
    Ok(suite_means.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}
