use super::rollout::RolloutLog;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Window at the end of a run over which the steady error is taken.
pub const STEADY_WINDOW: f64 = 30.0;
/// Shortest run the steady-state metric is defined for.
pub const MIN_HORIZON: f64 = 100.0;
/// ‖z₁‖² level defining convergence.
pub const CONVERGENCE_LEVEL: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    #[serde(default)]
    pub label: String,
    /// max ‖z₁‖² over the final 30 s.
    pub steady_state_error: f64,
    /// Time after which ‖z₁‖² stays below 0.01; `None` if it never settles.
    pub convergence_time: Option<f64>,
    pub horizon: f64,
    /// Largest one-step increase of the Lyapunov value, when logged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_lyapunov_increase: Option<f64>,
    /// Largest inverse-dynamics decomposition residual of a learned model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition_residual: Option<f64>,
}

impl MetricsReport {
    pub fn converged(&self) -> bool {
        self.convergence_time.is_some()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: MetricsReport = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        if !(m.horizon >= 0.0) {
            return Err(Error::invalid("horizon", "must be non-negative"));
        }
        Ok(m)
    }
}

/// Instant after the last sample at or above `level`, linearly interpolated
/// to the downward crossing. `None` if the final sample is still above.
pub fn convergence_time(t: &[f64], e: &[f64], level: f64) -> Option<f64> {
    let last = e.iter().rposition(|&x| !(x < level));
    match last {
        None => Some(t.first().copied().unwrap_or(0.0)),
        Some(k) if k + 1 == e.len() => None,
        Some(k) => {
            let w = (e[k] - level) / (e[k] - e[k + 1]);
            Some(t[k] + w.clamp(0.0, 1.0) * (t[k + 1] - t[k]))
        }
    }
}

/// Steady-state error and convergence time of a run of at least 100 s.
pub fn metrics(log: &RolloutLog) -> Result<MetricsReport> {
    let horizon = log.horizon();
    if horizon < MIN_HORIZON - 1e-9 {
        return Err(Error::HorizonTooShort {
            have: horizon,
            need: MIN_HORIZON,
        });
    }
    let end = log.rows.last().expect("non-empty log").t;
    let steady = log
        .rows
        .iter()
        .filter(|r| r.t >= end - STEADY_WINDOW - 1e-9)
        .map(|r| r.z1sq)
        .fold(0.0, f64::max);
    let t: Vec<f64> = log.rows.iter().map(|r| r.t).collect();
    let e: Vec<f64> = log.rows.iter().map(|r| r.z1sq).collect();
    let max_inc = log
        .rows
        .windows(2)
        .filter(|w| w[0].v.is_finite() && w[1].v.is_finite())
        .map(|w| w[1].v - w[0].v)
        .fold(None, |acc: Option<f64>, d| {
            Some(acc.map_or(d, |a| a.max(d)))
        });
    Ok(MetricsReport {
        label: String::new(),
        steady_state_error: steady,
        convergence_time: convergence_time(&t, &e, CONVERGENCE_LEVEL),
        horizon,
        max_lyapunov_increase: max_inc,
        decomposition_residual: None,
    })
}
