use super::metrics::metrics;
use super::rollout::{rollout, Policy, SimConfig};
use super::train::{train_controller, TrainConfig};
use crate::blocks::NbsParams;
use crate::controller::{NbsController, ReferenceTrajectory};
use crate::error::{Error, Result};
use crate::model::{Dynamics, ElModel};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Ultimate bound d/(2α²) on ‖z₁‖² under a constant disturbance of squared
/// norm `d`; infinite for α ≤ 0.
pub fn theorem_bound(d: f64, alpha: f64) -> f64 {
    if alpha > 0.0 {
        d / (2.0 * alpha * alpha)
    } else {
        f64::INFINITY
    }
}

/// Forty evenly spaced values on (0.2, 2] with spacing 1/22, so that both
/// α = 1 and α = 2 are included.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..=40).map(|i| 2.0 - (40 - i) as f64 / 22.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub steady: f64,
    pub bound: f64,
    pub convergence: Option<f64>,
}

/// Trains a controller per α (regularizer active) and measures its steady
/// error under `sim`'s disturbance. Runs are spread over `jobs` threads;
/// results keep the order of `alphas`.
#[allow(clippy::too_many_arguments)]
pub fn alpha_sweep<P, M>(
    plant: &P,
    model: &M,
    init: &NbsParams,
    reference: &ReferenceTrajectory,
    alphas: &[f64],
    tcfg: &TrainConfig,
    sim: &SimConfig,
    jobs: usize,
) -> Result<Vec<SweepRow>>
where
    P: Dynamics + Sync,
    M: ElModel + Clone + Sync,
{
    if alphas.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
        return Err(Error::invalid(
            "sweep.alphas",
            "must be finite and non-negative",
        ));
    }
    let d = sim.disturbance.bound();
    let run = |alpha: f64| -> Result<SweepRow> {
        let cfg = TrainConfig {
            alpha,
            ..tcfg.clone()
        };
        let (params, _) = train_controller(plant, model, init.clone(), reference, &cfg)?;
        let ctrl = NbsController::new(params, model.clone())?;
        let log = rollout(plant, Policy::Nbs(&ctrl), reference, sim)?;
        let m = metrics(&log)?;
        Ok(SweepRow {
            alpha,
            steady: m.steady_state_error,
            bound: theorem_bound(d, alpha),
            convergence: m.convergence_time,
        })
    };
    let jobs = jobs.clamp(1, alphas.len().max(1));
    if jobs == 1 {
        return alphas.iter().map(|&a| run(a)).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SweepRow>>>> =
        Mutex::new((0..alphas.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= alphas.len() {
                    break;
                }
                let r = run(alphas[i]);
                results.lock().expect("sweep results lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("sweep results lock")
        .into_iter()
        .map(|r| r.expect("every alpha ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_arithmetic() {
        assert_eq!(theorem_bound(2.0, 1.0), 1.0);
        assert_eq!(theorem_bound(2.0, 2.0), 0.25);
        assert_eq!(theorem_bound(2.0, 0.0), f64::INFINITY);
    }

    #[test]
    fn grid_shape() {
        let g = default_alpha_grid();
        assert_eq!(g.len(), 40);
        assert!(g[0] > 0.2 && g[39] == 2.0);
        assert!(g.iter().any(|&a| (a - 1.0).abs() < 1e-15));
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
