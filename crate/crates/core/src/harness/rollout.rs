use crate::controller::{NbsController, PidBaseline, ReferenceTrajectory};
use crate::error::{Error, Result};
use crate::model::{Dynamics, ElModel};
use crate::numerics::{rk4_step, OdeState};
use crate::plants::DisturbanceModel;
use serde::{Deserialize, Serialize};

/// Closed-loop simulation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Integration step in seconds.
    pub dt: f64,
    /// Simulated time in seconds.
    pub horizon: f64,
    pub disturbance: DisturbanceModel,
    /// Initial angles; empty means zeros.
    pub q0: Vec<f64>,
    /// Initial velocities; empty means zeros.
    pub qd0: Vec<f64>,
    /// Hold the NBS control constant over each step instead of
    /// re-evaluating it at every Runge–Kutta stage.
    pub zoh: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.01,
            horizon: 100.0,
            disturbance: DisturbanceModel::None,
            q0: Vec::new(),
            qd0: Vec::new(),
            zoh: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid(
                "sim.dt",
                format!("must be positive, got {}", self.dt),
            ));
        }
        if !(self.horizon >= self.dt) || !self.horizon.is_finite() {
            return Err(Error::invalid(
                "sim.horizon",
                "must be finite and at least dt",
            ));
        }
        for (f, v) in [("sim.q0", &self.q0), ("sim.qd0", &self.qd0)] {
            if !v.is_empty() && v.len() != n {
                return Err(Error::invalid(
                    f,
                    format!("expected {n} entries, got {}", v.len()),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(f, "entries must be finite"));
            }
        }
        self.disturbance.validate(n)
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Initial `[q; q̇]`.
    pub fn initial_state(&self, n: usize) -> Vec<f64> {
        let pick = |v: &Vec<f64>| {
            if v.is_empty() {
                vec![0.0; n]
            } else {
                v.clone()
            }
        };
        let mut y = pick(&self.q0);
        y.extend(pick(&self.qd0));
        y
    }
}

/// One logged instant.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub q_ref: Vec<f64>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub u: Vec<f64>,
    pub z1sq: f64,
    /// Lyapunov value; NaN for controllers that do not define one.
    pub v: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutLog {
    pub rows: Vec<LogRow>,
}

impl RolloutLog {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.q.len())
    }

    pub fn horizon(&self) -> f64 {
        match (self.rows.first(), self.rows.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

/// Controller driving a rollout.
pub enum Policy<'a, M> {
    Nbs(&'a NbsController<M>),
    /// Evaluated once per step and held.
    Pid(PidBaseline),
}

/// RK4 simulation of `plant` under `policy` tracking `reference`.
pub fn rollout<P: Dynamics, M: ElModel>(
    plant: &P,
    mut policy: Policy<'_, M>,
    reference: &ReferenceTrajectory,
    cfg: &SimConfig,
) -> Result<RolloutLog> {
    let n = plant.dim();
    cfg.validate(n)?;
    reference.validate(n)?;
    if let Policy::Nbs(c) = &policy {
        if c.params.dim() != n {
            return Err(Error::dim("controller", n, c.params.dim()));
        }
    }
    let tau = cfg.disturbance.torque(n);
    let steps = cfg.steps();
    let mut log = RolloutLog {
        rows: Vec::with_capacity(steps + 1),
    };
    let mut s = OdeState {
        t: 0.0,
        y: cfg.initial_state(n),
    };
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        s.t = t;
        let (q, qd) = (&s.y[..n], &s.y[n..]);
        let r = reference.at(n, t);
        let z1: Vec<f64> = (0..n).map(|i| q[i] - r.q[i]).collect();
        let (u, z2, v) = match &mut policy {
            Policy::Nbs(c) => {
                let e = c.evaluate(q, qd, &r)?;
                (e.u, e.z2, e.lyapunov)
            }
            Policy::Pid(p) => (p.control(q, qd, &r, cfg.dt)?, vec![f64::NAN; n], f64::NAN),
        };
        if !s.y.iter().chain(&u).all(|x| x.is_finite()) {
            return Err(Error::RolloutNonFinite { step: k, t });
        }
        let z1sq = z1.iter().map(|x| x * x).sum();
        log.rows.push(LogRow {
            t,
            q: q.to_vec(),
            qdot: qd.to_vec(),
            q_ref: r.q,
            z1,
            z2,
            u: u.clone(),
            z1sq,
            v,
        });
        if k == steps {
            break;
        }
        let hold = match &policy {
            Policy::Nbs(_) => cfg.zoh,
            Policy::Pid(_) => true,
        };
        let ctrl = match &policy {
            Policy::Nbs(c) => Some(*c),
            Policy::Pid(_) => None,
        };
        let f = |ts: f64, y: &[f64]| -> Result<Vec<f64>> {
            let (q, qd) = (&y[..n], &y[n..]);
            let us = match ctrl {
                Some(c) if !hold => c.control(q, qd, &reference.at(n, ts))?,
                _ => u.clone(),
            };
            let force: Vec<f64> = (0..n).map(|i| us[i] + tau[i]).collect();
            let a = plant.accel_at(q, qd, &force)?;
            Ok(qd.iter().copied().chain(a).collect())
        };
        s = match rk4_step(f, &s, cfg.dt) {
            Ok(next) => next,
            Err(e) if e.is_non_finite() => return Err(Error::RolloutNonFinite { step: k, t }),
            Err(e) => return Err(e),
        };
    }
    Ok(log)
}
