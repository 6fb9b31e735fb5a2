use super::adam::{Adam, AdamConfig};
use crate::autodiff::{Real, Tape, Var};
use crate::blocks::NbsParams;
use crate::controller::{nbs_control_tape, BoundNbs, ReferenceTrajectory};
use crate::error::{Error, Result};
use crate::model::{Dynamics, ElModel};
use crate::nets::Network;
use crate::numerics::{rk4_step, OdeState, SmallMatrix};
use serde::{Deserialize, Serialize};

/// Running cost summed over the discretized horizon.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StageCost {
    /// z₁ᵀz₁.
    #[default]
    Z1,
    /// z₁ᵀz₁ + w·uᵀu.
    Z1Effort { weight: f64 },
}

/// Settings of controller training by backpropagation through time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Rollout length in seconds.
    pub horizon: f64,
    pub dt: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub lr_decay: f64,
    /// Required lower bound on the Hessian of Φ at the origin.
    pub alpha: f64,
    pub stage_cost: StageCost,
    pub adam: AdamConfig,
    pub q0: Vec<f64>,
    pub qd0: Vec<f64>,
    pub zoh: bool,
    pub train_phi: bool,
    pub train_damping: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            horizon: 1.0,
            dt: 0.01,
            epochs: 200,
            lr: 1e-3,
            lr_decay: 0.99,
            alpha: 0.0,
            stage_cost: StageCost::Z1,
            adam: AdamConfig::default(),
            q0: Vec::new(),
            qd0: Vec::new(),
            zoh: false,
            train_phi: true,
            train_damping: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid(
                "train.dt",
                format!("must be positive, got {}", self.dt),
            ));
        }
        if !(self.horizon >= self.dt) || !self.horizon.is_finite() {
            return Err(Error::invalid(
                "train.horizon",
                "must be finite and at least dt",
            ));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid(
                "train.lr",
                "lr must be positive and lr_decay in (0, 1]",
            ));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(
                "train.alpha",
                "must be finite and non-negative",
            ));
        }
        if let StageCost::Z1Effort { weight } = self.stage_cost {
            if !(weight >= 0.0) || !weight.is_finite() {
                return Err(Error::invalid(
                    "train.stage_cost.weight",
                    "must be finite and non-negative",
                ));
            }
        }
        for (f, v) in [("train.q0", &self.q0), ("train.qd0", &self.qd0)] {
            if !v.is_empty() && v.len() != n {
                return Err(Error::invalid(
                    f,
                    format!("expected {n} entries, got {}", v.len()),
                ));
            }
        }
        self.adam.validate()
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Objective at the start of each epoch.
    pub loss: Vec<f64>,
    /// Regularizer part of `loss`.
    pub regularizer: Vec<f64>,
    /// Objective at the returned parameters.
    pub final_loss: f64,
}

/// Objective value and its gradient per parameter block, in
/// [`Network::params`] order.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub regularizer: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Σₖ ℓ(z₁(t_k), u)·dt over k = 1..N plus ReLU(λ_max(αI − HΦ(0))), with its
/// gradient by reverse accumulation through the integrator.
pub fn bptt_loss<P: Dynamics, M: ElModel>(
    plant: &P,
    model: &M,
    params: &NbsParams,
    reference: &ReferenceTrajectory,
    cfg: &TrainConfig,
    epoch: usize,
    tape: &mut Tape,
) -> Result<LossGrad> {
    tape.clear();
    let tape = &*tape;
    let n = params.dim();
    let bound = BoundNbs::new(params, tape);
    let pb = plant.bind(tape);
    let mb = model.bind(tape);
    let y0: Vec<f64> = {
        let pick = |v: &Vec<f64>| {
            if v.is_empty() {
                vec![0.0; n]
            } else {
                v.clone()
            }
        };
        pick(&cfg.q0).into_iter().chain(pick(&cfg.qd0)).collect()
    };
    let mut s = OdeState::<Var> {
        t: 0.0,
        y: y0.iter().map(|&v| Var::cst(v)).collect(),
    };
    let mut cost = Var::cst(0.0);
    for k in 0..cfg.steps() {
        let t = k as f64 * cfg.dt;
        s.t = t;
        let mut held: Option<Vec<Var>> = None;
        let f = |ts: f64, y: &[_]| {
            let (q, qd) = (&y[..n], &y[n..]);
            let u = match (&held, cfg.zoh) {
                (Some(u), true) => u.clone(),
                _ => {
                    let r = reference.at(n, ts);
                    let out = nbs_control_tape(params, &bound, model, &mb, q, qd, &r)?;
                    held = Some(out.u.clone());
                    out.u
                }
            };
            let a = plant.accel(&pb, q, qd, &u)?;
            Ok(qd.iter().copied().chain(a).collect())
        };
        let next = rk4_step(f, &s, cfg.dt).map_err(|e| {
            if e.is_non_finite() {
                Error::NonFiniteLoss { epoch, step: k }
            } else {
                e
            }
        })?;
        s = next;
        let tn = (k + 1) as f64 * cfg.dt;
        let r = reference.at(n, tn);
        let mut l = Var::cst(0.0);
        for i in 0..n {
            let z = s.y[i] - r.q[i];
            l += z * z;
        }
        if let StageCost::Z1Effort { weight } = cfg.stage_cost {
            let out = nbs_control_tape(params, &bound, model, &mb, &s.y[..n], &s.y[n..], &r)?;
            for u in out.u {
                l += u * u * weight;
            }
        }
        cost += l * cfg.dt;
        if !cost.value().is_finite() {
            return Err(Error::NonFiniteLoss { epoch, step: k });
        }
    }
    let zero = vec![Var::cst(0.0); n];
    let h = params.phi.hessian_on_tape(&bound.psi, &zero)?;
    let a = SmallMatrix::from_fn(n, n, |i, j| {
        if i == j {
            Var::cst(cfg.alpha) - h[(i, j)]
        } else {
            -h[(i, j)]
        }
    });
    let sym = tape.assemble_vars(n, n, a.data());
    let reg = tape.sym_max_eig(sym).relu();
    let total = cost + reg;
    if !total.value().is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch,
            step: cfg.steps(),
        });
    }
    let g = tape.backward(total);
    let mut grads: Vec<Vec<f64>> = bound.all().map(|&b| g.of(b).to_vec()).collect();
    let psi_blocks = bound.psi.len();
    for (i, gr) in grads.iter_mut().enumerate() {
        if (i < psi_blocks && !cfg.train_phi) || (i >= psi_blocks && !cfg.train_damping) {
            gr.fill(0.0);
        }
    }
    Ok(LossGrad {
        loss: total.value(),
        regularizer: reg.value(),
        grads,
    })
}

/// Adam on the controller parameters with gradients from [`bptt_loss`].
pub fn train_controller<P: Dynamics, M: ElModel>(
    plant: &P,
    model: &M,
    init: NbsParams,
    reference: &ReferenceTrajectory,
    cfg: &TrainConfig,
) -> Result<(NbsParams, TrainReport)> {
    let n = init.dim();
    crate::nets::ParamFile::validate(&init)?;
    cfg.validate(n)?;
    reference.validate(n)?;
    if plant.dim() != n || model.dim() != n {
        return Err(Error::dim("plant/model", n, plant.dim().min(model.dim())));
    }
    let mut params = init;
    let mut adam = Adam::new(&params.params(), cfg.adam);
    let mut report = TrainReport::default();
    let mut tape = Tape::new();
    for epoch in 0..cfg.epochs {
        let lg = bptt_loss(plant, model, &params, reference, cfg, epoch, &mut tape)?;
        report.loss.push(lg.loss);
        report.regularizer.push(lg.regularizer);
        let refs: Vec<&[f64]> = lg.grads.iter().map(Vec::as_slice).collect();
        adam.step(params.params_mut(), &refs, cfg.lr_at(epoch))?;
    }
    report.final_loss =
        bptt_loss(plant, model, &params, reference, cfg, cfg.epochs, &mut tape)?.loss;
    Ok((params, report))
}
