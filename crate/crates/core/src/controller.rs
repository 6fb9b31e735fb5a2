//! Tracking control laws: the NBS controller and a PID baseline.

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::blocks::{bind_nbs, NbsParams, PotentialPhi};
use crate::error::{Error, Result};
use crate::model::ElModel;
use crate::numerics::{dot, SmallMatrix};
use serde::{Deserialize, Serialize};

/// Reference value and its first two time derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct RefPoint {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

fn default_omega() -> f64 {
    0.1
}

/// Built-in reference trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ReferenceTrajectory {
    /// Joint i follows A·sin(ωt) for even i and A·cos(ωt) for odd i.
    SinCos {
        #[serde(default = "default_omega")]
        omega: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Constant {
        q: Vec<f64>,
    },
}

impl Default for ReferenceTrajectory {
    fn default() -> Self {
        ReferenceTrajectory::SinCos {
            omega: default_omega(),
            amplitude: 1.0,
        }
    }
}

impl ReferenceTrajectory {
    pub fn at(&self, n: usize, t: f64) -> RefPoint {
        match self {
            ReferenceTrajectory::SinCos { omega, amplitude } => {
                let (w, a) = (*omega, *amplitude);
                let (s, c) = (w * t).sin_cos();
                let mut p = RefPoint {
                    q: Vec::with_capacity(n),
                    qd: Vec::with_capacity(n),
                    qdd: Vec::with_capacity(n),
                };
                for i in 0..n {
                    if i % 2 == 0 {
                        p.q.push(a * s);
                        p.qd.push(a * w * c);
                        p.qdd.push(-a * w * w * s);
                    } else {
                        p.q.push(a * c);
                        p.qd.push(-a * w * s);
                        p.qdd.push(-a * w * w * c);
                    }
                }
                p
            }
            ReferenceTrajectory::Constant { q } => RefPoint {
                q: q.clone(),
                qd: vec![0.0; q.len()],
                qdd: vec![0.0; q.len()],
            },
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            ReferenceTrajectory::SinCos { omega, amplitude } => {
                if !omega.is_finite() || !amplitude.is_finite() {
                    return Err(Error::invalid(
                        "reference",
                        "omega and amplitude must be finite",
                    ));
                }
            }
            ReferenceTrajectory::Constant { q } => {
                if q.len() != n || q.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(
                        "reference.q",
                        format!("expected {n} finite entries"),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn check_len(what: &'static str, n: usize, got: usize) -> Result<()> {
    if n != got {
        return Err(Error::dim(what, n, got));
    }
    Ok(())
}

/// z₁ = q − qᵈ and z₂ = q̇ − q̇ᵈ + ∇Φ(z₁).
pub fn tracking_errors(
    phi: &PotentialPhi,
    q: &[f64],
    qd: &[f64],
    r: &RefPoint,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = phi.dim();
    check_len("q", n, q.len())?;
    check_len("qdot", n, qd.len())?;
    let z1: Vec<f64> = (0..n).map(|i| q[i] - r.q[i]).collect();
    let g = crate::blocks::phi_grad(phi, &z1)?;
    let z2 = (0..n).map(|i| qd[i] - r.qd[i] + g[i]).collect();
    Ok((z1, z2))
}

/// φ = q̇ᵈ − ∇Φ(z₁).
pub fn virtual_signal(phi: &PotentialPhi, z1: &[f64], qd_ref: &[f64]) -> Result<Vec<f64>> {
    check_len("qdot_ref", phi.dim(), qd_ref.len())?;
    let g = crate::blocks::phi_grad(phi, z1)?;
    Ok(qd_ref.iter().zip(g).map(|(a, b)| a - b).collect())
}

/// φ̇ = q̈ᵈ − HΦ(z₁)·ż₁.
pub fn virtual_signal_rate(
    phi: &PotentialPhi,
    z1: &[f64],
    z1_dot: &[f64],
    qdd_ref: &[f64],
) -> Result<Vec<f64>> {
    check_len("z1_dot", phi.dim(), z1_dot.len())?;
    check_len("qddot_ref", phi.dim(), qdd_ref.len())?;
    let h = crate::blocks::phi_hessian_at(phi, z1)?;
    let hv = h.matvec(z1_dot);
    Ok(qdd_ref.iter().zip(hv).map(|(a, b)| a - b).collect())
}

/// Everything the control law computes at one instant.
pub struct ControlOutput<'t> {
    pub u: Vec<Var<'t>>,
    pub z1: Vec<Var<'t>>,
    pub z2: Vec<Var<'t>>,
    pub grad_phi: Vec<Var<'t>>,
    pub damping: SmallMatrix<Var<'t>>,
    /// V = Φ(z₁) + ½ z₂ᵀ M z₂.
    pub lyapunov: Var<'t>,
}

/// Controller parameters bound to a tape.
pub struct BoundNbs<'t> {
    pub psi: Vec<Tensor<'t>>,
    pub damping: Vec<Tensor<'t>>,
}

impl<'t> BoundNbs<'t> {
    pub fn new(p: &NbsParams, tape: &'t Tape) -> Self {
        let (psi, damping) = bind_nbs(p, tape);
        BoundNbs { psi, damping }
    }

    pub fn all(&self) -> impl Iterator<Item = &Tensor<'t>> {
        self.psi.iter().chain(&self.damping)
    }
}

/// u = G + Mφ̇ + Cφ − ∇Φ − D(z₂)z₂ with model terms from `model`.
pub fn nbs_control_tape<'t, M: ElModel>(
    params: &NbsParams,
    bound: &BoundNbs<'t>,
    model: &M,
    mbound: &M::Bound<'t>,
    q: &[Var<'t>],
    qd: &[Var<'t>],
    r: &RefPoint,
) -> Result<ControlOutput<'t>> {
    let n = params.dim();
    check_len("q", n, q.len())?;
    check_len("qdot", n, qd.len())?;
    check_len("model", n, model.dim())?;
    let z1: Vec<Var> = (0..n).map(|i| q[i] - r.q[i]).collect();
    let z1_dot: Vec<Var> = (0..n).map(|i| qd[i] - r.qd[i]).collect();
    let pt = params.phi.terms(&bound.psi, &z1, &z1_dot)?;
    let phi_sig: Vec<Var> = (0..n).map(|i| Var::cst(r.qd[i]) - pt.grad[i]).collect();
    let phi_rate: Vec<Var> = (0..n).map(|i| Var::cst(r.qdd[i]) - pt.hess_v[i]).collect();
    let z2: Vec<Var> = (0..n).map(|i| qd[i] - phi_sig[i]).collect();
    let terms = model.terms(mbound, q, qd)?;
    let d = params.damping.matrix_on_tape(&bound.damping, &z2)?;
    let m_rate = terms.m.matvec(&phi_rate);
    let c_phi = terms.c.matvec(&phi_sig);
    let dz = d.matvec(&z2);
    let u: Vec<Var> = (0..n)
        .map(|i| terms.g[i] + m_rate[i] + c_phi[i] - pt.grad[i] - dz[i])
        .collect();
    if u.iter().any(|v| !v.value().is_finite()) {
        return Err(Error::NonFinite {
            what: "control".into(),
        });
    }
    let mz = terms.m.matvec(&z2);
    let lyapunov = pt.value + dot(&z2, &mz) * 0.5;
    Ok(ControlOutput {
        u,
        z1,
        z2,
        grad_phi: pt.grad,
        damping: d,
        lyapunov,
    })
}

/// The NBS controller around a model handle.
#[derive(Clone, Debug)]
pub struct NbsController<M> {
    pub params: NbsParams,
    pub model: M,
}

impl<M: ElModel> NbsController<M> {
    pub fn new(params: NbsParams, model: M) -> Result<Self> {
        if params.dim() != model.dim() {
            return Err(Error::dim("model", params.dim(), model.dim()));
        }
        Ok(NbsController { params, model })
    }

    /// Control at a plain state.
    pub fn control(&self, q: &[f64], qd: &[f64], r: &RefPoint) -> Result<Vec<f64>> {
        Ok(self.evaluate(q, qd, r)?.u)
    }

    /// Control, error coordinates and Lyapunov value at a plain state.
    pub fn evaluate(&self, q: &[f64], qd: &[f64], r: &RefPoint) -> Result<ControlEval> {
        let tape = Tape::new();
        let b = BoundNbs::new(&self.params, &tape);
        let mb = self.model.bind(&tape);
        let qv = crate::autodiff::lift::<Var>(q);
        let qdv = crate::autodiff::lift::<Var>(qd);
        let out = nbs_control_tape(&self.params, &b, &self.model, &mb, &qv, &qdv, r)?;
        Ok(ControlEval {
            u: crate::autodiff::values(&out.u),
            z1: crate::autodiff::values(&out.z1),
            z2: crate::autodiff::values(&out.z2),
            lyapunov: out.lyapunov.value(),
        })
    }
}

/// Plain-valued result of one control evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlEval {
    pub u: Vec<f64>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub lyapunov: f64,
}

/// Free-function form of the control law at a plain state.
pub fn nbs_control<M: ElModel>(
    ctrl: &NbsController<M>,
    q: &[f64],
    qd: &[f64],
    r: &RefPoint,
) -> Result<Vec<f64>> {
    ctrl.control(q, qd, r)
}

/// PID gains; defaults are Kp = 50, Ki = 10, Kd = 20 on every joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    #[serde(default = "default_clamp")]
    pub integral_clamp: f64,
}

fn default_clamp() -> f64 {
    100.0
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            kp: 50.0,
            ki: 10.0,
            kd: 20.0,
            integral_clamp: default_clamp(),
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pid.kp", self.kp),
            ("pid.ki", self.ki),
            ("pid.kd", self.kd),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(
                    name,
                    "gains must be finite and non-negative",
                ));
            }
        }
        if !(self.integral_clamp > 0.0) {
            return Err(Error::invalid("pid.integral_clamp", "must be positive"));
        }
        Ok(())
    }
}

/// PID on e = qᵈ − q with a trapezoidal, clamped integral.
#[derive(Clone, Debug)]
pub struct PidBaseline {
    pub kp: Vec<f64>,
    pub ki: Vec<f64>,
    pub kd: Vec<f64>,
    pub clamp: f64,
    integral: Vec<f64>,
    last_error: Option<Vec<f64>>,
}

impl PidBaseline {
    pub fn new(n: usize, g: &PidGains) -> Self {
        PidBaseline {
            kp: vec![g.kp; n],
            ki: vec![g.ki; n],
            kd: vec![g.kd; n],
            clamp: g.integral_clamp,
            integral: vec![0.0; n],
            last_error: None,
        }
    }

    pub fn integral(&self) -> &[f64] {
        &self.integral
    }

    /// Advances the integral by `dt` (zero on the first call) and returns u.
    pub fn control(&mut self, q: &[f64], qd: &[f64], r: &RefPoint, dt: f64) -> Result<Vec<f64>> {
        let n = self.kp.len();
        check_len("q", n, q.len())?;
        check_len("qdot", n, qd.len())?;
        if !(dt > 0.0) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        let e: Vec<f64> = (0..n).map(|i| r.q[i] - q[i]).collect();
        if let Some(prev) = &self.last_error {
            for i in 0..n {
                let v = self.integral[i] + 0.5 * (prev[i] + e[i]) * dt;
                self.integral[i] = v.clamp(-self.clamp, self.clamp);
            }
        }
        let u = (0..n)
            .map(|i| {
                self.kp[i] * e[i] + self.ki[i] * self.integral[i] + self.kd[i] * (r.qd[i] - qd[i])
            })
            .collect();
        self.last_error = Some(e);
        Ok(u)
    }
}

/// Free-function form of the PID step.
pub fn pid_control(
    pid: &mut PidBaseline,
    q: &[f64],
    qd: &[f64],
    r: &RefPoint,
    dt: f64,
) -> Result<Vec<f64>> {
    pid.control(q, qd, r, dt)
}
