//! Modified Lagrangian network L(q, q̇) = L_T(q, q̇) + ½ε_M‖q̇‖² − L_V(q).
//!
//! L_T is a partially input-convex network with context q and convex input
//! q̇, so the learned inertia M̂ = ∂²L/∂q̇² is at least ε_M·I. Every derivative
//! is read off a truncated multivariate jet: with symbols a_i, b_j (velocity
//! directions), c (position direction along q̇) and d_k (position directions),
//!
//! * M̂_ij = [a_i b_j], ∂L/∂q_k = [d_k], (∂²L/∂q̇∂q · q̇)_i = [a_i c],
//! * Ṁ̂_ij = [a_i b_j c].

use crate::autodiff::{Basis, Jet, Real, Src, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::harness::adam::{Adam, AdamConfig};
use crate::model::{Dynamics, ElModel, ModelTerms};
use crate::nets::{
    fcnn_forward, picnn_forward, Activation, MlpParams, Network, Param, ParamFile, PicnnParams,
};
use crate::numerics::{rk4_step, solve_spd, OdeState, SmallMatrix};
use crate::plants::{forward_dynamics, mass_matrix, PlanarArm};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::rc::Rc;

pub const DEFAULT_EPS_M: f64 = 1e-3;
/// Largest state dimension the jet symbol layout supports.
pub const MAX_DIM: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianNet {
    pub kinetic: PicnnParams,
    pub potential: MlpParams,
    pub eps_m: f64,
}

impl LagrangianNet {
    /// Softplus hidden layers of the given widths on both parts, scalar
    /// linear outputs.
    pub fn new(n: usize, widths: &[usize], eps_m: f64, seed: u64) -> Self {
        let (kw, sizes, acts) = Self::shapes(n, widths);
        LagrangianNet {
            kinetic: PicnnParams::init(n, n, &kw, Activation::Softplus, Activation::Identity, seed),
            potential: MlpParams::init(&sizes, &acts, seed ^ 0x9e37_79b9_7f4a_7c15),
            eps_m,
        }
    }

    pub fn zeros(n: usize, widths: &[usize], eps_m: f64) -> Self {
        let (kw, sizes, acts) = Self::shapes(n, widths);
        LagrangianNet {
            kinetic: PicnnParams::zeros(n, n, &kw, Activation::Softplus, Activation::Identity),
            potential: MlpParams::zeros(&sizes, &acts),
            eps_m,
        }
    }

    fn shapes(n: usize, widths: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<Activation>) {
        let mut kw = widths.to_vec();
        kw.push(1);
        let mut sizes = vec![n];
        sizes.extend_from_slice(widths);
        sizes.push(1);
        let mut acts = vec![Activation::Softplus; widths.len()];
        acts.push(Activation::Identity);
        (kw, sizes, acts)
    }

    pub fn dim(&self) -> usize {
        self.kinetic.input_dim()
    }

    /// Number of parameter blocks belonging to L_T.
    pub fn kinetic_blocks(&self) -> usize {
        self.kinetic.params().len()
    }

    pub fn validate(&self) -> Result<()> {
        self.kinetic.validate()?;
        self.potential.validate()?;
        let n = self.dim();
        if n == 0 || n > MAX_DIM {
            return Err(Error::invalid(
                "lnn.kinetic",
                format!("dimension must be in 1..={MAX_DIM}"),
            ));
        }
        if self.kinetic.ctx_dim() != n
            || self.potential.input_dim() != n
            || self.potential.output_dim() != 1
        {
            return Err(Error::invalid(
                "lnn",
                "kinetic and potential parts must share the state dimension",
            ));
        }
        if !(self.eps_m > 0.0) || !self.eps_m.is_finite() {
            return Err(Error::invalid("lnn.eps_m", "must be positive and finite"));
        }
        Ok(())
    }

    fn check(&self, what: &'static str, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::dim(what, self.dim(), len));
        }
        Ok(())
    }

    /// Jet evaluation at `q.len() / n` states stored sample-major.
    pub fn terms_batch<'t>(
        &self,
        bound: &[Tensor<'t>],
        q: &[Var<'t>],
        qd: &[Var<'t>],
        with_mdot: bool,
    ) -> Result<Vec<LnnTerms<'t>>> {
        let n = self.dim();
        if q.len() != qd.len() || q.is_empty() || q.len() % n != 0 {
            return Err(Error::dim("lnn state batch", n, q.len()));
        }
        let batch = q.len() / n;
        let tape = bound[0].tape();
        let sym = Sym(n);
        let (xb, cb, out) = (sym.x_basis(), sym.ctx_basis(), sym.out_basis(with_mdot));
        let ctx = Jet::build(tape, &cb, n, batch, |r, s, k| {
            let m = cb.monomials()[k];
            if m == 0 {
                q[s * n + r].src()
            } else if m == sym.c() {
                qd[s * n + r].src()
            } else {
                Src::Const(if m == sym.d(r) { 1.0 } else { 0.0 })
            }
        });
        let x = Jet::build(tape, &xb, n, batch, |r, s, k| {
            let m = xb.monomials()[k];
            if m == 0 {
                qd[s * n + r].src()
            } else {
                Src::Const(if m == sym.a(r) || m == sym.b(r) {
                    1.0
                } else {
                    0.0
                })
            }
        });
        let kb = self.kinetic_blocks();
        let lt = self.kinetic.forward_jet(&bound[..kb], &ctx, &x, &out);
        let lv = self.potential.forward_jet(&bound[kb..], &ctx);
        let mut res = Vec::with_capacity(batch);
        for s in 0..batch {
            let qds = &qd[s * n..(s + 1) * n];
            let ke: Var =
                qds.iter().fold(Var::cst(0.0), |acc, &v| acc + v * v) * (0.5 * self.eps_m);
            let lagrangian = lt.coeff(0, s, 0) - lv.coeff(0, s, 0) + ke;
            let dl_dq = (0..n)
                .map(|k| lt.coeff(0, s, sym.d(k)) - lv.coeff(0, s, sym.d(k)))
                .collect();
            let mut mass = SmallMatrix::from_fn(n, n, |_, _| Var::cst(0.0));
            let mut mdot = with_mdot.then(|| mass.clone());
            for i in 0..n {
                for j in i..n {
                    let mut v = lt.coeff(0, s, sym.a(i) | sym.b(j));
                    if i == j {
                        v = v + self.eps_m;
                    }
                    mass[(i, j)] = v;
                    mass[(j, i)] = v;
                    if let Some(md) = mdot.as_mut() {
                        let w = lt.coeff(0, s, sym.a(i) | sym.b(j) | sym.c());
                        md[(i, j)] = w;
                        md[(j, i)] = w;
                    }
                }
            }
            let mixed = (0..n).map(|i| lt.coeff(0, s, sym.a(i) | sym.c())).collect();
            res.push(LnnTerms {
                lagrangian,
                dl_dq,
                mass,
                mixed,
                mdot,
                qd: qds.to_vec(),
            });
        }
        Ok(res)
    }

    /// Terms at a single plain state.
    pub fn point(&self, q: &[f64], qd: &[f64]) -> Result<PointTerms> {
        self.check("q", q.len())?;
        self.check("qdot", qd.len())?;
        let tape = Tape::new();
        let bound = Network::bind(self, &tape);
        let qv: Vec<Var> = q.iter().map(|&v| Var::cst(v)).collect();
        let qdv: Vec<Var> = qd.iter().map(|&v| Var::cst(v)).collect();
        let t = self
            .terms_batch(&bound, &qv, &qdv, true)?
            .pop()
            .expect("one sample");
        let vals = |v: &[Var]| v.iter().map(|x| x.value()).collect::<Vec<_>>();
        Ok(PointTerms {
            lagrangian: t.lagrangian.value(),
            dl_dq: vals(&t.dl_dq),
            mass: t.mass.values(),
            mixed: vals(&t.mixed),
            mdot: t.mdot.as_ref().expect("requested").values(),
        })
    }
}

impl Network for LagrangianNet {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.kinetic.params();
        v.extend(self.potential.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.kinetic.params_mut();
        v.extend(self.potential.params_mut());
        v
    }
}

impl ParamFile for LagrangianNet {
    const KIND: &'static str = "lnn-model";

    fn validate(&self) -> Result<()> {
        LagrangianNet::validate(self)
    }
}

/// Jet symbol layout for dimension n.
struct Sym(usize);

impl Sym {
    fn a(&self, i: usize) -> u32 {
        1 << i
    }
    fn b(&self, j: usize) -> u32 {
        1 << (self.0 + j)
    }
    fn c(&self) -> u32 {
        1 << (2 * self.0)
    }
    fn d(&self, k: usize) -> u32 {
        1 << (2 * self.0 + 1 + k)
    }

    fn x_basis(&self) -> Rc<Basis> {
        Basis::new((0..self.0).flat_map(|i| [self.a(i), self.b(i)]))
    }

    fn ctx_basis(&self) -> Rc<Basis> {
        Basis::new((0..self.0).map(|k| self.d(k)).chain([self.c()]))
    }

    fn out_basis(&self, with_mdot: bool) -> Rc<Basis> {
        let n = self.0;
        let mut m: Vec<u32> = (0..n)
            .flat_map(|i| [self.a(i), self.b(i), self.d(i), self.a(i) | self.c()])
            .collect();
        m.push(self.c());
        for i in 0..n {
            for j in i..n {
                m.push(self.a(i) | self.b(j));
                if with_mdot {
                    m.push(self.a(i) | self.b(j) | self.c());
                }
            }
            if with_mdot {
                m.push(self.b(i) | self.c());
            }
        }
        Basis::new(m)
    }
}

/// Jet-extracted quantities at one state, recorded on a tape.
pub struct LnnTerms<'t> {
    pub lagrangian: Var<'t>,
    pub dl_dq: Vec<Var<'t>>,
    pub mass: SmallMatrix<Var<'t>>,
    /// (∂²L/∂q̇∂q)·q̇.
    pub mixed: Vec<Var<'t>>,
    pub mdot: Option<SmallMatrix<Var<'t>>>,
    qd: Vec<Var<'t>>,
}

impl<'t> LnnTerms<'t> {
    fn mdot(&self) -> &SmallMatrix<Var<'t>> {
        self.mdot
            .as_ref()
            .expect("terms evaluated without the Ṁ̂ columns")
    }

    /// Ĉ = Ṁ̂ − ½Ṁ̂ᵀ.
    pub fn coriolis(&self) -> SmallMatrix<Var<'t>> {
        let md = self.mdot();
        md.sub(&md.transpose().scale(0.5))
    }

    /// Ĝ = −∂L/∂q + ½Ṁ̂ᵀq̇.
    pub fn gravity(&self) -> Vec<Var<'t>> {
        let h = self.mdot().transpose().matvec(&self.qd);
        (0..self.dl_dq.len())
            .map(|i| h[i] * 0.5 - self.dl_dq[i])
            .collect()
    }

    /// M̂⁻¹(u + ∂L/∂q − (∂²L/∂q̇∂q)q̇).
    pub fn accel(&self, u: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        let rhs: Vec<Var> = (0..u.len())
            .map(|i| u[i] + self.dl_dq[i] - self.mixed[i])
            .collect();
        solve_spd(&self.mass, &rhs)
    }
}

/// Plain-valued counterpart of [`LnnTerms`].
#[derive(Clone, Debug)]
pub struct PointTerms {
    pub lagrangian: f64,
    pub dl_dq: Vec<f64>,
    pub mass: SmallMatrix,
    pub mixed: Vec<f64>,
    pub mdot: SmallMatrix,
}

impl PointTerms {
    pub fn coriolis(&self) -> SmallMatrix {
        self.mdot.sub(&self.mdot.transpose().scale(0.5))
    }

    pub fn gravity(&self, qd: &[f64]) -> Vec<f64> {
        let h = self.mdot.transpose().matvec(qd);
        (0..qd.len()).map(|i| 0.5 * h[i] - self.dl_dq[i]).collect()
    }
}

/// L(q, q̇) on any scalar type.
pub fn lagrangian<T: Real>(net: &LagrangianNet, q: &[T], qd: &[T]) -> Result<T> {
    net.check("q", q.len())?;
    net.check("qdot", qd.len())?;
    let lt = picnn_forward(&net.kinetic, q, qd)?;
    let lv = fcnn_forward(&net.potential, q)?[0];
    let ke = qd.iter().fold(T::zero(), |acc, &v| acc + v * v) * T::cst(0.5 * net.eps_m);
    Ok(lt + ke - lv)
}

pub fn mass_hat(net: &LagrangianNet, q: &[f64], qd: &[f64]) -> Result<SmallMatrix> {
    Ok(net.point(q, qd)?.mass)
}

/// Σ_k ∂M̂/∂q_k · q̇_k with the velocity slot of M̂ held fixed.
pub fn mdot_hat(net: &LagrangianNet, q: &[f64], qd: &[f64]) -> Result<SmallMatrix> {
    Ok(net.point(q, qd)?.mdot)
}

pub fn coriolis_hat(net: &LagrangianNet, q: &[f64], qd: &[f64]) -> Result<SmallMatrix> {
    Ok(net.point(q, qd)?.coriolis())
}

pub fn gravity_hat(net: &LagrangianNet, q: &[f64], qd: &[f64]) -> Result<Vec<f64>> {
    Ok(net.point(q, qd)?.gravity(qd))
}

/// Euler–Lagrange inversion q̈̂ = M̂⁻¹(u + ∂L/∂q − (∂²L/∂q̇∂q)q̇).
pub fn predict_accel(net: &LagrangianNet, q: &[f64], qd: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    net.check("u", u.len())?;
    let p = net.point(q, qd)?;
    let rhs: Vec<f64> = (0..u.len())
        .map(|i| u[i] + p.dl_dq[i] - p.mixed[i])
        .collect();
    solve_spd(&p.mass, &rhs)
}

/// ‖M̂·q̈̂ − (u − Ĉq̇ − Ĝ)‖, zero when L_T is quadratic in q̇.
pub fn decomposition_residual(
    net: &LagrangianNet,
    q: &[f64],
    qd: &[f64],
    u: &[f64],
) -> Result<f64> {
    net.check("u", u.len())?;
    let p = net.point(q, qd)?;
    let rhs: Vec<f64> = (0..u.len())
        .map(|i| u[i] + p.dl_dq[i] - p.mixed[i])
        .collect();
    let acc = solve_spd(&p.mass, &rhs)?;
    let ma = p.mass.matvec(&acc);
    let cq = p.coriolis().matvec(qd);
    let g = p.gravity(qd);
    Ok((0..u.len())
        .map(|i| (ma[i] - (u[i] - cq[i] - g[i])).powi(2))
        .sum::<f64>()
        .sqrt())
}

impl ElModel for LagrangianNet {
    type Bound<'t> = Vec<Tensor<'t>>;

    fn dim(&self) -> usize {
        LagrangianNet::dim(self)
    }

    fn bind<'t>(&self, tape: &'t Tape) -> Vec<Tensor<'t>> {
        Network::bind(self, tape)
    }

    fn terms<'t>(
        &self,
        bound: &Vec<Tensor<'t>>,
        q: &[Var<'t>],
        qd: &[Var<'t>],
    ) -> Result<ModelTerms<Var<'t>>> {
        self.check("q", q.len())?;
        let t = self
            .terms_batch(bound, q, qd, true)?
            .pop()
            .expect("one sample");
        Ok(ModelTerms {
            c: t.coriolis(),
            g: t.gravity(),
            m: t.mass,
        })
    }
}

impl Dynamics for LagrangianNet {
    type Bound<'t> = Vec<Tensor<'t>>;

    fn dim(&self) -> usize {
        LagrangianNet::dim(self)
    }

    fn bind<'t>(&self, tape: &'t Tape) -> Vec<Tensor<'t>> {
        Network::bind(self, tape)
    }

    fn accel<'t>(
        &self,
        bound: &Vec<Tensor<'t>>,
        q: &[Var<'t>],
        qd: &[Var<'t>],
        force: &[Var<'t>],
    ) -> Result<Vec<Var<'t>>> {
        self.check("q", q.len())?;
        self.check("force", force.len())?;
        let t = self
            .terms_batch(bound, q, qd, false)?
            .pop()
            .expect("one sample");
        t.accel(force)
    }
}

/// One labelled state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub t: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
    pub u: Vec<f64>,
}

impl TrainingSample {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    fn is_valid(&self) -> bool {
        let n = self.q.len();
        n > 0
            && [&self.qd, &self.qdd, &self.u].iter().all(|v| v.len() == n)
            && self.t.is_finite()
            && [&self.q, &self.qd, &self.qdd, &self.u]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

fn dataset_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for p in ["q", "qd", "qdd", "u"] {
        h.extend((0..n).map(|i| format!("{p}_{i}")));
    }
    h
}

/// Writes `t,q_*,qd_*,qdd_*,u_*` rows.
pub fn write_dataset<W: Write>(w: W, data: &[TrainingSample]) -> Result<()> {
    let n = data.first().map_or(0, |s| s.dim());
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    out.write_record(dataset_header(n)).map_err(csv_err)?;
    for s in data {
        if s.dim() != n || !s.is_valid() {
            return Err(Error::invalid(
                "dataset",
                "samples must be finite and share one dimension",
            ));
        }
        let mut row = vec![s.t.to_string()];
        for v in [&s.q, &s.qd, &s.qdd, &s.u] {
            row.extend(v.iter().map(|x| x.to_string()));
        }
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a dataset CSV; the dimension is inferred from the header.
pub fn read_dataset<R: Read>(r: R) -> Result<Vec<TrainingSample>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    let header: Vec<String> = rd
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 5 || (header.len() - 1) % 4 != 0 {
        return Err(Error::Parse(format!(
            "dataset header has {} columns",
            header.len()
        )));
    }
    let n = (header.len() - 1) / 4;
    if header != dataset_header(n) {
        return Err(Error::Parse(format!(
            "unexpected dataset header: {}",
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("dataset row {}: {e}", line + 1)))?;
        if vals.len() != header.len() {
            return Err(Error::Parse(format!(
                "dataset row {} has {} fields",
                line + 1,
                vals.len()
            )));
        }
        let s = TrainingSample {
            t: vals[0],
            q: vals[1..1 + n].to_vec(),
            qd: vals[1 + n..1 + 2 * n].to_vec(),
            qdd: vals[1 + 2 * n..1 + 3 * n].to_vec(),
            u: vals[1 + 3 * n..].to_vec(),
        };
        if !s.is_valid() {
            return Err(Error::Parse(format!(
                "dataset row {} is not finite",
                line + 1
            )));
        }
        out.push(s);
    }
    Ok(out)
}

/// Unforced motion of `arm` from (q0, qd0), integrated by RK4; labels are
/// the analytic accelerations at each recorded state.
pub fn generate_free_motion(
    arm: &PlanarArm,
    samples: usize,
    dt: f64,
    q0: &[f64],
    qd0: &[f64],
) -> Result<Vec<TrainingSample>> {
    let n = arm.dim();
    if q0.len() != n || qd0.len() != n {
        return Err(Error::dim("initial state", n, q0.len().min(qd0.len())));
    }
    let zero = vec![0.0; n];
    let f = |_: f64, y: &[f64]| -> Result<Vec<f64>> {
        let a = forward_dynamics(arm, &y[..n], &y[n..], &zero, &zero)?;
        Ok(y[n..].iter().copied().chain(a).collect())
    };
    let mut s = OdeState {
        t: 0.0,
        y: q0.iter().chain(qd0).copied().collect(),
    };
    let mut out = Vec::with_capacity(samples);
    for k in 0..samples {
        let (q, qd) = (&s.y[..n], &s.y[n..]);
        let qdd = forward_dynamics(arm, q, qd, &zero, &zero)?;
        out.push(TrainingSample {
            t: k as f64 * dt,
            q: q.to_vec(),
            qd: qd.to_vec(),
            qdd,
            u: zero.clone(),
        });
        if k + 1 < samples {
            s = rk4_step(f, &s, dt)?;
            s.t = (k + 1) as f64 * dt;
        }
    }
    Ok(out)
}

/// Settings of the acceleration-regression training loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LnnTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub lr_decay: f64,
    /// Fraction of samples held out for evaluation.
    pub holdout: f64,
    /// Diagonal of the error weight Q; empty means identity.
    pub weight: Vec<f64>,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for LnnTrainConfig {
    fn default() -> Self {
        LnnTrainConfig {
            epochs: 200,
            batch: 10,
            lr: 1e-3,
            lr_decay: 0.99,
            holdout: 0.1,
            weight: Vec::new(),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl LnnTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::invalid("lnn.batch", "must be positive"));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid(
                "lnn.lr",
                "lr must be positive and lr_decay in (0, 1]",
            ));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::invalid("lnn.holdout", "must lie in [0, 1)"));
        }
        if self.weight.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("lnn.weight", "Q must be positive definite"));
        }
        self.adam.validate()
    }
}

/// Loss curves of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LnnTrainReport {
    /// Mean weighted batch loss per epoch.
    pub train_loss: Vec<f64>,
    /// Held-out acceleration MSE before training and after each epoch.
    pub holdout_mse: Vec<f64>,
    pub train_samples: usize,
    pub holdout_samples: usize,
}

/// Deterministic train/holdout split.
pub fn split_holdout(len: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let h = ((len as f64) * fraction).round() as usize;
    let hold = idx.split_off(len - h.min(len.saturating_sub(1)));
    (idx, hold)
}

/// Mean squared acceleration error per component over `idx`.
pub fn accel_mse(net: &LagrangianNet, data: &[TrainingSample], idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let n = net.dim();
    let mut tape = Tape::new();
    let mut sum = 0.0;
    for chunk in idx.chunks(64) {
        tape.clear();
        let bound = Network::bind(net, &tape);
        let (q, qd, u) = gather(data, chunk);
        let terms = net.terms_batch(&bound, &q, &qd, false)?;
        for (s, t) in terms.iter().enumerate() {
            let a = t.accel(&u[s * n..(s + 1) * n])?;
            let target = &data[chunk[s]].qdd;
            sum += a
                .iter()
                .zip(target)
                .map(|(p, y)| (p.value() - y).powi(2))
                .sum::<f64>();
        }
    }
    Ok(sum / (idx.len() * n) as f64)
}

fn gather<'t>(
    data: &[TrainingSample],
    idx: &[usize],
) -> (Vec<Var<'t>>, Vec<Var<'t>>, Vec<Var<'t>>) {
    let mut q = Vec::new();
    let mut qd = Vec::new();
    let mut u = Vec::new();
    for &i in idx {
        let s = &data[i];
        q.extend(s.q.iter().map(|&v| Var::cst(v)));
        qd.extend(s.qd.iter().map(|&v| Var::cst(v)));
        u.extend(s.u.iter().map(|&v| Var::cst(v)));
    }
    (q, qd, u)
}

/// Minimizes the Q-weighted acceleration error with Adam.
pub fn train_lnn(
    mut net: LagrangianNet,
    data: &[TrainingSample],
    cfg: &LnnTrainConfig,
) -> Result<(LagrangianNet, LnnTrainReport)> {
    net.validate()?;
    cfg.validate()?;
    let n = net.dim();
    if data.is_empty() {
        return Err(Error::invalid("dataset", "must not be empty"));
    }
    if let Some(bad) = data.iter().position(|s| s.dim() != n || !s.is_valid()) {
        return Err(Error::invalid(
            "dataset",
            format!("sample {bad} is malformed"),
        ));
    }
    let weight = if cfg.weight.is_empty() {
        vec![1.0; n]
    } else {
        cfg.weight.clone()
    };
    if weight.len() != n {
        return Err(Error::dim("lnn.weight", n, weight.len()));
    }
    let (mut train, hold) = split_holdout(data.len(), cfg.holdout, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = Adam::new(&net.params(), cfg.adam);
    let mut report = LnnTrainReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        holdout_mse: vec![accel_mse(&net, data, &hold)?],
        train_samples: train.len(),
        holdout_samples: hold.len(),
    };
    let mut tape = Tape::new();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr * cfg.lr_decay.powi(epoch as i32);
        train.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, chunk) in train.chunks(cfg.batch).enumerate() {
            tape.clear();
            let (loss, grads) = {
                let bound = Network::bind(&net, &tape);
                let (q, qd, u) = gather(data, chunk);
                let terms = net.terms_batch(&bound, &q, &qd, false)?;
                let mut loss = Var::cst(0.0);
                for (s, t) in terms.iter().enumerate() {
                    let a = t.accel(&u[s * n..(s + 1) * n])?;
                    let target = &data[chunk[s]].qdd;
                    for i in 0..n {
                        let e = a[i] - target[i];
                        loss += e * e * weight[i];
                    }
                }
                loss = loss * (1.0 / chunk.len() as f64);
                let lv = loss.value();
                if !lv.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step });
                }
                let g = tape.backward(loss);
                let grads: Vec<Vec<f64>> = bound.iter().map(|&b| g.of(b).to_vec()).collect();
                (lv, grads)
            };
            total += loss * chunk.len() as f64;
            let refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            adam.step(net.params_mut(), &refs, lr)?;
        }
        report.train_loss.push(total / train.len() as f64);
        report.holdout_mse.push(accel_mse(&net, data, &hold)?);
    }
    Ok((net, report))
}

/// Largest ‖M̂(q, q̇) − M(q)‖_F / ‖M(q)‖_F over the given states.
pub fn mass_relative_error(
    net: &LagrangianNet,
    arm: &PlanarArm,
    states: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64> {
    let mut worst = 0.0f64;
    for (q, qd) in states {
        let m = mass_matrix(arm, q)?;
        let mh = mass_hat(net, q, qd)?;
        worst = worst.max(mh.sub(&m).frobenius() / m.frobenius());
    }
    Ok(worst)
}

/// Model mismatch δ = −M̂M⁻¹(f − Cq̇ − G) + (f − Ĉq̇ − Ĝ) under total
/// generalized force `f`; zero when the learned model matches the plant.
pub fn model_mismatch(
    net: &LagrangianNet,
    arm: &PlanarArm,
    q: &[f64],
    qd: &[f64],
    force: &[f64],
) -> Result<Vec<f64>> {
    let qdd = forward_dynamics(arm, q, qd, force, &vec![0.0; q.len()])?;
    let p = net.point(q, qd)?;
    let mq = p.mass.matvec(&qdd);
    let cq = p.coriolis().matvec(qd);
    let g = p.gravity(qd);
    Ok((0..q.len())
        .map(|i| force[i] - cq[i] - g[i] - mq[i])
        .collect())
}

/// Affine envelope ‖δ‖ ≤ a‖q‖ + b‖q̇‖ + c.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBound {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl UncertaintyBound {
    /// Smallest uniform damping level, b + b²/2 + a/2 + 1, that admits the
    /// bounded-error guarantee.
    pub fn damping_requirement(&self) -> f64 {
        self.b + 0.5 * self.b * self.b + 0.5 * self.a + 1.0
    }

    /// Radius (k² + d)/(α² − a) of the ultimate ‖z₁‖² set, where
    /// k = c + a‖qᵈ‖ + b‖q̇ᵈ‖ at its worst; infinite unless α² > a.
    pub fn error_radius(&self, alpha: f64, d: f64, qd_norm: f64, qd_dot_norm: f64) -> f64 {
        let k = self.c + self.a * qd_norm + self.b * qd_dot_norm;
        let gap = alpha * alpha - self.a;
        if gap > 0.0 {
            (k * k + d) / gap
        } else {
            f64::INFINITY
        }
    }
}

/// Fits a, b ≥ 0 by least squares on `(‖q‖, ‖q̇‖, ‖δ‖)` triples, then raises
/// c until the envelope covers every sample.
pub fn fit_uncertainty_bound(samples: &[(f64, f64, f64)]) -> Result<UncertaintyBound> {
    if samples.is_empty() {
        return Err(Error::invalid("samples", "need at least one sample"));
    }
    if samples
        .iter()
        .any(|&(x, y, z)| !(x.is_finite() && y.is_finite() && z.is_finite()))
    {
        return Err(Error::NonFinite {
            what: "uncertainty samples".into(),
        });
    }
    let envelope = |a: f64, b: f64| {
        let c = samples
            .iter()
            .map(|&(x, y, z)| z - a * x - b * y)
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0);
        UncertaintyBound { a, b, c }
    };
    let sse = |u: &UncertaintyBound| {
        samples
            .iter()
            .map(|&(x, y, z)| (u.a * x + u.b * y + u.c - z).powi(2))
            .sum::<f64>()
    };
    let mut best = envelope(0.0, 0.0);
    // Active-set enumeration over which of a, b are free.
    for (use_a, use_b) in [(true, true), (true, false), (false, true)] {
        let cols: Vec<usize> = [(use_a, 0), (use_b, 1)]
            .iter()
            .filter(|f| f.0)
            .map(|f| f.1)
            .chain([2])
            .collect();
        let k = cols.len();
        let feat = |s: &(f64, f64, f64), j: usize| [s.0, s.1, 1.0][cols[j]];
        let mut ata = SmallMatrix::zeros(k, k);
        let mut atb = vec![0.0; k];
        for s in samples {
            for i in 0..k {
                atb[i] += feat(s, i) * s.2;
                for j in 0..k {
                    ata[(i, j)] += feat(s, i) * feat(s, j);
                }
            }
        }
        for i in 0..k {
            ata[(i, i)] += 1e-12 * (1.0 + ata[(i, i)]);
        }
        let Ok(x) = solve_spd(&ata, &atb) else {
            continue;
        };
        let (mut a, mut b) = (0.0, 0.0);
        for (j, &col) in cols.iter().enumerate() {
            match col {
                0 => a = x[j],
                1 => b = x[j],
                _ => {}
            }
        }
        if a < 0.0 || b < 0.0 {
            continue;
        }
        let cand = envelope(a, b);
        if sse(&cand) < sse(&best) {
            best = cand;
        }
    }
    Ok(best)
}
