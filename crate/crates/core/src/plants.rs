//! Planar serial arm with point masses at the link ends.
//!
//! Joint angles are relative: link i points along θᵢ = q₀ + … + qᵢ, and the
//! height of mass i is Σ_{k≤i} l_k sin θ_k, so q = 0 is the arm stretched out
//! horizontally.

use crate::autodiff::{Dual, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{Dynamics, ElModel, ModelTerms};
use crate::numerics::{solve_spd, SmallMatrix};
use serde::{Deserialize, Serialize};

pub const DEFAULT_GRAVITY: f64 = 9.8;

fn default_gravity() -> f64 {
    DEFAULT_GRAVITY
}

/// Arm description. Serialized as TOML:
///
/// ```toml
/// masses = [1.0, 1.0]
/// lengths = [1.0, 1.0]
/// gravity = 9.8   # optional
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanarArm {
    pub masses: Vec<f64>,
    pub lengths: Vec<f64>,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
}

impl PlanarArm {
    pub fn new(masses: Vec<f64>, lengths: Vec<f64>, gravity: f64) -> Result<Self> {
        let a = PlanarArm {
            masses,
            lengths,
            gravity,
        };
        a.validate()?;
        Ok(a)
    }

    /// n links with unit masses and lengths.
    pub fn uniform(n: usize) -> Self {
        PlanarArm {
            masses: vec![1.0; n],
            lengths: vec![1.0; n],
            gravity: DEFAULT_GRAVITY,
        }
    }

    pub fn dim(&self) -> usize {
        self.masses.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.masses.len();
        if n == 0 {
            return Err(Error::invalid("masses", "at least one link"));
        }
        if self.lengths.len() != n {
            return Err(Error::invalid(
                "lengths",
                format!("expected {n} entries, got {}", self.lengths.len()),
            ));
        }
        if let Some(m) = self.masses.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::invalid(
                "masses",
                format!("must be positive and finite, got {m}"),
            ));
        }
        if let Some(l) = self.lengths.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::invalid(
                "lengths",
                format!("must be positive and finite, got {l}"),
            ));
        }
        if !self.gravity.is_finite() {
            return Err(Error::invalid("gravity", "must be finite"));
        }
        Ok(())
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let a: PlanarArm = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        a.validate()?;
        Ok(a)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("arm serializes")
    }

    fn check<T>(&self, q: &[T]) -> Result<()> {
        if q.len() != self.dim() {
            return Err(Error::dim("joint vector", self.dim(), q.len()));
        }
        Ok(())
    }

    /// (sin θₖ, cos θₖ) for the absolute link angles.
    fn trig<T: Real>(&self, q: &[T]) -> (Vec<T>, Vec<T>) {
        let mut th = T::zero();
        let mut s = Vec::with_capacity(q.len());
        let mut c = Vec::with_capacity(q.len());
        for &qi in q {
            th += qi;
            s.push(th.sin());
            c.push(th.cos());
        }
        (s, c)
    }

    /// Potential energy g Σ mᵢ yᵢ.
    pub fn potential<T: Real>(&self, q: &[T]) -> T {
        let (s, _) = self.trig(q);
        let mut y = T::zero();
        let mut v = T::zero();
        for i in 0..q.len() {
            y += s[i] * self.lengths[i];
            v += y * self.masses[i];
        }
        v * self.gravity
    }

    /// Total energy ½q̇ᵀMq̇ + V.
    pub fn energy(&self, q: &[f64], qd: &[f64]) -> f64 {
        let m = mass_matrix(self, q).expect("dimension");
        0.5 * crate::numerics::dot(qd, &m.matvec(qd)) + self.potential(q)
    }

    /// Property-1 constants: min λ_min(M) and max λ_max(M) over a grid of
    /// `per_joint` points per coordinate (the first joint does not affect M).
    pub fn inertia_bounds(&self, per_joint: usize) -> Result<(f64, f64)> {
        let n = self.dim();
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        let free = n.saturating_sub(1) as u32;
        let total = per_joint.pow(free).max(1);
        for idx in 0..total {
            let mut q = vec![0.0; n];
            let mut r = idx;
            for qi in q.iter_mut().skip(1) {
                *qi = -std::f64::consts::PI
                    + 2.0 * std::f64::consts::PI * (r % per_joint) as f64 / per_joint as f64;
                r /= per_joint;
            }
            let (lam, _) = crate::numerics::sym_eig(&mass_matrix(self, &q)?)?;
            lo = lo.min(*lam.last().expect("n > 0"));
            hi = hi.max(lam[0]);
        }
        Ok((lo, hi))
    }
}

/// M(q) = Σ mᵢ JᵢᵀJᵢ with Jᵢ the planar position Jacobian of mass i.
pub fn mass_matrix<T: Real>(arm: &PlanarArm, q: &[T]) -> Result<SmallMatrix<T>> {
    arm.check(q)?;
    let n = q.len();
    let (s, c) = arm.trig(q);
    // jx[i][j] = ∂xᵢ/∂qⱼ, jy likewise, nonzero for j ≤ i.
    let mut m = SmallMatrix::zeros(n, n);
    for i in 0..n {
        let mut jx = vec![T::zero(); n];
        let mut jy = vec![T::zero(); n];
        let mut ax = T::zero();
        let mut ay = T::zero();
        for j in (0..=i).rev() {
            ax += s[j] * arm.lengths[j];
            ay += c[j] * arm.lengths[j];
            jx[j] = -ax;
            jy[j] = ay;
        }
        for a in 0..=i {
            for b in 0..=a {
                let v = (jx[a] * jx[b] + jy[a] * jy[b]) * arm.masses[i];
                m[(a, b)] += v;
            }
        }
    }
    for a in 0..n {
        for b in a + 1..n {
            m[(a, b)] = m[(b, a)];
        }
    }
    Ok(m)
}

/// ∂M/∂qₖ for every k.
pub fn mass_matrix_partials<T: Real>(arm: &PlanarArm, q: &[T]) -> Result<Vec<SmallMatrix<T>>> {
    arm.check(q)?;
    let n = q.len();
    (0..n)
        .map(|k| {
            let qd: Vec<Dual<T>> = q
                .iter()
                .enumerate()
                .map(|(i, &v)| Dual::new(v, T::cst(if i == k { 1.0 } else { 0.0 })))
                .collect();
            let m = mass_matrix(arm, &qd)?;
            Ok(SmallMatrix::from_fn(n, n, |a, b| m[(a, b)].eps))
        })
        .collect()
}

fn christoffel<T: Real>(dm: &[SmallMatrix<T>], qd: &[T]) -> SmallMatrix<T> {
    let n = qd.len();
    SmallMatrix::from_fn(n, n, |k, j| {
        let mut acc = T::zero();
        for i in 0..n {
            acc += (dm[i][(k, j)] + dm[j][(k, i)] - dm[k][(i, j)]) * qd[i] * 0.5;
        }
        acc
    })
}

/// Coriolis matrix from Christoffel symbols of the first kind.
pub fn coriolis<T: Real>(arm: &PlanarArm, q: &[T], qd: &[T]) -> Result<SmallMatrix<T>> {
    arm.check(qd)?;
    let dm = mass_matrix_partials(arm, q)?;
    Ok(christoffel(&dm, qd))
}

/// Ṁ = Σᵢ ∂M/∂qᵢ q̇ᵢ.
pub fn mass_matrix_rate<T: Real>(arm: &PlanarArm, q: &[T], qd: &[T]) -> Result<SmallMatrix<T>> {
    arm.check(qd)?;
    let dm = mass_matrix_partials(arm, q)?;
    let n = q.len();
    Ok(SmallMatrix::from_fn(n, n, |a, b| {
        let mut acc = T::zero();
        for i in 0..n {
            acc += dm[i][(a, b)] * qd[i];
        }
        acc
    }))
}

/// G(q) = ∂V/∂q.
pub fn gravity<T: Real>(arm: &PlanarArm, q: &[T]) -> Result<Vec<T>> {
    arm.check(q)?;
    let n = q.len();
    let (_, c) = arm.trig(q);
    // ∂yᵢ/∂qⱼ = Σ_{k=j..i} l_k cos θ_k; G_j = g Σ_{i≥j} mᵢ ∂yᵢ/∂qⱼ.
    let mut tail_mass = vec![0.0; n + 1];
    for i in (0..n).rev() {
        tail_mass[i] = tail_mass[i + 1] + arm.masses[i];
    }
    let mut g = vec![T::zero(); n];
    for j in 0..n {
        let mut acc = T::zero();
        for k in j..n {
            acc += c[k] * (arm.lengths[k] * tail_mass[k]);
        }
        g[j] = acc * arm.gravity;
    }
    Ok(g)
}

/// Constant generalized disturbance τᵈ.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DisturbanceModel {
    #[default]
    None,
    Constant {
        tau: Vec<f64>,
    },
}

impl DisturbanceModel {
    pub fn torque(&self, n: usize) -> Vec<f64> {
        match self {
            DisturbanceModel::None => vec![0.0; n],
            DisturbanceModel::Constant { tau } => tau.clone(),
        }
    }

    /// d = ‖τᵈ‖².
    pub fn bound(&self) -> f64 {
        match self {
            DisturbanceModel::None => 0.0,
            DisturbanceModel::Constant { tau } => tau.iter().map(|t| t * t).sum(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if let DisturbanceModel::Constant { tau } = self {
            if tau.len() != n {
                return Err(Error::invalid(
                    "disturbance.tau",
                    format!("expected {n} entries, got {}", tau.len()),
                ));
            }
            if tau.iter().any(|t| !t.is_finite()) {
                return Err(Error::invalid("disturbance.tau", "must be finite"));
            }
        }
        Ok(())
    }
}

/// q̈ = M⁻¹(u + τᵈ − Cq̇ − G).
pub fn forward_dynamics<T: Real>(
    arm: &PlanarArm,
    q: &[T],
    qd: &[T],
    u: &[T],
    tau: &[T],
) -> Result<Vec<T>> {
    arm.check(u)?;
    arm.check(tau)?;
    let m = mass_matrix(arm, q)?;
    let c = coriolis(arm, q, qd)?;
    let g = gravity(arm, q)?;
    let cq = c.matvec(qd);
    let rhs: Vec<T> = (0..q.len()).map(|i| u[i] + tau[i] - cq[i] - g[i]).collect();
    solve_spd(&m, &rhs)
}

impl ElModel for PlanarArm {
    type Bound<'t> = ();

    fn dim(&self) -> usize {
        PlanarArm::dim(self)
    }

    fn bind<'t>(&self, _tape: &'t Tape) -> Self::Bound<'t> {}

    fn terms<'t>(&self, _: &(), q: &[Var<'t>], qd: &[Var<'t>]) -> Result<ModelTerms<Var<'t>>> {
        Ok(ModelTerms {
            m: mass_matrix(self, q)?,
            c: coriolis(self, q, qd)?,
            g: gravity(self, q)?,
        })
    }
}

impl Dynamics for PlanarArm {
    type Bound<'t> = ();

    fn dim(&self) -> usize {
        PlanarArm::dim(self)
    }

    fn bind<'t>(&self, _tape: &'t Tape) -> Self::Bound<'t> {}

    fn accel<'t>(
        &self,
        _: &(),
        q: &[Var<'t>],
        qd: &[Var<'t>],
        force: &[Var<'t>],
    ) -> Result<Vec<Var<'t>>> {
        let zero = vec![Var::cst(0.0); q.len()];
        forward_dynamics(self, q, qd, force, &zero)
    }
}
