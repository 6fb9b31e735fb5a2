//! The two structured controller components: the strongly convex potential
//! Φ(z₁) = ψ(z₁) + z₁ᵀ S z₁ and the damping matrix D(z₂) = TᵀT + εI.

use crate::autodiff::{self, Basis, Jet, Real, ScalarFn, Src, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::{
    fcnn_forward, ficnn_forward, Activation, FicnnParams, MlpParams, Network, Param, ParamFile,
};
use crate::numerics::SmallMatrix;
use serde::{Deserialize, Serialize};

/// Width of the quadratic band of the smoothed rectifier used by ψ.
pub const SRELU_D: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialPhi {
    pub psi: FicnnParams,
    pub s: SmallMatrix,
}

/// Φ, ∇Φ and HΦ·v recorded on a tape.
pub struct PhiTerms<'t> {
    pub value: Var<'t>,
    pub grad: Vec<Var<'t>>,
    pub hess_v: Vec<Var<'t>>,
}

impl PotentialPhi {
    /// ψ with pinned zero biases, srelu hidden layers and a linear output
    /// that reads only the last hidden layer, so ψ ≥ 0 and ∇ψ(0) = 0.
    pub fn new(n: usize, widths: &[usize], s: SmallMatrix, seed: u64) -> Self {
        assert!(!widths.is_empty(), "ψ needs a hidden layer");
        let mut w = widths.to_vec();
        w.push(1);
        let psi = FicnnParams::init(
            n,
            &w,
            Activation::Srelu(SRELU_D),
            Activation::Identity,
            false,
            seed,
        );
        PotentialPhi {
            psi: psi.without_output_skip(),
            s,
        }
    }

    pub fn dim(&self) -> usize {
        self.s.rows()
    }

    pub fn validate(&self) -> Result<()> {
        self.psi.validate()?;
        let n = self.dim();
        if !self.s.is_well_formed() || self.s.cols() != n || self.psi.input_dim() != n {
            return Err(Error::invalid(
                "phi.s",
                "must be square and match the ψ input",
            ));
        }
        if self.psi.has_bias() {
            return Err(Error::invalid("phi.psi", "biases must be pinned to zero"));
        }
        if self.psi.output_skip
            || !matches!(self.psi.hidden, Activation::Srelu(_) | Activation::Relu)
        {
            return Err(Error::invalid(
                "phi.psi",
                "needs rectifier hidden layers and an output without input term",
            ));
        }
        if self.s.max_asymmetry() > 1e-12 {
            return Err(Error::invalid("phi.s", "must be symmetric"));
        }
        crate::numerics::cholesky(&self.s)
            .map_err(|_| Error::invalid("phi.s", "must be positive definite"))?;
        Ok(())
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::dim("z1", self.dim(), len));
        }
        Ok(())
    }

    /// Jet evaluation returning Φ, ∇Φ and HΦ(z₁)·v.
    pub fn terms<'t>(
        &self,
        bound: &[Tensor<'t>],
        z1: &[Var<'t>],
        v: &[Var<'t>],
    ) -> Result<PhiTerms<'t>> {
        let n = self.dim();
        self.check(z1.len())?;
        self.check(v.len())?;
        let tape = bound[0].tape();
        let b = 1u32 << n;
        let basis = Basis::new((0..n).flat_map(|i| [1u32 << i, b, (1 << i) | b]));
        let x = Jet::build(tape, &basis, n, 1, |r, _, c| {
            let m = basis.monomials()[c];
            if m == 0 {
                z1[r].src()
            } else if m == b {
                v[r].src()
            } else if m == 1 << r {
                Src::Const(1.0)
            } else {
                Src::Const(0.0)
            }
        });
        let y = self.psi.forward_jet(bound, &x);
        let mut value = y.coeff(0, 0, 0);
        let mut grad = Vec::with_capacity(n);
        let mut hess_v = Vec::with_capacity(n);
        for i in 0..n {
            let mut sz = Var::cst(0.0);
            let mut sv = Var::cst(0.0);
            for j in 0..n {
                let sij = self.s[(i, j)] + self.s[(j, i)];
                if sij != 0.0 {
                    sz += z1[j] * sij;
                    sv += v[j] * sij;
                }
            }
            value += z1[i] * sz * 0.5;
            grad.push(y.coeff(0, 0, 1 << i) + sz);
            hess_v.push(y.coeff(0, 0, (1 << i) | b) + sv);
        }
        Ok(PhiTerms {
            value,
            grad,
            hess_v,
        })
    }

    /// Full Hessian of Φ at `z1`, recorded on a tape.
    pub fn hessian_on_tape<'t>(
        &self,
        bound: &[Tensor<'t>],
        z1: &[Var<'t>],
    ) -> Result<SmallMatrix<Var<'t>>> {
        let n = self.dim();
        self.check(z1.len())?;
        let tape = bound[0].tape();
        let basis = Basis::new((0..n).flat_map(|i| {
            (0..n).flat_map(move |j| [1u32 << i, 1 << (n + j), (1 << i) | (1 << (n + j))])
        }));
        let x = Jet::build(tape, &basis, n, 1, |r, _, c| {
            let m = basis.monomials()[c];
            if m == 0 {
                z1[r].src()
            } else if m == 1 << r || m == 1 << (n + r) {
                Src::Const(1.0)
            } else {
                Src::Const(0.0)
            }
        });
        let y = self.psi.forward_jet(bound, &x);
        Ok(SmallMatrix::from_fn(n, n, |i, j| {
            y.coeff(0, 0, (1 << i) | (1 << (n + j))) + (self.s[(i, j)] + self.s[(j, i)])
        }))
    }
}

struct PhiFn<'a>(&'a PotentialPhi);

impl ScalarFn for PhiFn<'_> {
    fn eval<T: Real>(&self, x: &[T]) -> T {
        phi_value(self.0, x).expect("dimension checked by caller")
    }
}

/// Φ(z₁) = ψ(z₁) + z₁ᵀ S z₁.
pub fn phi_value<T: Real>(phi: &PotentialPhi, z1: &[T]) -> Result<T> {
    phi.check(z1.len())?;
    let mut v = ficnn_forward(&phi.psi, z1)?;
    for i in 0..z1.len() {
        for j in 0..z1.len() {
            let s = phi.s[(i, j)];
            if s != 0.0 {
                v += z1[i] * z1[j] * s;
            }
        }
    }
    Ok(v)
}

/// ∇Φ(z₁).
pub fn phi_grad(phi: &PotentialPhi, z1: &[f64]) -> Result<Vec<f64>> {
    phi.check(z1.len())?;
    autodiff::grad(&PhiFn(phi), z1)
}

/// HΦ(z₁), symmetric.
pub fn phi_hessian_at(phi: &PotentialPhi, z1: &[f64]) -> Result<SmallMatrix> {
    phi.check(z1.len())?;
    autodiff::hessian(&PhiFn(phi), z1)
}

/// Positive definite damping built from a lower-triangular factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DampingD {
    pub diag_net: MlpParams,
    pub offdiag_net: MlpParams,
    pub m: f64,
    pub ridge: f64,
}

impl DampingD {
    /// Two tanh networks of the given hidden widths.
    pub fn new(n: usize, widths: &[usize], m: f64, ridge: f64, seed: u64) -> Self {
        let net = |out: usize, seed: u64| {
            let mut sizes = vec![n];
            sizes.extend_from_slice(widths);
            sizes.push(out);
            let acts = vec![Activation::Tanh; sizes.len() - 1];
            MlpParams::init(&sizes, &acts, seed)
        };
        DampingD {
            diag_net: net(n, seed),
            offdiag_net: net(n * (n - 1) / 2, seed.wrapping_add(0x9e37_79b9)),
            m,
            ridge,
        }
    }

    pub fn dim(&self) -> usize {
        self.diag_net.input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.diag_net.validate()?;
        self.offdiag_net.validate()?;
        let n = self.dim();
        if self.diag_net.output_dim() != n
            || self.offdiag_net.input_dim() != n
            || self.offdiag_net.output_dim() != n * (n - 1) / 2
        {
            return Err(Error::invalid(
                "damping",
                "network shapes do not match the state dimension",
            ));
        }
        if !(self.m > 0.0) || !self.m.is_finite() {
            return Err(Error::invalid("damping.m", "must be positive"));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::invalid("damping.ridge", "must be non-negative"));
        }
        Ok(())
    }

    fn assemble<T: Real>(&self, diag: &[T], off: &[T]) -> SmallMatrix<T> {
        let n = self.dim();
        let mut t = SmallMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            t[(i, i)] = diag[i].relu() + self.m;
            for j in 0..i {
                t[(i, j)] = off[k];
                k += 1;
            }
        }
        let mut d = SmallMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut acc = T::zero();
                for r in i..n {
                    acc += t[(r, i)] * t[(r, j)];
                }
                if i == j {
                    acc = acc + self.ridge;
                }
                d[(i, j)] = acc;
                d[(j, i)] = acc;
            }
        }
        d
    }

    /// D(z₂) on a tape; `bound` holds the diagonal then off-diagonal net.
    pub fn matrix_on_tape<'t>(
        &self,
        bound: &[Tensor<'t>],
        z2: &[Var<'t>],
    ) -> Result<SmallMatrix<Var<'t>>> {
        let n = self.dim();
        if z2.len() != n {
            return Err(Error::dim("z2", n, z2.len()));
        }
        let tape = bound[0].tape();
        let nd = self.diag_net.params().len();
        let basis = Basis::new([]);
        let x = Jet::build(tape, &basis, n, 1, |r, _, _| z2[r].src());
        let dj = self.diag_net.forward_jet(&bound[..nd], &x);
        let oj = self.offdiag_net.forward_jet(&bound[nd..], &x);
        let diag: Vec<Var> = (0..n).map(|i| dj.data.at(i)).collect();
        let off: Vec<Var> = (0..n * (n - 1) / 2).map(|i| oj.data.at(i)).collect();
        Ok(self.assemble(&diag, &off))
    }
}

/// D(z₂) = TᵀT + εI.
pub fn damping_matrix<T: Real>(d: &DampingD, z2: &[T]) -> Result<SmallMatrix<T>> {
    if z2.len() != d.dim() {
        return Err(Error::dim("z2", d.dim(), z2.len()));
    }
    let diag = fcnn_forward(&d.diag_net, z2)?;
    let off = fcnn_forward(&d.offdiag_net, z2)?;
    Ok(d.assemble(&diag, &off))
}

/// Trainable state of an NBS controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NbsParams {
    pub phi: PotentialPhi,
    pub damping: DampingD,
}

impl NbsParams {
    pub fn dim(&self) -> usize {
        self.phi.dim()
    }

    /// Number of bound tensors belonging to ψ; the damping nets follow.
    pub fn psi_len(&self) -> usize {
        self.phi.psi.params().len()
    }
}

impl Network for NbsParams {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.phi.psi.params();
        v.extend(self.damping.diag_net.params());
        v.extend(self.damping.offdiag_net.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.phi.psi.params_mut();
        v.extend(self.damping.diag_net.params_mut());
        v.extend(self.damping.offdiag_net.params_mut());
        v
    }
}

impl ParamFile for NbsParams {
    const KIND: &'static str = "nbs-controller";
    fn validate(&self) -> Result<()> {
        self.phi.validate()?;
        self.damping.validate()?;
        if self.phi.dim() != self.damping.dim() {
            return Err(Error::invalid("controller", "Φ and D dimensions differ"));
        }
        Ok(())
    }
}

/// Binds all controller parameters, returning (ψ tensors, damping tensors).
pub fn bind_nbs<'t>(p: &NbsParams, tape: &'t Tape) -> (Vec<Tensor<'t>>, Vec<Tensor<'t>>) {
    let mut all = p.bind(tape);
    let damping = all.split_off(p.psi_len());
    (all, damping)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_phi(s: SmallMatrix) -> PotentialPhi {
        let mut p = PotentialPhi::new(2, &[4, 4], s, 0);
        p.psi.zero_all();
        p
    }

    #[test]
    fn phi_examples() {
        let p = zero_phi(SmallMatrix::identity(2));
        assert_eq!(phi_value(&p, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(phi_value(&p, &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(phi_grad(&p, &[1.0, 0.0]).unwrap(), vec![2.0, 0.0]);
        let q = zero_phi(SmallMatrix::from_diag(&[2.0, 3.0]));
        assert_eq!(phi_value(&q, &[1.0, 1.0]).unwrap(), 5.0);
        assert_eq!(
            phi_hessian_at(&q, &[0.3, 0.1]).unwrap(),
            SmallMatrix::from_diag(&[4.0, 6.0])
        );
    }

    #[test]
    fn jet_terms_match_scalar_paths() {
        let p = PotentialPhi::new(2, &[8, 8], SmallMatrix::identity(2), 5);
        let z = [0.4, -0.25];
        let v = [0.7, 0.2];
        let tape = Tape::new();
        let bound = p.psi.bind(&tape);
        let zv: Vec<Var> = z.iter().map(|&x| Var::cst(x)).collect();
        let vv: Vec<Var> = v.iter().map(|&x| Var::cst(x)).collect();
        let t = p.terms(&bound, &zv, &vv).unwrap();
        let g = phi_grad(&p, &z).unwrap();
        let h = phi_hessian_at(&p, &z).unwrap();
        let hv = h.matvec(&v);
        assert!((t.value.value() - phi_value(&p, &z).unwrap()).abs() < 1e-12);
        for i in 0..2 {
            assert!((t.grad[i].value() - g[i]).abs() < 1e-10);
            assert!((t.hess_v[i].value() - hv[i]).abs() < 1e-8);
        }
        let ht = p.hessian_on_tape(&bound, &zv).unwrap();
        assert!(ht.values().sub(&h).max_abs() < 1e-8);
    }

    #[test]
    fn damping_examples() {
        let mut d = DampingD::new(2, &[4], 0.001, 0.0, 1);
        d.diag_net.zero_all();
        d.offdiag_net.zero_all();
        let m = damping_matrix(&d, &[0.3, -0.2]).unwrap();
        assert!(m.sub(&SmallMatrix::identity(2).scale(1e-6)).max_abs() < 1e-18);
        d.m = 1.0;
        assert_eq!(
            damping_matrix(&d, &[0.3, -0.2]).unwrap(),
            SmallMatrix::identity(2)
        );
    }

    #[test]
    fn damping_tape_matches_scalar() {
        let d = DampingD::new(3, &[6, 6], 0.1, 0.5, 2);
        let tape = Tape::new();
        let mut all = d.diag_net.bind(&tape);
        all.extend(d.offdiag_net.bind(&tape));
        let z = [0.2, -1.0, 0.5];
        let zv: Vec<Var> = z.iter().map(|&x| Var::cst(x)).collect();
        let a = d.matrix_on_tape(&all, &zv).unwrap().values();
        let b = damping_matrix(&d, &z).unwrap();
        assert!(a.sub(&b).max_abs() < 1e-14);
    }
}
