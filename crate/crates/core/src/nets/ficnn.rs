use super::{affine, affine_relu_w, init_std, Activation, Init, Network, Param};
use crate::autodiff::{Jet, Real, Tensor, Tower};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Fully input-convex network.
///
/// Layer i computes `σ(W^y_i y_i + W^x_i x + b_i)` with `W^y_i = relu(R_i)`
/// for i ≥ 1. When `bias` is false every `b_i` is pinned to zero and not
/// stored. Without `output_skip` the output layer has no `W^x` term and its
/// input weights are stored with zero columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FicnnParams {
    pub wx: Vec<Param>,
    pub wy_raw: Vec<Param>,
    pub b: Vec<Param>,
    pub hidden: Activation,
    pub output: Activation,
    #[serde(default = "yes")]
    pub output_skip: bool,
}

fn yes() -> bool {
    true
}

impl FicnnParams {
    pub fn zeros(
        input: usize,
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        bias: bool,
    ) -> Self {
        assert!(!widths.is_empty(), "at least one layer");
        let wx = widths.iter().map(|&w| Param::zeros(w, input)).collect();
        let wy_raw = widths
            .windows(2)
            .map(|p| Param::zeros(p[1], p[0]))
            .collect();
        let b = if bias {
            widths.iter().map(|&w| Param::zeros(w, 1)).collect()
        } else {
            Vec::new()
        };
        FicnnParams {
            wx,
            wy_raw,
            b,
            hidden,
            output,
            output_skip: true,
        }
    }

    /// Drops the direct input term of the output layer. Needs two or more layers.
    pub fn without_output_skip(mut self) -> Self {
        let k = self.depth();
        assert!(
            k >= 2,
            "the output layer of a one-layer network must see the input"
        );
        self.wx[k - 1] = Param::zeros(self.wx[k - 1].rows, 0);
        self.output_skip = false;
        self
    }

    /// Whether layer `i` has a `W^x` term.
    pub fn has_skip(&self, i: usize) -> bool {
        self.output_skip || i + 1 < self.depth()
    }

    pub fn init(
        input: usize,
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        bias: bool,
        seed: u64,
    ) -> Self {
        let mut p = Self::zeros(input, widths, hidden, output, bias);
        let mut init = Init::new(seed);
        let k = widths.len();
        for i in 0..k {
            let std = init_std(i, k, widths[i]);
            if i >= 1 {
                init.fill(&mut p.wy_raw[i - 1], std);
            }
            init.fill(&mut p.wx[i], std);
            if bias {
                init.fill(&mut p.b[i], std);
            }
        }
        p
    }

    pub fn depth(&self) -> usize {
        self.wx.len()
    }

    pub fn input_dim(&self) -> usize {
        self.wx[0].cols
    }

    pub fn has_bias(&self) -> bool {
        !self.b.is_empty()
    }

    fn act(&self, i: usize) -> Activation {
        if i + 1 == self.depth() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.wx.len();
        if k == 0 {
            return Err(Error::invalid("ficnn", "no layers"));
        }
        if self.wy_raw.len() + 1 != k || !(self.b.is_empty() || self.b.len() == k) {
            return Err(Error::invalid("ficnn", "layer counts disagree"));
        }
        let n = self.input_dim();
        if !self.output_skip && k < 2 {
            return Err(Error::invalid(
                "ficnn",
                "a one-layer network needs its input term",
            ));
        }
        for i in 0..k {
            let w = self.wx[i].rows;
            if !self.wx[i].check(w, if self.has_skip(i) { n } else { 0 }) {
                return Err(Error::invalid("ficnn", format!("layer {i} input weights")));
            }
            if i >= 1 && !self.wy_raw[i - 1].check(w, self.wx[i - 1].rows) {
                return Err(Error::invalid("ficnn", format!("layer {i} hidden weights")));
            }
            if self.has_bias() && !self.b[i].check(w, 1) {
                return Err(Error::invalid("ficnn", format!("layer {i} bias")));
            }
        }
        if self.wx[k - 1].rows != 1 {
            return Err(Error::invalid("ficnn", "output must be scalar"));
        }
        if !self.hidden.is_convex_monotone() || !self.output.is_convex_monotone() {
            return Err(Error::invalid(
                "ficnn",
                "activations must be convex and non-decreasing",
            ));
        }
        Ok(())
    }

    /// Jet forward with parameters bound in `params()` order. Output has one row.
    pub fn forward_jet<'t>(&self, bound: &[Tensor<'t>], x: &Jet<'t>) -> Jet<'t> {
        let mut it = bound.iter().copied();
        let mut y: Option<Jet<'t>> = None;
        for i in 0..self.depth() {
            let wy = if i >= 1 { it.next() } else { None };
            let wx = if self.has_skip(i) { it.next() } else { None };
            let b = if self.has_bias() { it.next() } else { None };
            let z = match (wx, wy, &y) {
                (Some(wx), Some(wy), Some(prev)) => x
                    .linear(wx, b)
                    .add(&prev.linear(wy.map(Tower::Relu, 0), None)),
                (Some(wx), _, _) => x.linear(wx, b),
                (None, Some(wy), Some(prev)) => prev.linear(wy.map(Tower::Relu, 0), b),
                _ => unreachable!("validated layer layout"),
            };
            y = Some(self.act(i).apply_jet(z));
        }
        y.expect("at least one layer")
    }
}

impl Network for FicnnParams {
    fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for i in 0..self.depth() {
            if i >= 1 {
                out.push(&self.wy_raw[i - 1]);
            }
            if self.has_skip(i) {
                out.push(&self.wx[i]);
            }
            if let Some(b) = self.b.get(i) {
                out.push(b);
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let k = self.depth();
        let skip = self.output_skip;
        let mut wx = self.wx.iter_mut();
        let mut wy = self.wy_raw.iter_mut();
        let mut b = self.b.iter_mut();
        let mut out = Vec::new();
        for i in 0..k {
            if i >= 1 {
                out.push(wy.next().expect("layer count"));
            }
            let w = wx.next().expect("layer count");
            if skip || i + 1 < k {
                out.push(w);
            }
            if let Some(b) = b.next() {
                out.push(b);
            }
        }
        out
    }
}

/// Scalar output of the network on any scalar type.
pub fn ficnn_forward<T: Real>(p: &FicnnParams, x: &[T]) -> Result<T> {
    if x.len() != p.input_dim() {
        return Err(Error::dim("ficnn input", p.input_dim(), x.len()));
    }
    let mut y: Vec<T> = Vec::new();
    for i in 0..p.depth() {
        let xs = if p.has_skip(i) { x } else { &x[..0] };
        let mut z = affine(&p.wx[i], p.b.get(i), xs);
        if i >= 1 {
            for (zi, h) in z.iter_mut().zip(affine_relu_w(&p.wy_raw[i - 1], &y)) {
                *zi += h;
            }
        }
        let act = p.act(i);
        y = z.into_iter().map(|v| act.apply(v)).collect();
    }
    Ok(y[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Basis, Src, Tape};

    fn psi(seed: u64) -> FicnnParams {
        let s = Activation::Srelu(0.01);
        FicnnParams::init(2, &[8, 8, 1], s, s, false, seed)
    }

    #[test]
    fn zero_network_is_zero() {
        let s = Activation::Srelu(0.01);
        let p = FicnnParams::zeros(2, &[4, 1], s, s, false);
        assert_eq!(ficnn_forward(&p, &[3.0, -1.0]).unwrap(), 0.0);
    }

    #[test]
    fn pinned_bias_gives_zero_at_origin() {
        for seed in 0..5 {
            assert_eq!(ficnn_forward(&psi(seed), &[0.0, 0.0]).unwrap(), 0.0);
        }
    }

    #[test]
    fn jet_forward_matches_scalar_forward() {
        let p = psi(3);
        let tape = Tape::new();
        let bound = p.bind(&tape);
        let basis = Basis::new([]);
        let x = Jet::build(&tape, &basis, 2, 1, |r, _, _| Src::Const([0.3, -0.7][r]));
        let y = p.forward_jet(&bound, &x).data.values()[0];
        let want = ficnn_forward(&p, &[0.3, -0.7]).unwrap();
        assert!((y - want).abs() < 1e-14);
    }

    #[test]
    fn dropping_the_output_skip_removes_its_block() {
        let full = FicnnParams::init(
            2,
            &[6, 6, 1],
            Activation::Srelu(0.3),
            Activation::Identity,
            false,
            4,
        );
        let cut = full.clone().without_output_skip();
        cut.validate().unwrap();
        assert_eq!(cut.params().len(), full.params().len() - 1);
        assert_eq!(cut.wx[2].cols, 0);
        // Only the last hidden layer feeds the output, so the value stays
        // non-negative and flat at the origin.
        let f = |x: &[f64]| ficnn_forward(&cut, x).unwrap();
        assert_eq!(f(&[0.0, 0.0]), 0.0);
        let h = 1e-7;
        assert!(((f(&[h, 0.0]) - f(&[-h, 0.0])) / (2.0 * h)).abs() < 1e-6);
        for x in [[0.5, -1.0], [-2.0, 0.3], [1.0, 1.0]] {
            assert!(f(&x) >= 0.0);
        }
    }

    #[test]
    fn validate_rejects_tanh() {
        let p = FicnnParams::zeros(2, &[4, 1], Activation::Tanh, Activation::Tanh, true);
        assert!(p.validate().is_err());
    }
}
