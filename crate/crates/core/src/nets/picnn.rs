use super::{affine, affine_relu_w, init_std, Activation, Init, Network, Param};
use crate::autodiff::{Basis, Jet, Real, Tensor, Tower};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::rc::Rc;

/// Partially input-convex network: convex in `x` for every context `x̃`.
///
/// ```text
/// v_{i+1} = σ̃(W̃_i v_i + b̃_i)
/// y_{i+1} = σ_i( W^y_i (y_i ∘ relu(W^{yv}_i v_i + b^y_i))
///              + W^x_i (x ∘ (W^{xv}_i v_i + b^x_i)) + W^v_i v_i + b_i )
/// ```
///
/// with `v_0 = x̃`, `y_0 = 0` and `W^y_i = relu(R_i)`. The relu on the
/// y-gate keeps the product with the convex `y_i` convex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicnnParams {
    pub ctx_w: Vec<Param>,
    pub ctx_b: Vec<Param>,
    pub wx: Vec<Param>,
    pub wxv: Vec<Param>,
    pub bx: Vec<Param>,
    pub wv: Vec<Param>,
    pub b: Vec<Param>,
    pub wy_raw: Vec<Param>,
    pub wyv: Vec<Param>,
    pub by: Vec<Param>,
    pub hidden: Activation,
    pub output: Activation,
    pub ctx_act: Activation,
}

impl PicnnParams {
    pub fn zeros(
        ctx: usize,
        input: usize,
        widths: &[usize],
        hidden: Activation,
        output: Activation,
    ) -> Self {
        let k = widths.len();
        assert!(k >= 1, "at least one layer");
        let cv = |i: usize| if i == 0 { ctx } else { widths[i - 1] };
        let mut p = PicnnParams {
            ctx_w: Vec::new(),
            ctx_b: Vec::new(),
            wx: Vec::new(),
            wxv: Vec::new(),
            bx: Vec::new(),
            wv: Vec::new(),
            b: Vec::new(),
            wy_raw: Vec::new(),
            wyv: Vec::new(),
            by: Vec::new(),
            hidden,
            output,
            ctx_act: Activation::Softplus,
        };
        for (i, &h) in widths.iter().enumerate() {
            p.wx.push(Param::zeros(h, input));
            p.wxv.push(Param::zeros(input, cv(i)));
            p.bx.push(Param::zeros(input, 1));
            p.wv.push(Param::zeros(h, cv(i)));
            p.b.push(Param::zeros(h, 1));
            if i >= 1 {
                p.wy_raw.push(Param::zeros(h, widths[i - 1]));
                p.wyv.push(Param::zeros(widths[i - 1], cv(i)));
                p.by.push(Param::zeros(widths[i - 1], 1));
            }
            if i + 1 < k {
                p.ctx_w.push(Param::zeros(h, cv(i)));
                p.ctx_b.push(Param::zeros(h, 1));
            }
        }
        p
    }

    pub fn init(
        ctx: usize,
        input: usize,
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        seed: u64,
    ) -> Self {
        let mut p = Self::zeros(ctx, input, widths, hidden, output);
        let mut init = Init::new(seed);
        let k = widths.len();
        for (i, blocks) in p.layers_mut().into_iter().enumerate() {
            let std = init_std(i, k, widths[i]);
            for b in blocks {
                init.fill(b, std);
            }
        }
        p
    }

    pub fn depth(&self) -> usize {
        self.wx.len()
    }

    pub fn ctx_dim(&self) -> usize {
        self.wv[0].cols
    }

    pub fn input_dim(&self) -> usize {
        self.wx[0].cols
    }

    fn act(&self, i: usize) -> Activation {
        if i + 1 == self.depth() {
            self.output
        } else {
            self.hidden
        }
    }

    fn layers_mut(&mut self) -> Vec<Vec<&mut Param>> {
        let k = self.depth();
        let mut out: Vec<Vec<&mut Param>> = (0..k).map(|_| Vec::new()).collect();
        let mut wx = self.wx.iter_mut();
        let mut wxv = self.wxv.iter_mut();
        let mut bx = self.bx.iter_mut();
        let mut wv = self.wv.iter_mut();
        let mut b = self.b.iter_mut();
        let mut wy = self.wy_raw.iter_mut();
        let mut wyv = self.wyv.iter_mut();
        let mut by = self.by.iter_mut();
        let mut cw = self.ctx_w.iter_mut();
        let mut cb = self.ctx_b.iter_mut();
        for (i, l) in out.iter_mut().enumerate() {
            l.push(wx.next().expect("layer"));
            l.push(wxv.next().expect("layer"));
            l.push(bx.next().expect("layer"));
            l.push(wv.next().expect("layer"));
            l.push(b.next().expect("layer"));
            if i >= 1 {
                l.push(wy.next().expect("layer"));
                l.push(wyv.next().expect("layer"));
                l.push(by.next().expect("layer"));
            }
            if i + 1 < k {
                l.push(cw.next().expect("layer"));
                l.push(cb.next().expect("layer"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.wx.len();
        let bad = |m: String| Err(Error::invalid("picnn", m));
        if k == 0 {
            return bad("no layers".into());
        }
        if [self.wxv.len(), self.bx.len(), self.wv.len(), self.b.len()] != [k; 4]
            || [
                self.wy_raw.len(),
                self.wyv.len(),
                self.by.len(),
                self.ctx_w.len(),
                self.ctx_b.len(),
            ] != [k - 1; 5]
        {
            return bad("layer counts disagree".into());
        }
        let (nc, nx) = (self.ctx_dim(), self.input_dim());
        let mut cv = nc;
        for i in 0..k {
            let h = self.wx[i].rows;
            let ok = self.wx[i].check(h, nx)
                && self.wxv[i].check(nx, cv)
                && self.bx[i].check(nx, 1)
                && self.wv[i].check(h, cv)
                && self.b[i].check(h, 1)
                && (i == 0 || {
                    let hp = self.wx[i - 1].rows;
                    self.wy_raw[i - 1].check(h, hp)
                        && self.wyv[i - 1].check(hp, cv)
                        && self.by[i - 1].check(hp, 1)
                })
                && (i + 1 == k || (self.ctx_w[i].check(h, cv) && self.ctx_b[i].check(h, 1)));
            if !ok {
                return bad(format!("layer {i} shapes"));
            }
            cv = h;
        }
        if self.wx[k - 1].rows != 1 {
            return bad("output must be scalar".into());
        }
        if !self.hidden.is_convex_monotone() || !self.output.is_convex_monotone() {
            return bad("activations must be convex and non-decreasing".into());
        }
        Ok(())
    }

    /// Jet forward. `ctx` and `x` may use different bases; products are
    /// truncated to `out`, which must contain both.
    pub fn forward_jet<'t>(
        &self,
        bound: &[Tensor<'t>],
        ctx: &Jet<'t>,
        x: &Jet<'t>,
        out: &Rc<Basis>,
    ) -> Jet<'t> {
        let k = self.depth();
        let mut it = bound.iter().copied();
        let mut next = || it.next().expect("bound params");
        let mut v = ctx.clone();
        let mut y: Option<Jet<'t>> = None;
        for i in 0..k {
            let (wx, wxv, bx, wv, b) = (next(), next(), next(), next(), next());
            let gx = v.linear(wxv, Some(bx));
            let mut z = x.mul(&gx, out).linear(wx, None);
            z = z.add(&v.linear(wv, Some(b)));
            if i >= 1 {
                let (wy, wyv, by) = (next(), next(), next());
                let gy = v.linear(wyv, Some(by)).map(Tower::Relu);
                let prev = y.as_ref().expect("previous layer");
                z = z.add(&prev.mul(&gy, out).linear(wy.map(Tower::Relu, 0), None));
            }
            y = Some(self.act(i).apply_jet(z));
            if i + 1 < k {
                let (cw, cb) = (next(), next());
                v = self.ctx_act.apply_jet(v.linear(cw, Some(cb)));
            }
        }
        y.expect("at least one layer")
    }
}

impl Network for PicnnParams {
    fn params(&self) -> Vec<&Param> {
        let k = self.depth();
        let mut out = Vec::new();
        for i in 0..k {
            out.extend([
                &self.wx[i],
                &self.wxv[i],
                &self.bx[i],
                &self.wv[i],
                &self.b[i],
            ]);
            if i >= 1 {
                out.extend([&self.wy_raw[i - 1], &self.wyv[i - 1], &self.by[i - 1]]);
            }
            if i + 1 < k {
                out.extend([&self.ctx_w[i], &self.ctx_b[i]]);
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers_mut().into_iter().flatten().collect()
    }
}

/// Scalar output on any scalar type; convex in `x` for fixed `ctx`.
pub fn picnn_forward<T: Real>(p: &PicnnParams, ctx: &[T], x: &[T]) -> Result<T> {
    if ctx.len() != p.ctx_dim() {
        return Err(Error::dim("picnn context", p.ctx_dim(), ctx.len()));
    }
    if x.len() != p.input_dim() {
        return Err(Error::dim("picnn input", p.input_dim(), x.len()));
    }
    let k = p.depth();
    let mut v = ctx.to_vec();
    let mut y: Vec<T> = Vec::new();
    for i in 0..k {
        let gx = affine(&p.wxv[i], Some(&p.bx[i]), &v);
        let xg: Vec<T> = x.iter().zip(&gx).map(|(&a, &g)| a * g).collect();
        let mut z = affine(&p.wx[i], None, &xg);
        for (zi, t) in z.iter_mut().zip(affine(&p.wv[i], Some(&p.b[i]), &v)) {
            *zi += t;
        }
        if i >= 1 {
            let gy = affine(&p.wyv[i - 1], Some(&p.by[i - 1]), &v);
            let yg: Vec<T> = y.iter().zip(&gy).map(|(&a, &g)| a * g.relu()).collect();
            for (zi, t) in z.iter_mut().zip(affine_relu_w(&p.wy_raw[i - 1], &yg)) {
                *zi += t;
            }
        }
        let act = p.act(i);
        y = z.into_iter().map(|t| act.apply(t)).collect();
        if i + 1 < k {
            v = affine(&p.ctx_w[i], Some(&p.ctx_b[i]), &v)
                .into_iter()
                .map(|t| p.ctx_act.apply(t))
                .collect();
        }
    }
    Ok(y[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Src, Tape};
    use crate::nets::{ficnn_forward, FicnnParams};

    #[test]
    fn zero_network_is_zero() {
        let p = PicnnParams::zeros(2, 3, &[4, 4, 1], Activation::Softplus, Activation::Identity);
        assert_eq!(
            picnn_forward(&p, &[1.0, 2.0], &[0.1, 0.2, 0.3]).unwrap(),
            0.0
        );
    }

    #[test]
    fn reduces_to_ficnn_without_context() {
        let s = Activation::Softplus;
        let f = FicnnParams::init(3, &[5, 4, 1], s, s, true, 11);
        let mut p = PicnnParams::zeros(2, 3, &[5, 4, 1], s, s);
        for i in 0..3 {
            p.wx[i] = f.wx[i].clone();
            p.b[i] = f.b[i].clone();
            p.bx[i].data.fill(1.0);
            if i >= 1 {
                p.wy_raw[i - 1] = f.wy_raw[i - 1].clone();
                p.by[i - 1].data.fill(1.0);
            }
        }
        let x = [0.4, -1.2, 0.9];
        let a = picnn_forward(&p, &[3.0, -5.0], &x).unwrap();
        let b = ficnn_forward(&f, &x).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn jet_forward_matches_scalar_forward() {
        let p = PicnnParams::init(
            2,
            2,
            &[6, 5, 1],
            Activation::Softplus,
            Activation::Identity,
            4,
        );
        let tape = Tape::new();
        let bound = p.bind(&tape);
        let basis = Basis::new([]);
        let c = Jet::build(&tape, &basis, 2, 1, |r, _, _| Src::Const([0.5, -0.1][r]));
        let x = Jet::build(&tape, &basis, 2, 1, |r, _, _| Src::Const([1.5, 0.7][r]));
        let y = p.forward_jet(&bound, &c, &x, &basis).data.values()[0];
        let want = picnn_forward(&p, &[0.5, -0.1], &[1.5, 0.7]).unwrap();
        assert!((y - want).abs() < 1e-13, "{y} vs {want}");
    }

    #[test]
    fn params_and_params_mut_agree() {
        let mut p = PicnnParams::init(
            2,
            3,
            &[4, 4, 1],
            Activation::Softplus,
            Activation::Identity,
            1,
        );
        let a: Vec<Param> = p.params().into_iter().cloned().collect();
        let b: Vec<Param> = p.params_mut().into_iter().map(|x| x.clone()).collect();
        assert_eq!(a, b);
        assert!(p.validate().is_ok());
    }
}
