use super::{Dual, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::SmallMatrix;
use std::ops::Range;

/// Scalar-valued function that can be evaluated on any [`Real`].
pub trait ScalarFn {
    fn eval<T: Real>(&self, x: &[T]) -> T;
}

/// Vector-valued function that can be evaluated on any [`Real`].
pub trait VectorFn {
    fn eval<T: Real>(&self, x: &[T]) -> Vec<T>;
}

fn finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what: what.into() })
    }
}

/// ∇f(x) by one reverse sweep.
pub fn grad<F: ScalarFn>(f: &F, x: &[f64]) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let xs: Vec<Var> = x.iter().map(|&v| tape.var(v)).collect();
    let y = f.eval(&xs);
    finite(y.value(), "function value")?;
    let g = tape.backward(y);
    let out: Vec<f64> = xs.iter().map(|&v| g.wrt(v)).collect();
    for v in &out {
        finite(*v, "gradient")?;
    }
    Ok(out)
}

/// Jacobian, row i = ∇fᵢ, one reverse sweep per output.
pub fn jacobian<F: VectorFn>(f: &F, x: &[f64]) -> Result<SmallMatrix> {
    let tape = Tape::new();
    let xs: Vec<Var> = x.iter().map(|&v| tape.var(v)).collect();
    let ys = f.eval(&xs);
    let mut jac = SmallMatrix::zeros(ys.len(), x.len());
    for (i, &y) in ys.iter().enumerate() {
        finite(y.value(), "function value")?;
        let g = tape.backward(y);
        for (j, &v) in xs.iter().enumerate() {
            jac[(i, j)] = g.wrt(v);
            finite(jac[(i, j)], "jacobian")?;
        }
    }
    Ok(jac)
}

/// Raw Hessian rows from forward-over-reverse, before symmetrization.
pub(crate) fn hessian_raw<F: ScalarFn>(f: &F, x: &[f64]) -> Result<SmallMatrix> {
    let n = x.len();
    let mut h = SmallMatrix::zeros(n, n);
    let mut tape = Tape::new();
    for i in 0..n {
        tape.clear();
        let xs: Vec<Var> = x.iter().map(|&v| tape.var(v)).collect();
        let ds: Vec<Dual<Var>> = xs
            .iter()
            .enumerate()
            .map(|(j, &v)| Dual::new(v, Var::cst(if i == j { 1.0 } else { 0.0 })))
            .collect();
        let y = f.eval(&ds);
        finite(y.value(), "function value")?;
        let g = tape.backward(y.eps);
        for (j, &v) in xs.iter().enumerate() {
            h[(i, j)] = g.wrt(v);
            finite(h[(i, j)], "hessian")?;
        }
    }
    Ok(h)
}

/// ∇²f(x), symmetrized.
pub fn hessian<F: ScalarFn>(f: &F, x: &[f64]) -> Result<SmallMatrix> {
    let h = hessian_raw(f, x)?;
    let n = x.len();
    Ok(SmallMatrix::from_fn(n, n, |i, j| {
        0.5 * (h[(i, j)] + h[(j, i)])
    }))
}

/// Σₖ vₖ ∂/∂aₖ of the Hessian of `f` restricted to the `b` block.
///
/// `a` and `b` are index ranges into `x`; `v` has the length of `a`.
pub fn hessian_directional<F: ScalarFn>(
    f: &F,
    x: &[f64],
    a: Range<usize>,
    b: Range<usize>,
    v: &[f64],
) -> Result<SmallMatrix> {
    if v.len() != a.len() {
        return Err(Error::dim(
            "hessian_directional direction",
            a.len(),
            v.len(),
        ));
    }
    if a.end > x.len() || b.end > x.len() {
        return Err(Error::dim(
            "hessian_directional block",
            x.len(),
            a.end.max(b.end),
        ));
    }
    let nb = b.len();
    let mut out = SmallMatrix::zeros(nb, nb);
    let mut tape = Tape::new();
    for i in 0..nb {
        tape.clear();
        let xs: Vec<Var> = x.iter().map(|&v| tape.var(v)).collect();
        let ds: Vec<Dual<Dual<Var>>> = xs
            .iter()
            .enumerate()
            .map(|(k, &xv)| {
                let inner = if k == b.start + i { 1.0 } else { 0.0 };
                let outer = if a.contains(&k) { v[k - a.start] } else { 0.0 };
                Dual::new(Dual::new(xv, Var::cst(inner)), Dual::cst(outer))
            })
            .collect();
        let y = f.eval(&ds);
        finite(y.value(), "function value")?;
        let g = tape.backward(y.eps.eps);
        for j in 0..nb {
            out[(i, j)] = g.wrt(xs[b.start + j]);
            finite(out[(i, j)], "third derivative")?;
        }
    }
    Ok(SmallMatrix::from_fn(nb, nb, |i, j| {
        0.5 * (out[(i, j)] + out[(j, i)])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct X1sqX2;
    impl ScalarFn for X1sqX2 {
        fn eval<T: Real>(&self, x: &[T]) -> T {
            x[0] * x[0] * x[1]
        }
    }

    struct TwoLinkKinetic;
    impl ScalarFn for TwoLinkKinetic {
        // x = (a1, a2, b1, b2): angles then rates.
        fn eval<T: Real>(&self, x: &[T]) -> T {
            let c = x[1].cos();
            (c * 2.0 + 3.0) * x[2] * x[2] * 0.5 + (c + 1.0) * x[2] * x[3] + x[3] * x[3] * 0.5
        }
    }

    #[test]
    fn grad_and_hessian_examples() {
        assert_eq!(grad(&X1sqX2, &[1.0, 2.0]).unwrap(), vec![4.0, 1.0]);
        let h = hessian(&X1sqX2, &[1.0, 2.0]).unwrap();
        assert_eq!(h, SmallMatrix::from_rows(&[&[4.0, 2.0], &[2.0, 0.0]]));
    }

    #[test]
    fn directional_third_derivative_of_two_link_energy() {
        let x = [0.0, std::f64::consts::FRAC_PI_2, 0.3, -0.4];
        let d = hessian_directional(&TwoLinkKinetic, &x, 0..2, 2..4, &[0.0, 1.0]).unwrap();
        let want = SmallMatrix::from_rows(&[&[-2.0, -1.0], &[-1.0, 0.0]]);
        assert!(d.sub(&want).max_abs() < 1e-12, "{d:?}");
    }
}
