//! Automatic differentiation.
//!
//! Three layers cooperate:
//!
//! * [`Real`] is the scalar interface every numeric routine in the crate is
//!   generic over. `f64`, [`Dual`] and tape [`Var`] all implement it, and
//!   `Dual` nests, so `Dual<Dual<Var>>` carries two forward directions on top
//!   of a reverse pass.
//! * [`Tape`] records tensor-level operations for a single reverse sweep.
//! * [`Jet`] propagates truncated multivariate Taylor coefficients through
//!   network layers as whole matrices, which is how Hessians of the neural
//!   blocks are formed without per-scalar overhead.

mod api;
mod dual;
mod jet;
mod tape;

pub use api::{grad, hessian, hessian_directional, jacobian, ScalarFn, VectorFn};
pub use dual::Dual;
pub use jet::{Basis, Jet};
pub use tape::{Grads, Src, Tape, Tensor, Var};

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};
use std::sync::OnceLock;

/// Elementary functions whose derivatives of every order are available in
/// closed form. Order 0 is the function itself.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tower {
    Sin,
    Exp,
    Tanh,
    Softplus,
    Relu,
    /// Smoothed rectifier with quadratic band width `d`.
    Srelu(f64),
}

const MAX_ORDER: usize = 10;

fn tables() -> &'static (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    static TABLES: OnceLock<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = OnceLock::new();
    TABLES.get_or_init(|| {
        // p' times (1 - t^2) for tanh, p' times (s - s^2) for the logistic.
        let step = |p: &[f64], c1: f64, c2: f64| -> Vec<f64> {
            let mut out = vec![0.0; p.len() + 1];
            for (k, &a) in p.iter().enumerate().skip(1) {
                let da = a * k as f64;
                out[k - 1] += da * (1.0 - c1);
                out[k] += da * c1;
                out[k + 1] += da * c2;
            }
            out
        };
        let mut tanh = vec![vec![0.0, 1.0]];
        let mut logistic = vec![vec![0.0, 1.0]];
        for k in 0..MAX_ORDER {
            let t = step(&tanh[k], 0.0, -1.0);
            tanh.push(t);
            let s = step(&logistic[k], 1.0, -1.0);
            logistic.push(s);
        }
        (tanh, logistic)
    })
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tower {
    /// The `order`-th derivative at `x`.
    ///
    /// Conventions at kinks: relu' (0) = 0, and the srelu curvature is
    /// right-continuous, so srelu''(0) = 1/d.
    pub fn eval(self, x: f64, order: usize) -> f64 {
        assert!(order <= MAX_ORDER, "derivative order {order} unsupported");
        match self {
            Tower::Sin => match order % 4 {
                0 => x.sin(),
                1 => x.cos(),
                2 => -x.sin(),
                _ => -x.cos(),
            },
            Tower::Exp => x.exp(),
            Tower::Tanh => horner(&tables().0[order], x.tanh()),
            Tower::Softplus => {
                if order == 0 {
                    softplus(x)
                } else {
                    horner(&tables().1[order - 1], sigmoid(x))
                }
            }
            Tower::Relu => match order {
                0 => x.max(0.0),
                1 => {
                    if x > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                _ => 0.0,
            },
            Tower::Srelu(d) => match order {
                0 => {
                    if x <= 0.0 {
                        0.0
                    } else if x < d {
                        x * x / (2.0 * d)
                    } else {
                        x - d / 2.0
                    }
                }
                1 => {
                    if x <= 0.0 {
                        0.0
                    } else if x < d {
                        x / d
                    } else {
                        1.0
                    }
                }
                2 => {
                    if (0.0..d).contains(&x) {
                        1.0 / d
                    } else {
                        0.0
                    }
                }
                _ => 0.0,
            },
        }
    }

    /// Fills `out[k]` with the k-th derivative for k in `0..out.len()`.
    pub(crate) fn eval_all(self, x: f64, out: &mut [f64]) {
        match self {
            Tower::Tanh => {
                let t = x.tanh();
                let tab = &tables().0;
                for (k, o) in out.iter_mut().enumerate() {
                    *o = horner(&tab[k], t);
                }
            }
            Tower::Softplus => {
                let s = sigmoid(x);
                let tab = &tables().1;
                for (k, o) in out.iter_mut().enumerate() {
                    *o = if k == 0 {
                        softplus(x)
                    } else {
                        horner(&tab[k - 1], s)
                    };
                }
            }
            Tower::Exp => {
                let e = x.exp();
                out.fill(e);
            }
            _ => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = self.eval(x, k);
                }
            }
        }
    }
}

/// Scalar arithmetic shared by plain floats and every AD number type.
pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sqrt(self) -> Self;
    /// `order`-th derivative of the tower function, evaluated at `self`.
    fn tower(self, f: Tower, order: u8) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
    fn sin(self) -> Self {
        self.tower(Tower::Sin, 0)
    }
    fn cos(self) -> Self {
        self.tower(Tower::Sin, 1)
    }
    fn exp(self) -> Self {
        self.tower(Tower::Exp, 0)
    }
    fn tanh(self) -> Self {
        self.tower(Tower::Tanh, 0)
    }
    fn softplus(self) -> Self {
        self.tower(Tower::Softplus, 0)
    }
    fn sigmoid(self) -> Self {
        self.tower(Tower::Softplus, 1)
    }
    fn relu(self) -> Self {
        self.tower(Tower::Relu, 0)
    }
    fn srelu(self, d: f64) -> Self {
        self.tower(Tower::Srelu(d), 0)
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn tower(self, f: Tower, order: u8) -> Self {
        f.eval(self, order as usize)
    }
}

/// Values of a slice of AD numbers.
pub fn values<T: Real>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(Real::value).collect()
}

/// Lifts plain values into constants of `T`.
pub fn lift<T: Real>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&v| T::cst(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: Tower, x: f64, order: usize) -> f64 {
        let h = 1e-5;
        (f.eval(x + h, order) - f.eval(x - h, order)) / (2.0 * h)
    }

    #[test]
    fn towers_are_consistent_with_finite_differences() {
        for f in [Tower::Sin, Tower::Exp, Tower::Tanh, Tower::Softplus] {
            for &x in &[-1.3, -0.2, 0.0, 0.4, 2.1] {
                for k in 0..5 {
                    let a = f.eval(x, k + 1);
                    let b = fd(f, x, k);
                    assert!(
                        (a - b).abs() < 1e-5 * (1.0 + a.abs()),
                        "{f:?} x={x} k={k}: {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn eval_all_matches_eval() {
        for f in [
            Tower::Tanh,
            Tower::Softplus,
            Tower::Exp,
            Tower::Srelu(0.3),
            Tower::Sin,
        ] {
            let mut out = [0.0; 6];
            f.eval_all(0.17, &mut out);
            for (k, o) in out.iter().enumerate() {
                assert_eq!(*o, f.eval(0.17, k));
            }
        }
    }

    #[test]
    fn srelu_pieces() {
        let s = Tower::Srelu(0.5);
        assert_eq!(s.eval(-1.0, 0), 0.0);
        assert_eq!(s.eval(0.25, 0), 0.0625);
        assert_eq!(s.eval(2.0, 0), 1.75);
        assert_eq!(s.eval(0.0, 1), 0.0);
        assert_eq!(s.eval(0.0, 2), 2.0);
        assert_eq!(Tower::Relu.eval(0.0, 1), 0.0);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
    }
}
