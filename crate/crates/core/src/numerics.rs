//! Small dense linear algebra and fixed-step integration.
//!
//! Everything here is generic over [`Real`] so the same code runs on plain
//! floats and under differentiation.

use crate::autodiff::Real;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::ops::{Index, IndexMut};

pub type SmallVector<T = f64> = Vec<T>;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallMatrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T> Index<(usize, usize)> for SmallMatrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for SmallMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Real> SmallMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SmallMatrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::cst(1.0);
        }
        m
    }

    pub fn from_diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        SmallMatrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        SmallMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, o: &Self) -> Self {
        assert_eq!(self.cols, o.rows, "matmul dimensions");
        Self::from_fn(self.rows, o.cols, |i, j| {
            let mut acc = T::zero();
            for k in 0..self.cols {
                acc += self[(i, k)] * o[(k, j)];
            }
            acc
        })
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.cols, x.len(), "matvec dimensions");
        (0..self.rows)
            .map(|i| {
                let mut acc = T::zero();
                for (j, &xj) in x.iter().enumerate() {
                    acc += self[(i, j)] * xj;
                }
                acc
            })
            .collect()
    }

    pub fn add(&self, o: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)] + o[(i, j)])
    }

    pub fn sub(&self, o: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)] - o[(i, j)])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)] * s)
    }

    pub fn values(&self) -> SmallMatrix<f64> {
        SmallMatrix::from_vec(
            self.rows,
            self.cols,
            self.data.iter().map(Real::value).collect(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.value().is_finite())
    }

    /// max |A - Aᵀ| over entries.
    pub fn max_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.rows {
            for j in 0..i {
                m = m.max((self[(i, j)].value() - self[(j, i)].value()).abs());
            }
        }
        m
    }
}

impl SmallMatrix<f64> {
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let c = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * c);
        for r in rows {
            assert_eq!(r.len(), c, "ragged rows");
            data.extend_from_slice(r);
        }
        SmallMatrix::from_vec(rows.len(), c, data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Shape and finiteness check for deserialized matrices.
    pub fn is_well_formed(&self) -> bool {
        self.data.len() == self.rows * self.cols && self.data.iter().all(|v| v.is_finite())
    }

    pub fn lift<T: Real>(&self) -> SmallMatrix<T> {
        SmallMatrix::from_vec(self.rows, self.cols, crate::autodiff::lift(&self.data))
    }
}

/// Lower-triangular L with L Lᵀ = A. Only the lower triangle of A is read.
pub fn cholesky<T: Real>(a: &SmallMatrix<T>) -> Result<SmallMatrix<T>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dim("cholesky", n, a.cols()));
    }
    let mut l = SmallMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        let pivot = d.value();
        if !(pivot > 1e-14) {
            return Err(Error::NotPositiveDefinite { index: j, pivot });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves A x = b for symmetric positive definite A.
pub fn solve_spd<T: Real>(a: &SmallMatrix<T>, b: &[T]) -> Result<Vec<T>> {
    let n = a.rows();
    if b.len() != n {
        return Err(Error::dim("solve_spd rhs", n, b.len()));
    }
    let l = cholesky(a)?;
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    Ok(y)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Eigenvalues come back in descending order; eigenvector `k` is column `k`.
pub fn sym_eig(a: &SmallMatrix<f64>) -> Result<(Vec<f64>, SmallMatrix<f64>)> {
    if a.rows() != a.cols() {
        return Err(Error::dim("sym_eig", a.rows(), a.cols()));
    }
    let asym = a.max_asymmetry();
    if asym > 1e-9 || asym.is_nan() {
        return Err(Error::NonSymmetric { asymmetry: asym });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite {
            what: "sym_eig input".into(),
        });
    }
    Ok(sym_eig_unchecked(a))
}

pub(crate) fn sym_eig_unchecked(a0: &SmallMatrix<f64>) -> (Vec<f64>, SmallMatrix<f64>) {
    let n = a0.rows();
    let mut a = SmallMatrix::from_fn(n, n, |i, j| 0.5 * (a0[(i, j)] + a0[(j, i)]));
    let mut v = SmallMatrix::<f64>::identity(n);
    let tol = 1e-12 * a.frobenius().max(1.0) * 1e-3;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
        }
        if off.sqrt() < tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the first eigenvector on exact ties.
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let lam = order.iter().map(|&i| a[(i, i)]).collect();
    let vecs = SmallMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (lam, vecs)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min(a: &SmallMatrix<f64>) -> Result<f64> {
    Ok(*sym_eig(a)?.0.last().expect("non-empty matrix"))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(a: &SmallMatrix<f64>) -> Result<f64> {
    Ok(sym_eig(a)?.0[0])
}

pub fn norm_sq<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |acc, &v| acc + v * v)
}

pub fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

/// Integration state: time and the stacked vector [q; q̇].
#[derive(Clone, Debug, PartialEq)]
pub struct OdeState<T = f64> {
    pub t: f64,
    pub y: Vec<T>,
}

/// One classical Runge–Kutta step of `ẏ = f(t, y)`.
pub fn rk4_step<T: Real, F>(mut f: F, s: &OdeState<T>, dt: f64) -> Result<OdeState<T>>
where
    F: FnMut(f64, &[T]) -> Result<Vec<T>>,
{
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }
    let n = s.y.len();
    let mut stage = |t: f64, y: &[T]| -> Result<Vec<T>> {
        let k = f(t, y)?;
        if k.len() != n {
            return Err(Error::dim("vector field", n, k.len()));
        }
        if k.iter().any(|v| !v.value().is_finite()) {
            return Err(Error::NonFiniteDerivative { t });
        }
        Ok(k)
    };
    let shift =
        |k: &[T], h: f64| -> Vec<T> { s.y.iter().zip(k).map(|(&y, &k)| y + k * h).collect() };
    let k1 = stage(s.t, &s.y)?;
    let k2 = stage(s.t + 0.5 * dt, &shift(&k1, 0.5 * dt))?;
    let k3 = stage(s.t + 0.5 * dt, &shift(&k2, 0.5 * dt))?;
    let k4 = stage(s.t + dt, &shift(&k3, dt))?;
    let y = (0..n)
        .map(|i| s.y[i] + (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (dt / 6.0))
        .collect();
    Ok(OdeState { t: s.t + dt, y })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_examples() {
        let l = cholesky(&SmallMatrix::<f64>::identity(2)).unwrap();
        assert_eq!(l, SmallMatrix::identity(2));
        let l = cholesky(&SmallMatrix::from_rows(&[&[4.0, 2.0], &[2.0, 2.0]])).unwrap();
        assert_eq!(l, SmallMatrix::from_rows(&[&[2.0, 0.0], &[1.0, 1.0]]));
        let e = cholesky(&SmallMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]));
        assert!(matches!(e, Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn solve_examples() {
        let x = solve_spd(&SmallMatrix::identity(2), &[3.0, -1.0]).unwrap();
        assert_eq!(x, vec![3.0, -1.0]);
        let a = SmallMatrix::from_rows(&[&[5.0, 2.0], &[2.0, 1.0]]);
        let x = solve_spd(&a, &[5.0, 2.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && x[1].abs() < 1e-14);
        let x = solve_spd(&SmallMatrix::from_diag(&[2.0, 2.0]), &[4.0, 6.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-14 && (x[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn eig_examples() {
        let (l, v) = sym_eig(&SmallMatrix::from_diag(&[2.0, 1.0])).unwrap();
        assert_eq!(l, vec![2.0, 1.0]);
        assert_eq!(v, SmallMatrix::identity(2));
        let (l, _) = sym_eig(&SmallMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert!((l[0] - 1.0).abs() < 1e-14 && (l[1] + 1.0).abs() < 1e-14);
        let bad = SmallMatrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert!(matches!(sym_eig(&bad), Err(Error::NonSymmetric { .. })));
    }

    #[test]
    fn rk4_examples() {
        let s = OdeState {
            t: 0.0,
            y: vec![1.0],
        };
        let z = rk4_step(|_, _: &[f64]| Ok(vec![0.0]), &s, 0.01).unwrap();
        assert_eq!(z.y, vec![1.0]);
        let e = rk4_step(|_, y: &[f64]| Ok(vec![y[0]]), &s, 0.01).unwrap();
        assert!((e.y[0] - 0.01f64.exp()).abs() < 1e-10);
        assert!((e.t - 0.01).abs() < 1e-15);
        let s = OdeState {
            t: 0.0,
            y: vec![1.0, 0.0],
        };
        let h = rk4_step(|_, y: &[f64]| Ok(vec![y[1], -y[0]]), &s, 0.01).unwrap();
        assert!((h.y[0] - 0.01f64.cos()).abs() < 1e-9);
        assert!((h.y[1] + 0.01f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn rk4_flags_non_finite_stages() {
        let s = OdeState {
            t: 0.0,
            y: vec![1.0],
        };
        let r = rk4_step(|_, _: &[f64]| Ok(vec![f64::NAN]), &s, 0.1);
        assert!(matches!(r, Err(Error::NonFiniteDerivative { .. })));
    }
}
