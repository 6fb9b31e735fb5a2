use super::{Real, Tower};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// First-order forward-mode number `re + eps·ε` with ε² = 0.
///
/// Nesting `Dual<Dual<T>>` yields mixed second derivatives in two directions.
#[derive(Clone, Copy, Debug)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Real> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }

    /// A point seeded with unit tangent.
    pub fn var(re: T) -> Self {
        Dual {
            re,
            eps: T::cst(1.0),
        }
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.eps * o.re + self.re * o.eps)
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Dual::new(q, (self.eps - q * o.eps) / o.re)
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<T: Real> Add<f64> for Dual<T> {
    type Output = Self;
    fn add(self, c: f64) -> Self {
        Dual::new(self.re + c, self.eps)
    }
}

impl<T: Real> Sub<f64> for Dual<T> {
    type Output = Self;
    fn sub(self, c: f64) -> Self {
        Dual::new(self.re - c, self.eps)
    }
}

impl<T: Real> Mul<f64> for Dual<T> {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        Dual::new(self.re * c, self.eps * c)
    }
}

impl<T: Real> Div<f64> for Dual<T> {
    type Output = Self;
    fn div(self, c: f64) -> Self {
        Dual::new(self.re / c, self.eps / c)
    }
}

impl<T: Real> AddAssign for Dual<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> SubAssign for Dual<T> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real> Real for Dual<T> {
    fn cst(v: f64) -> Self {
        Dual::new(T::cst(v), T::cst(0.0))
    }
    fn value(&self) -> f64 {
        self.re.value()
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.eps / (s * 2.0))
    }
    fn tower(self, f: Tower, order: u8) -> Self {
        Dual::new(
            self.re.tower(f, order),
            self.eps * self.re.tower(f, order + 1),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let x = Dual::var(3.0);
        let y = x * x * 2.0 + 1.0;
        assert_eq!(y.re, 19.0);
        assert_eq!(y.eps, 12.0);
    }

    #[test]
    fn nested_second_derivative() {
        // d²/dx² sin(x) at 0.3 = -sin(0.3)
        let x = Dual::new(Dual::var(0.3), Dual::cst(1.0));
        let y = x.sin();
        assert!((y.eps.eps + 0.3f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn quotient_and_sqrt() {
        let x = Dual::var(4.0);
        let y = Dual::cst(1.0) / x;
        assert_eq!(y.eps, -1.0 / 16.0);
        assert_eq!(x.sqrt().eps, 0.25);
    }
}
