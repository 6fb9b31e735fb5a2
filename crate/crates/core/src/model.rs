//! Interfaces between the controller, simulator and the two kinds of model
//! (analytic plant and learned Lagrangian).

use crate::autodiff::{lift, values, Tape, Var};
use crate::error::Result;
use crate::numerics::SmallMatrix;

/// M, C and G at one state.
#[derive(Clone, Debug)]
pub struct ModelTerms<T> {
    pub m: SmallMatrix<T>,
    pub c: SmallMatrix<T>,
    pub g: Vec<T>,
}

/// Source of the Euler–Lagrange terms used by the control law.
pub trait ElModel {
    type Bound<'t>;

    fn dim(&self) -> usize;
    fn bind<'t>(&self, tape: &'t Tape) -> Self::Bound<'t>;
    fn terms<'t>(
        &self,
        bound: &Self::Bound<'t>,
        q: &[Var<'t>],
        qd: &[Var<'t>],
    ) -> Result<ModelTerms<Var<'t>>>;
}

/// Simulation truth: accelerations under a generalized force.
pub trait Dynamics {
    type Bound<'t>;

    fn dim(&self) -> usize;
    fn bind<'t>(&self, tape: &'t Tape) -> Self::Bound<'t>;
    /// q̈ given total generalized force `force` (control plus disturbance).
    fn accel<'t>(
        &self,
        bound: &Self::Bound<'t>,
        q: &[Var<'t>],
        qd: &[Var<'t>],
        force: &[Var<'t>],
    ) -> Result<Vec<Var<'t>>>;

    /// Plain-valued q̈.
    fn accel_at(&self, q: &[f64], qd: &[f64], force: &[f64]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let b = self.bind(&tape);
        let a = self.accel(&b, &lift::<Var>(q), &lift::<Var>(qd), &lift::<Var>(force))?;
        Ok(values(&a))
    }
}
