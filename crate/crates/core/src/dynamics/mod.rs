//! Truth models, the parametrised surrogate, time integration and diagnostics.

mod diagnostics;
mod integrate;
mod models;
mod surrogate;

pub use diagnostics::{
    climatology, forecast_skill, lyapunov_spectrum, Climatology, PerturbedBlock, SkillConfig,
    SkillReport,
};
pub use integrate::{integrate, Rk4, Rk4Work};
pub use models::{L96iModel, ML96Model};
pub use surrogate::{Forcing, SurrogateParams};

/// Autonomous vector field `dx/dt = f(x)` on a fixed-dimension state.
pub trait Tendency: Sync {
    fn dim(&self) -> usize;

    /// Writes `f(x)` into `out`; both slices have length [`Tendency::dim`].
    fn tendency(&self, x: &[f64], out: &mut [f64]);

    fn tendency_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.tendency(x, &mut out);
        out
    }
}

impl<T: Tendency + ?Sized> Tendency for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn tendency(&self, x: &[f64], out: &mut [f64]) {
        (**self).tendency(x, out)
    }
}

/// Wraps a closure as a [`Tendency`].
pub struct FnTendency<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> FnTendency<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> Tendency for FnTendency<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn tendency(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

#[inline]
pub(crate) fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}
