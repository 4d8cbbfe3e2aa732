//! Target diffusions, the linear auxiliary process, observation schedules and time grids.

mod auxiliary;
mod builtin;
mod grid;
mod schedule;

pub use auxiliary::{Lerp, LinearAuxiliary, PiecewiseLinear, TimeFunction};
pub use builtin::{Lorenz, OrnsteinUhlenbeck, Pendulum};
pub use grid::TimeGrid;
pub use schedule::{Observation, ObservationSchedule};

use nalgebra::{DMatrix, DVector};

/// A diffusion `dX = b(t, X) dt + σ(t, X) dW` with `X ∈ ℝ^d`, `W ∈ ℝ^{d'}`.
///
/// The `*_into` methods write into caller-owned buffers so the sampler's
/// inner loop does not allocate.
pub trait DiffusionModel: Send + Sync {
    fn name(&self) -> &str;

    /// State dimension `d`.
    fn dim(&self) -> usize;

    /// Noise dimension `d'`.
    fn noise_dim(&self) -> usize;

    fn drift_into(&self, t: f64, x: &DVector<f64>, out: &mut DVector<f64>);

    fn dispersion_into(&self, t: f64, x: &DVector<f64>, out: &mut DMatrix<f64>);

    /// `a = σσᵀ`.
    fn diffusion_into(&self, t: f64, x: &DVector<f64>, out: &mut DMatrix<f64>) {
        let mut sigma = DMatrix::zeros(self.dim(), self.noise_dim());
        self.dispersion_into(t, x, &mut sigma);
        out.gemm(1.0, &sigma, &sigma.transpose(), 0.0);
    }

    /// Analytic drift Jacobian, when the model provides one.
    fn analytic_jacobian(&self, _t: f64, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    /// True when `σ` depends on neither time nor state.
    fn constant_dispersion(&self) -> bool {
        false
    }

    fn drift(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.drift_into(t, x, &mut out);
        out
    }

    fn dispersion(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim(), self.noise_dim());
        self.dispersion_into(t, x, &mut out);
        out
    }

    fn diffusion(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        self.diffusion_into(t, x, &mut out);
        out
    }

    /// Drift Jacobian: analytic if available, central differences otherwise.
    fn jacobian(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        match self.analytic_jacobian(t, x) {
            Some(j) => j,
            None => finite_difference_jacobian(|y| self.drift(t, y), x),
        }
    }
}

/// Central-difference Jacobian with step `1e-6 (1 + |x_j|)` per coordinate.
pub fn finite_difference_jacobian<F>(f: F, x: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let d = x.len();
    let f0 = f(x);
    let mut jac = DMatrix::zeros(f0.len(), d);
    let mut y = x.clone();
    for j in 0..d {
        let h = 1e-6 * (1.0 + x[j].abs());
        y[j] = x[j] + h;
        let fp = f(&y);
        y[j] = x[j] - h;
        let fm = f(&y);
        y[j] = x[j];
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    jac
}
