//! Euler–Maruyama simulation of the target diffusion and synthetic observations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{DiffusionModel, Observation, ObservationSchedule};
use crate::numerics::{cholesky, RngStream};

/// A path on a uniform mesh; `states` is knot-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub dim: usize,
}

impl SimulatedPath {
    pub fn state(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.states[k * self.dim..(k + 1) * self.dim])
    }

    /// Linear interpolation of the path at `t` (clamped to the mesh).
    pub fn at(&self, t: f64) -> DVector<f64> {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.state(0);
        }
        if t >= self.times[n - 1] {
            return self.state(n - 1);
        }
        let j = self.times.partition_point(|&s| s <= t);
        let w = (t - self.times[j - 1]) / (self.times[j] - self.times[j - 1]);
        self.state(j - 1) * (1.0 - w) + self.state(j) * w
    }

    /// Index of the mesh point equal to `t` (within 1e-9 relative to the step).
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let h = self.times[1] - self.times[0];
        let k = ((t - self.times[0]) / h).round();
        if k < 0.0 || k as usize >= self.times.len() || (self.times[k as usize] - t).abs() > 1e-9 * h.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "time {t} is not on the simulation mesh"
            )));
        }
        Ok(k as usize)
    }
}

/// Euler–Maruyama on `[t0, t1]` with `steps` uniform steps.
pub fn euler_maruyama(
    model: &dyn DiffusionModel,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    steps: usize,
    rng: &mut RngStream,
) -> Result<SimulatedPath> {
    let (d, dp) = (model.dim(), model.noise_dim());
    if x0.len() != d || steps == 0 || !(t1 > t0) {
        return Err(Error::InvalidArgument(format!(
            "simulation needs x0 of length {d}, steps >= 1 and t1 > t0"
        )));
    }
    let h = (t1 - t0) / steps as f64;
    let sqrt_h = h.sqrt();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity((steps + 1) * d);
    let mut x = x0.clone();
    let mut b = DVector::zeros(d);
    let mut sigma = DMatrix::zeros(d, dp);
    let mut dw = DVector::zeros(dp);
    times.push(t0);
    states.extend_from_slice(x.as_slice());
    for k in 0..steps {
        let t = t0 + h * k as f64;
        model.drift_into(t, &x, &mut b);
        model.dispersion_into(t, &x, &mut sigma);
        rng.fill_standard_normal(dw.as_mut_slice());
        x.axpy(h, &b, 1.0);
        x.gemv(sqrt_h, &sigma, &dw, 1.0);
        let t_next = if k + 1 == steps { t1 } else { t0 + h * (k + 1) as f64 };
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Integration {
                t: t_next,
                what: "simulated path is not finite".into(),
            });
        }
        times.push(t_next);
        states.extend_from_slice(x.as_slice());
    }
    Ok(SimulatedPath { times, states, dim: d })
}

/// Observations `v = L x(t) + η`, `η ~ N(0, Σ)`, at mesh times `times`.
pub fn observe(
    path: &SimulatedPath,
    times: &[f64],
    l: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    epsilon: f64,
    rng: &mut RngStream,
) -> Result<ObservationSchedule> {
    let factor = cholesky(sigma, "observation noise covariance")?.l();
    let mut eta = DVector::zeros(l.nrows());
    let mut obs = Vec::with_capacity(times.len());
    for &t in times {
        let x = path.state(path.index_of(t)?);
        rng.fill_standard_normal(eta.as_mut_slice());
        let v = l * x + &factor * &eta;
        obs.push(Observation::new(t, l.clone(), sigma.clone(), v)?);
    }
    ObservationSchedule::new(times[0], obs, epsilon)
}

/// Equally spaced times `start, start + dt, …` (`count` of them), computed
/// by multiplication so they land exactly on a mesh with a step dividing `dt`.
pub fn equally_spaced(start: f64, dt: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| start + dt * i as f64).collect()
}
