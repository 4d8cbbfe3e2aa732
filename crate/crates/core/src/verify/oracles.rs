//! Independent reference computations for linear-Gaussian problems.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::model::{Observation, ObservationSchedule, TimeGrid};
use crate::numerics::{spd_inverse, spd_solve, symmetrize};

/// Linear model `dX = (β + B X) dt + σ dW` discretised by Euler on the grid knots:
/// `X_{k+1} = (I + h B) X_k + h β + N(0, h σσᵀ)`.
#[derive(Debug, Clone)]
pub struct EulerLinearModel<'a> {
    pub bmat: &'a DMatrix<f64>,
    pub beta: &'a DVector<f64>,
    pub sigma: &'a DMatrix<f64>,
}

impl EulerLinearModel<'_> {
    fn transition(&self, h: f64) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let d = self.beta.len();
        let f = DMatrix::identity(d, d) + self.bmat * h;
        let c = self.beta * h;
        let q = self.sigma * self.sigma.transpose() * h;
        (f, c, q)
    }
}

/// Observations attached to knots, including the artificial terminal one
/// (`L = I`, `Σ = ε⁻¹ I`, `v = 0`) when `ε > 0`.
fn knot_observations(schedule: &ObservationSchedule, grid: &TimeGrid) -> Vec<(usize, Observation)> {
    let d = schedule.dim();
    let mut out: Vec<(usize, Observation)> = grid
        .obs_knots()
        .iter()
        .copied()
        .zip(schedule.observations().iter().cloned())
        .collect();
    if schedule.epsilon() > 0.0 {
        let artificial = Observation::new(
            schedule.end(),
            DMatrix::identity(d, d),
            DMatrix::identity(d, d) / schedule.epsilon(),
            DVector::zeros(d),
        )
        .expect("artificial observation is valid");
        out.push((grid.len() - 1, artificial));
    }
    out
}

/// Smoothed marginals on every knot.
#[derive(Debug, Clone)]
pub struct GaussianMarginals {
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
}

/// Kalman filter plus Rauch–Tung–Striebel smoother on the Euler grid, with
/// prior `X_0 ~ N(0, prior_var I)` (large `prior_var` approximates a flat prior).
pub fn rts_smoother(
    model: &EulerLinearModel<'_>,
    schedule: &ObservationSchedule,
    grid: &TimeGrid,
    prior_var: f64,
) -> Result<GaussianMarginals> {
    let d = schedule.dim();
    let knots = grid.knots();
    let n = knots.len();
    let obs = knot_observations(schedule, grid);
    let mut pred_mean = vec![DVector::zeros(d); n];
    let mut pred_cov = vec![DMatrix::identity(d, d) * prior_var; n];
    let mut filt_mean = vec![DVector::zeros(d); n];
    let mut filt_cov = vec![DMatrix::zeros(d, d); n];
    for k in 0..n {
        if k > 0 {
            let (f, c, q) = model.transition(knots[k] - knots[k - 1]);
            pred_mean[k] = &f * &filt_mean[k - 1] + c;
            pred_cov[k] = symmetrize(&(&f * &filt_cov[k - 1] * f.transpose() + q));
        }
        let (mut m, mut p) = (pred_mean[k].clone(), pred_cov[k].clone());
        for (_, o) in obs.iter().filter(|(j, _)| *j == k) {
            let s = o.sigma.matrix() + &o.l * &p * o.l.transpose();
            let pl = &p * o.l.transpose();
            // K = P Lᵀ S⁻¹
            let gain = spd_solve(&s, &pl.transpose(), "innovation covariance")?.transpose();
            m = &m + &gain * (&o.v - &o.l * &m);
            p = symmetrize(&(&p - &gain * &o.l * &p));
        }
        filt_mean[k] = m;
        filt_cov[k] = p;
    }
    let mut mean = filt_mean.clone();
    let mut cov = filt_cov.clone();
    for k in (0..n - 1).rev() {
        let (f, _, _) = model.transition(knots[k + 1] - knots[k]);
        // G = P_k Fᵀ (P⁻_{k+1})⁻¹
        let pf = &filt_cov[k] * f.transpose();
        let g = spd_solve(&pred_cov[k + 1], &pf.transpose(), "predicted covariance")?.transpose();
        mean[k] = &filt_mean[k] + &g * (&mean[k + 1] - &pred_mean[k + 1]);
        cov[k] = symmetrize(&(&filt_cov[k] + &g * (&cov[k + 1] - &pred_cov[k + 1]) * g.transpose()));
    }
    Ok(GaussianMarginals { mean, cov })
}

/// The same posterior by building the joint Gaussian of all knot states and
/// conditioning on the stacked observations in one dense solve.
pub fn dense_gaussian_smoother(
    model: &EulerLinearModel<'_>,
    schedule: &ObservationSchedule,
    grid: &TimeGrid,
    prior_var: f64,
) -> Result<GaussianMarginals> {
    let d = schedule.dim();
    let knots = grid.knots();
    let n = knots.len();
    let big = n * d;
    // X = A ξ + m with ξ = (X_0, w_1, …, w_{n-1}) independent blocks
    let mut prior_mean = DVector::zeros(big);
    let mut cov = DMatrix::zeros(big, big);
    cov.view_mut((0, 0), (d, d))
        .copy_from(&(DMatrix::identity(d, d) * prior_var));
    for k in 1..n {
        let (f, c, q) = model.transition(knots[k] - knots[k - 1]);
        let prev_mean = prior_mean.rows((k - 1) * d, d).into_owned();
        prior_mean.rows_mut(k * d, d).copy_from(&(&f * prev_mean + c));
        for j in 0..k {
            let cjk = cov.view(((k - 1) * d, j * d), (d, d)) * 1.0;
            let block = &f * cjk;
            cov.view_mut((k * d, j * d), (d, d)).copy_from(&block);
            cov.view_mut((j * d, k * d), (d, d)).copy_from(&block.transpose());
        }
        let prev = cov.view(((k - 1) * d, (k - 1) * d), (d, d)).into_owned();
        let diag = symmetrize(&(&f * prev * f.transpose() + q));
        cov.view_mut((k * d, k * d), (d, d)).copy_from(&diag);
    }
    let obs = knot_observations(schedule, grid);
    let m_total: usize = obs.iter().map(|(_, o)| o.obs_dim()).sum();
    let mut lmat = DMatrix::zeros(m_total, big);
    let mut noise = DMatrix::zeros(m_total, m_total);
    let mut y = DVector::zeros(m_total);
    let mut row = 0;
    for (k, o) in &obs {
        let m = o.obs_dim();
        lmat.view_mut((row, k * d), (m, d)).copy_from(&o.l);
        noise.view_mut((row, row), (m, m)).copy_from(o.sigma.matrix());
        y.rows_mut(row, m).copy_from(&o.v);
        row += m;
    }
    let s = &lmat * &cov * lmat.transpose() + noise;
    let s_inv = spd_inverse(&s, "stacked innovation covariance")?;
    let gain = &cov * lmat.transpose() * s_inv;
    let post_mean = &prior_mean + &gain * (y - &lmat * &prior_mean);
    let post_cov = &cov - &gain * &lmat * &cov;
    Ok(GaussianMarginals {
        mean: (0..n).map(|k| post_mean.rows(k * d, d).into_owned()).collect(),
        cov: (0..n)
            .map(|k| symmetrize(&post_cov.view((k * d, k * d), (d, d)).into_owned()))
            .collect(),
    })
}

/// Posterior of prior `N(mean, cov)` and likelihood `N(L x, Σ)` in information form.
pub fn information_form_update(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    obs: &Observation,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let prior_info = spd_inverse(cov, "prior covariance")?;
    let post_cov = spd_inverse(&(&prior_info + obs.information()), "posterior information")?;
    let post_mean = &post_cov * (prior_info * mean + obs.information_vector());
    Ok((post_mean, post_cov))
}
