//! Constant-dimension backward filter.
//!
//! Between observations `H†` and `ν` follow the linear backward ODEs
//!
//! ```text
//! dH†/dt = B̃ H† + H† B̃ᵀ - ã,      dν/dt = B̃ ν + β̃,
//! ```
//!
//! and at every observation time the pair is updated as a Gaussian
//! conjugate step (covariance downdate plus information-weighted mean).
//! The guiding term of the proposal is then `r̃(t, x) = H(t)(ν(t) - x)` with
//! `H = (H†)⁻¹`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::guided::TimeChange;
use crate::model::{LinearAuxiliary, Observation, ObservationSchedule, TimeGrid};
use crate::numerics::{cholesky, spd_inverse, spd_solve, symmetrize_mut, woodbury_downdate, RkTableau};

/// Filter state before and after one observation update.
#[derive(Debug, Clone)]
pub struct JumpRecord {
    pub index: usize,
    pub t: f64,
    /// `(H†(t_i+), ν(t_i+))`; `None` for the last observation with `ε = 0` (flat prior).
    pub prior: Option<(DMatrix<f64>, DVector<f64>)>,
    pub hdagger: DMatrix<f64>,
    pub nu: DVector<f64>,
}

/// One record per observation, in schedule order.
#[derive(Debug, Clone, Default)]
pub struct FilterAudit {
    pub records: Vec<JumpRecord>,
}

/// Backward filter tabulated on a [`TimeGrid`].
///
/// Knot `k < K` holds the right limit at `t_k`, i.e. the values that drive
/// the Euler step from `t_k` to `t_{k+1}`. At an observation knot that is the
/// state before the observation update (seen backwards in time); the updated
/// values are kept in the [`FilterAudit`]. The last knot holds the terminal
/// values and [`BackwardFilter::initial_mean`] / [`BackwardFilter::initial_cov`]
/// hold the updated values at the first knot.
#[derive(Debug, Clone)]
pub struct BackwardFilter {
    grid: TimeGrid,
    dim: usize,
    nu: Vec<DVector<f64>>,
    hdagger: Vec<DMatrix<f64>>,
    h: Vec<DMatrix<f64>>,
    f: Vec<DVector<f64>>,
    nu0: DVector<f64>,
    hdagger0: DMatrix<f64>,
    factor0: DMatrix<f64>,
    beta: Vec<DVector<f64>>,
    bmat: Vec<DMatrix<f64>>,
    atilde: Vec<DMatrix<f64>>,
    rate: Vec<f64>,
}

impl BackwardFilter {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nu(&self, k: usize) -> &DVector<f64> {
        &self.nu[k]
    }

    pub fn hdagger(&self, k: usize) -> &DMatrix<f64> {
        &self.hdagger[k]
    }

    /// `H = (H†)⁻¹` at knot `k`.
    pub fn h(&self, k: usize) -> &DMatrix<f64> {
        &self.h[k]
    }

    /// `F = H ν` at knot `k`.
    pub fn f(&self, k: usize) -> &DVector<f64> {
        &self.f[k]
    }

    /// `r̃(t_k, x) = H(t_k)(ν(t_k) - x)`.
    pub fn r(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.f[k] - &self.h[k] * x
    }

    /// Mean of `X_0` given all observations under the auxiliary law.
    pub fn initial_mean(&self) -> &DVector<f64> {
        &self.nu0
    }

    /// Covariance `H†(t_0)` of `X_0` given all observations.
    pub fn initial_cov(&self) -> &DMatrix<f64> {
        &self.hdagger0
    }

    /// Lower Cholesky factor of [`BackwardFilter::initial_cov`].
    pub fn initial_factor(&self) -> &DMatrix<f64> {
        &self.factor0
    }

    /// `β̃` at knot `k` (segment of the step leaving `k`).
    pub fn aux_beta(&self, k: usize) -> &DVector<f64> {
        &self.beta[k]
    }

    pub fn aux_bmat(&self, k: usize) -> &DMatrix<f64> {
        &self.bmat[k]
    }

    pub fn aux_atilde(&self, k: usize) -> &DMatrix<f64> {
        &self.atilde[k]
    }

    /// `τ̇` at knot `k` (1 without a time change, 0 at the last knot).
    pub fn rate(&self, k: usize) -> f64 {
        self.rate[k]
    }
}

/// Terminal values `H†(t_n) = (Lᵀ Σ⁻¹ L + ε I)⁻¹`, `ν(t_n) = H†(t_n) Lᵀ Σ⁻¹ v_n`.
pub fn init_terminal(schedule: &ObservationSchedule) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let last = schedule.last();
    let d = schedule.dim();
    let info = last.information() + DMatrix::identity(d, d) * schedule.epsilon();
    let hd = spd_inverse(&info, "terminal information")
        .map_err(|_| Error::Config("terminal information is singular; use epsilon > 0".into()))?;
    let nu = &hd * last.information_vector();
    Ok((hd, nu))
}

/// Observation update of `(H†, ν)` at one observation time.
///
/// `H†(S) = H†(S+) - H†(S+) Lᵀ (Σ + L H†(S+) Lᵀ)⁻¹ L H†(S+)` and
/// `ν(S) = H†(S) (Lᵀ Σ⁻¹ v + H(S+) ν(S+))`.
pub fn observation_jump(
    hd_plus: &DMatrix<f64>,
    nu_plus: &DVector<f64>,
    obs: &Observation,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    cholesky(hd_plus, "H-dagger before the update").map_err(|_| {
        Error::Config(format!(
            "H-dagger is singular just after t = {}; use epsilon > 0 or an auxiliary process \
             that spreads noise into every coordinate",
            obs.t
        ))
    })?;
    let hd = woodbury_downdate(
        hd_plus,
        &obs.l,
        obs.sigma.matrix(),
        &format!("observation update at t = {}", obs.t),
    )?;
    // Same value as H†(S)(Lᵀ Σ⁻¹ v + H(S+) ν(S+)), written in gain form so the
    // result stays accurate when Σ is tiny and H†(S) is nearly zero.
    let innov = &obs.v - &obs.l * nu_plus;
    let s_mat = obs.sigma.matrix() + &obs.l * hd_plus * obs.l.transpose();
    let w = spd_solve(
        &s_mat,
        &DMatrix::from_column_slice(innov.len(), 1, innov.as_slice()),
        &format!("innovation covariance at t = {}", obs.t),
    )?;
    let nu = nu_plus + hd_plus * obs.l.transpose() * w.column(0);
    Ok((hd, nu))
}

fn pack(hd: &DMatrix<f64>, nu: &DVector<f64>) -> DVector<f64> {
    let d = nu.len();
    let mut y = DVector::zeros(d * d + d);
    y.rows_mut(0, d * d).copy_from_slice(hd.as_slice());
    y.rows_mut(d * d, d).copy_from(nu);
    y
}

fn unpack(y: &DVector<f64>, d: usize) -> (DMatrix<f64>, DVector<f64>) {
    (
        DMatrix::from_column_slice(d, d, &y.as_slice()[..d * d]),
        DVector::from_column_slice(&y.as_slice()[d * d..]),
    )
}

/// Maps a clock value on `segment` to `(t, dt/ds)`.
pub(crate) fn clock_to_time(tc: Option<&TimeChange>, segment: usize, s: f64) -> (f64, f64) {
    match tc {
        Some(tc) => (tc.tau(segment, s), tc.tau_dot(segment, s)),
        None => (s, 1.0),
    }
}

/// Integrates the backward ODEs over one segment of the grid.
///
/// Returns `(H†, ν)` at every knot of the segment in increasing time order;
/// the last entry is the given end value.
pub fn ode_segment(
    hd_end: &DMatrix<f64>,
    nu_end: &DVector<f64>,
    aux: &LinearAuxiliary,
    grid: &TimeGrid,
    segment: usize,
    tableau: &RkTableau,
) -> Result<Vec<(DMatrix<f64>, DVector<f64>)>> {
    let d = nu_end.len();
    if hd_end.iter().chain(nu_end.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Integration {
            t: grid.knots()[grid.boundary_knots()[segment + 1]],
            what: "non-finite end values".into(),
        });
    }
    let tc = grid.time_change();
    let rhs = |s: f64, y: &DVector<f64>| -> DVector<f64> {
        let (t, rate) = clock_to_time(tc, segment, s);
        let (hd, nu) = unpack(y, d);
        let b = aux.bmat(segment, t);
        let bh = &b * &hd;
        let dh = (&bh + bh.transpose() - aux.atilde(segment, t)) * rate;
        let dnu = (&b * nu + aux.beta(segment, t)) * rate;
        pack(&dh, &dnu)
    };
    let (k0, k1) = (grid.boundary_knots()[segment], grid.boundary_knots()[segment + 1]);
    let clock = grid.clock();
    let mut out = vec![(hd_end.clone(), nu_end.clone())];
    let mut y = pack(hd_end, nu_end);
    for k in (k0..k1).rev() {
        y = tableau
            .step(rhs, clock[k + 1], &y, clock[k] - clock[k + 1])
            .map_err(|e| match e {
                Error::Integration { what, .. } => Error::Integration {
                    t: grid.knots()[k],
                    what: format!("backward filter: {what}"),
                },
                other => other,
            })?;
        let (mut hd, nu) = unpack(&y, d);
        symmetrize_mut(&mut hd);
        y = pack(&hd, &nu);
        out.push((hd, nu));
    }
    out.reverse();
    Ok(out)
}

/// Runs the backward filter over the whole grid with the default tableau.
pub fn run_backward(
    schedule: &ObservationSchedule,
    aux: &LinearAuxiliary,
    grid: &TimeGrid,
) -> Result<(BackwardFilter, FilterAudit)> {
    run_backward_with(schedule, aux, grid, &RkTableau::default())
}

/// Runs the backward filter over the whole grid.
pub fn run_backward_with(
    schedule: &ObservationSchedule,
    aux: &LinearAuxiliary,
    grid: &TimeGrid,
    tableau: &RkTableau,
) -> Result<(BackwardFilter, FilterAudit)> {
    let d = schedule.dim();
    if aux.dim() != d {
        return Err(Error::Dimension(format!(
            "auxiliary dimension {} differs from observation dimension {d}",
            aux.dim()
        )));
    }
    let n_knots = grid.len();
    let last_knot = n_knots - 1;
    let mut jump_at: Vec<Option<usize>> = vec![None; n_knots];
    for (i, &k) in grid.obs_knots().iter().enumerate() {
        jump_at[k] = Some(i);
    }

    let mut nu = vec![DVector::zeros(d); n_knots];
    let mut hdagger = vec![DMatrix::zeros(d, d); n_knots];
    let mut records = Vec::with_capacity(schedule.len());

    let (hd_n, nu_n) = init_terminal(schedule)?;
    let eps = schedule.epsilon();
    records.push(JumpRecord {
        index: schedule.len() - 1,
        t: schedule.end(),
        prior: (eps > 0.0).then(|| (DMatrix::identity(d, d) / eps, DVector::zeros(d))),
        hdagger: hd_n.clone(),
        nu: nu_n.clone(),
    });
    nu[last_knot] = nu_n.clone();
    hdagger[last_knot] = hd_n.clone();

    let mut end = (hd_n, nu_n);
    let mut start_post = None;
    for seg in (0..grid.segments()).rev() {
        let values = ode_segment(&end.0, &end.1, aux, grid, seg, tableau)?;
        let k0 = grid.boundary_knots()[seg];
        for (j, (hd, v)) in values.iter().enumerate().take(values.len() - 1) {
            hdagger[k0 + j] = hd.clone();
            nu[k0 + j] = v.clone();
        }
        let (hd_plus, nu_plus) = values.into_iter().next().expect("segment has knots");
        end = match jump_at[k0] {
            Some(i) => {
                let obs = &schedule.observations()[i];
                let (hd, v) = observation_jump(&hd_plus, &nu_plus, obs)?;
                records.push(JumpRecord {
                    index: i,
                    t: obs.t,
                    prior: Some((hd_plus, nu_plus)),
                    hdagger: hd.clone(),
                    nu: v.clone(),
                });
                (hd, v)
            }
            None => (hd_plus, nu_plus),
        };
        if seg == 0 {
            start_post = Some(end.clone());
        }
    }
    records.reverse();
    let (hdagger0, nu0) = start_post.expect("grid has at least one segment");
    let factor0 = cholesky(&hdagger0, "H-dagger at the start")?.l();

    let mut h = Vec::with_capacity(n_knots);
    let mut f = Vec::with_capacity(n_knots);
    for k in 0..n_knots {
        let hk = spd_inverse(&hdagger[k], &format!("H-dagger at t = {}", grid.knots()[k]))?;
        f.push(&hk * &nu[k]);
        h.push(hk);
    }

    let tc = grid.time_change();
    let mut beta = Vec::with_capacity(n_knots);
    let mut bmat = Vec::with_capacity(n_knots);
    let mut atilde = Vec::with_capacity(n_knots);
    let mut rate = Vec::with_capacity(n_knots);
    for k in 0..n_knots {
        let seg = grid.segment_of_step(k.min(last_knot - 1));
        let t = grid.knots()[k];
        beta.push(aux.beta(seg, t));
        bmat.push(aux.bmat(seg, t));
        atilde.push(aux.atilde(seg, t));
        rate.push(if k == last_knot {
            0.0
        } else {
            clock_to_time(tc, seg, grid.clock()[k]).1
        });
    }
    if tc.is_none() {
        rate[last_knot] = 1.0;
    }

    Ok((
        BackwardFilter {
            grid: grid.clone(),
            dim: d,
            nu,
            hdagger,
            h,
            f,
            nu0,
            hdagger0,
            factor0,
            beta,
            bmat,
            atilde,
            rate,
        },
        FilterAudit { records },
    ))
}
