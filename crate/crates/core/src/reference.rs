//! Reference filter with growing dimension.
//!
//! All observations after `t` are stacked: `L̃(t)` maps the state at `t` to
//! the (noise free, auxiliary) mean of the stacked future observations,
//! `μ(t)` collects the contribution of `β̃`, and `M̃†(t)` is their covariance.
//! Backwards in time they solve
//!
//! ```text
//! dL̃ = -L̃ B̃ dt,    dM̃† = -L̃ ã L̃ᵀ dt,    dμ = -L̃ β̃ dt,
//! ```
//!
//! and every observation prepends its rows. `H̃ = L̃ᵀ M̃ L̃` and
//! `r̃(t, x) = L̃ᵀ M̃ (x_obs - μ - L̃ x)` must agree with the
//! constant-dimension filter; this module exists only to check that.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::filter::clock_to_time;
use crate::model::{LinearAuxiliary, Observation, ObservationSchedule, TimeGrid};
use crate::numerics::{spd_inverse, symmetrize_mut, RkTableau};

/// Stacked quantities at one knot.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedState {
    pub l: DMatrix<f64>,
    pub mdagger: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub x_obs: DVector<f64>,
}

impl StackedState {
    /// Number of stacked observation rows.
    pub fn stacked_dim(&self) -> usize {
        self.l.nrows()
    }

    /// Prepends an observation: `L̃ ← [L; L̃]`, `M̃† ← diag(Σ, M̃†)`, `μ ← [0; μ]`.
    fn prepend(&self, obs: &Observation) -> Self {
        let (m, d, big) = (obs.obs_dim(), self.l.ncols(), self.stacked_dim());
        let mut l = DMatrix::zeros(m + big, d);
        l.rows_mut(0, m).copy_from(&obs.l);
        l.rows_mut(m, big).copy_from(&self.l);
        let mut md = DMatrix::zeros(m + big, m + big);
        md.view_mut((0, 0), (m, m)).copy_from(obs.sigma.matrix());
        md.view_mut((m, m), (big, big)).copy_from(&self.mdagger);
        let mut mu = DVector::zeros(m + big);
        mu.rows_mut(m, big).copy_from(&self.mu);
        let mut x_obs = DVector::zeros(m + big);
        x_obs.rows_mut(0, m).copy_from(&obs.v);
        x_obs.rows_mut(m, big).copy_from(&self.x_obs);
        Self {
            l,
            mdagger: md,
            mu,
            x_obs,
        }
    }

    fn pack(&self) -> DVector<f64> {
        let mut y = Vec::with_capacity(self.l.len() + self.mdagger.len() + self.mu.len());
        y.extend_from_slice(self.l.as_slice());
        y.extend_from_slice(self.mdagger.as_slice());
        y.extend_from_slice(self.mu.as_slice());
        DVector::from_vec(y)
    }

    fn unpack(y: &DVector<f64>, big: usize, d: usize, x_obs: &DVector<f64>) -> Self {
        let s = y.as_slice();
        let (a, b) = (big * d, big * d + big * big);
        Self {
            l: DMatrix::from_column_slice(big, d, &s[..a]),
            mdagger: DMatrix::from_column_slice(big, big, &s[a..b]),
            mu: DVector::from_column_slice(&s[b..]),
            x_obs: x_obs.clone(),
        }
    }
}

/// Reference filter on a grid; knot values are right limits as in
/// [`crate::filter::BackwardFilter`], updated values at observation knots
/// are in `post_jump`.
#[derive(Debug, Clone)]
pub struct StackedFilterState {
    grid: TimeGrid,
    knots: Vec<StackedState>,
    post_jump: Vec<StackedState>,
}

impl StackedFilterState {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Right-limit state at knot `k`.
    pub fn state(&self, k: usize) -> &StackedState {
        &self.knots[k]
    }

    /// State just after the update at observation `i` (at `t_i` itself).
    pub fn post_jump(&self, i: usize) -> &StackedState {
        &self.post_jump[i]
    }
}

/// Terminal stacked state, with the artificial full observation when `ε > 0`.
fn terminal(schedule: &ObservationSchedule) -> StackedState {
    let d = schedule.dim();
    let eps = schedule.epsilon();
    let last = schedule.last();
    let base = if eps > 0.0 {
        StackedState {
            l: DMatrix::identity(d, d),
            mdagger: DMatrix::identity(d, d) / eps,
            mu: DVector::zeros(d),
            x_obs: DVector::zeros(d),
        }
    } else {
        StackedState {
            l: DMatrix::zeros(0, d),
            mdagger: DMatrix::zeros(0, 0),
            mu: DVector::zeros(0),
            x_obs: DVector::zeros(0),
        }
    };
    base.prepend(last)
}

/// Runs the reference filter with the default tableau.
pub fn run_reference(
    schedule: &ObservationSchedule,
    aux: &LinearAuxiliary,
    grid: &TimeGrid,
) -> Result<StackedFilterState> {
    run_reference_with(schedule, aux, grid, &RkTableau::default())
}

pub fn run_reference_with(
    schedule: &ObservationSchedule,
    aux: &LinearAuxiliary,
    grid: &TimeGrid,
    tableau: &RkTableau,
) -> Result<StackedFilterState> {
    let d = schedule.dim();
    let n_knots = grid.len();
    let mut jump_at: Vec<Option<usize>> = vec![None; n_knots];
    for (i, &k) in grid.obs_knots().iter().enumerate() {
        jump_at[k] = Some(i);
    }
    let end = terminal(schedule);
    let mut knots = vec![end.clone(); n_knots];
    let mut post_jump = vec![end.clone(); schedule.len()];
    let tc = grid.time_change();
    let clock = grid.clock();

    let mut current = end;
    for seg in (0..grid.segments()).rev() {
        let (k0, k1) = (grid.boundary_knots()[seg], grid.boundary_knots()[seg + 1]);
        let big = current.stacked_dim();
        let x_obs = current.x_obs.clone();
        let rhs = |s: f64, y: &DVector<f64>| -> DVector<f64> {
            let (t, rate) = clock_to_time(tc, seg, s);
            let st = StackedState::unpack(y, big, d, &x_obs);
            let dl = -(&st.l * aux.bmat(seg, t)) * rate;
            let dm = -(&st.l * aux.atilde(seg, t) * st.l.transpose()) * rate;
            let dmu = -(&st.l * aux.beta(seg, t)) * rate;
            StackedState {
                l: dl,
                mdagger: dm,
                mu: dmu,
                x_obs: x_obs.clone(),
            }
            .pack()
        };
        let mut y = current.pack();
        for k in (k0..k1).rev() {
            y = tableau
                .step(rhs, clock[k + 1], &y, clock[k] - clock[k + 1])
                .map_err(|e| match e {
                    Error::Integration { what, .. } => Error::Integration {
                        t: grid.knots()[k],
                        what: format!("reference filter: {what}"),
                    },
                    other => other,
                })?;
            let mut st = StackedState::unpack(&y, big, d, &x_obs);
            symmetrize_mut(&mut st.mdagger);
            y = st.pack();
            knots[k] = st;
        }
        current = match jump_at[k0] {
            Some(i) => {
                let updated = knots[k0].prepend(&schedule.observations()[i]);
                post_jump[i] = updated.clone();
                updated
            }
            None => knots[k0].clone(),
        };
    }
    post_jump[schedule.len() - 1] = knots[n_knots - 1].clone();
    Ok(StackedFilterState {
        grid: grid.clone(),
        knots,
        post_jump,
    })
}

/// `H̃ = L̃ᵀ M̃ L̃` and `r̃(x) = L̃ᵀ M̃ (x_obs - μ - L̃ x)` from a stacked state.
pub fn assemble_h_r(state: &StackedState, x: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let m = spd_inverse(&state.mdagger, "stacked covariance M-dagger").map_err(|e| Error::NotPositiveDefinite {
        what: format!("stacked covariance M-dagger is not positive definite ({e})"),
    })?;
    let lt_m = state.l.transpose() * m;
    let mut h = &lt_m * &state.l;
    symmetrize_mut(&mut h);
    let r = &lt_m * (&state.x_obs - &state.mu - &state.l * x);
    Ok((h, r))
}
