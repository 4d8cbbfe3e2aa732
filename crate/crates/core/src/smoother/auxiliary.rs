//! Choices of the linear auxiliary process.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::filter::{init_terminal, observation_jump, ode_segment};
use crate::model::{DiffusionModel, LinearAuxiliary, ObservationSchedule, PiecewiseLinear, TimeFunction, TimeGrid};
use crate::numerics::RkTableau;

/// Method A: `σ̃ = σ(t, x)` at an anchor point, `B̃ = 0`, `β̃ = 0`.
pub fn aux_method_a(model: &dyn DiffusionModel, t: f64, anchor: &DVector<f64>) -> Result<LinearAuxiliary> {
    let d = model.dim();
    LinearAuxiliary::constant(DVector::zeros(d), DMatrix::zeros(d, d), model.dispersion(t, anchor))
}

fn segment_table<T: crate::model::Lerp>(grid: &TimeGrid, seg: usize, values: Vec<T>) -> Result<PiecewiseLinear<T>> {
    let (k0, k1) = (grid.boundary_knots()[seg], grid.boundary_knots()[seg + 1]);
    PiecewiseLinear::new(grid.knots()[k0..=k1].to_vec(), values)
}

/// Method B: `B̃ = 0` and `β̃(t) = b(t, x(t))` along the backward flow of
/// `dx = b dt` started on each segment at the filter mean `ν` of its right
/// end; `σ̃` is `σ` at that anchor. Segments are processed from the last one
/// backwards, interleaved with the observation updates of `ν`.
///
/// If the flow blows up on a segment, that segment falls back to `β̃ = 0`.
pub fn aux_method_b(
    model: &dyn DiffusionModel,
    schedule: &ObservationSchedule,
    grid: &TimeGrid,
    tableau: &RkTableau,
) -> Result<LinearAuxiliary> {
    let (d, dp) = (model.dim(), model.noise_dim());
    let knots = grid.knots();
    let n_seg = grid.segments();
    let mut jump_at = vec![None; grid.len()];
    for (i, &k) in grid.obs_knots().iter().enumerate() {
        jump_at[k] = Some(i);
    }
    let mut beta_tables = Vec::with_capacity(n_seg);
    let mut sigma_tables = Vec::with_capacity(n_seg);
    let (mut hd, mut nu) = init_terminal(schedule)?;
    for seg in (0..n_seg).rev() {
        let (k0, k1) = (grid.boundary_knots()[seg], grid.boundary_knots()[seg + 1]);
        let sigma = model.dispersion(knots[k1], &nu);
        let mut flow = vec![nu.clone()];
        let mut x = nu.clone();
        let scale = 1e8 * (1.0 + nu.amax());
        for k in (k0..k1).rev() {
            match tableau.step(|t, y| model.drift(t, y), knots[k + 1], &x, knots[k] - knots[k + 1]) {
                Ok(y) if y.amax() < scale => x = y,
                _ => break,
            }
            flow.push(x.clone());
        }
        let betas: Vec<DVector<f64>> = if flow.len() == k1 - k0 + 1 {
            flow.reverse();
            flow.iter()
                .zip(&knots[k0..=k1])
                .map(|(x, &t)| model.drift(t, x))
                .collect()
        } else {
            warn!(
                "method B: backward flow blew up on [{}, {}]; using beta = 0 there",
                knots[k0], knots[k1]
            );
            vec![DVector::zeros(d); k1 - k0 + 1]
        };
        let beta_tab = segment_table(grid, seg, betas)?;
        let sigma_tab = PiecewiseLinear::new(vec![knots[k1]], vec![sigma])?;
        let seg_aux = LinearAuxiliary::new(
            d,
            dp,
            TimeFunction::Segmented(vec![beta_tab.clone()]),
            TimeFunction::Constant(DMatrix::zeros(d, d)),
            TimeFunction::Segmented(vec![sigma_tab.clone()]),
        )?;
        let values = ode_segment(&hd, &nu, &seg_aux, grid, seg, tableau)?;
        (hd, nu) = values.into_iter().next().expect("segment has knots");
        if let Some(i) = jump_at[k0] {
            (hd, nu) = observation_jump(&hd, &nu, &schedule.observations()[i])?;
        }
        beta_tables.push(beta_tab);
        sigma_tables.push(sigma_tab);
    }
    beta_tables.reverse();
    sigma_tables.reverse();
    LinearAuxiliary::new(
        d,
        dp,
        TimeFunction::Segmented(beta_tables),
        TimeFunction::Constant(DMatrix::zeros(d, d)),
        TimeFunction::Segmented(sigma_tables),
    )
}

/// Method C refresh: linearise `b` around the path `mean` (knot-major,
/// `grid.len() × d`): `B̃ = J_b(t, x̄)`, `β̃ = b(t, x̄) - J_b(t, x̄) x̄`, keeping `σ̃`.
pub fn aux_method_c(
    model: &dyn DiffusionModel,
    grid: &TimeGrid,
    mean: &[f64],
    sigma: &TimeFunction<DMatrix<f64>>,
) -> Result<LinearAuxiliary> {
    let d = model.dim();
    if mean.len() != grid.len() * d {
        return Err(Error::Dimension(format!(
            "mean path has {} entries, expected {}",
            mean.len(),
            grid.len() * d
        )));
    }
    let mut jac = Vec::with_capacity(grid.len());
    let mut beta = Vec::with_capacity(grid.len());
    for (k, &t) in grid.knots().iter().enumerate() {
        let x = DVector::from_column_slice(&mean[k * d..(k + 1) * d]);
        let j = model.jacobian(t, &x);
        let b = model.drift(t, &x) - &j * &x;
        if !j.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(Error::Integration {
                t,
                what: "non-finite drift linearisation".into(),
            });
        }
        jac.push(j);
        beta.push(b);
    }
    let mut beta_tables = Vec::with_capacity(grid.segments());
    let mut bmat_tables = Vec::with_capacity(grid.segments());
    for seg in 0..grid.segments() {
        let (k0, k1) = (grid.boundary_knots()[seg], grid.boundary_knots()[seg + 1]);
        beta_tables.push(segment_table(grid, seg, beta[k0..=k1].to_vec())?);
        bmat_tables.push(segment_table(grid, seg, jac[k0..=k1].to_vec())?);
    }
    LinearAuxiliary::new(
        d,
        model.noise_dim(),
        TimeFunction::Segmented(beta_tables),
        TimeFunction::Segmented(bmat_tables),
        sigma.clone(),
    )
}
