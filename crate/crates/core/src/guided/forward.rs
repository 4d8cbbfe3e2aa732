use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::filter::BackwardFilter;
use crate::model::{DiffusionModel, TimeGrid};
use crate::numerics::RngStream;

/// A simulated guided path with its inputs and `log Ψ`.
///
/// `noise` holds one Wiener increment per step, flattened step-major, with
/// variance equal to the step of the grid clock (`t` without a time change,
/// `s` with one). `states` is flattened knot-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedPath {
    pub x0: DVector<f64>,
    pub noise: Vec<f64>,
    pub states: Vec<f64>,
    pub log_psi: f64,
    dim: usize,
    noise_dim: usize,
}

impl GuidedPath {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// State at knot `k`.
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn knots(&self) -> usize {
        self.states.len() / self.dim
    }
}

/// Scratch buffers for [`simulate_into`]; one per thread.
#[derive(Debug, Clone)]
pub struct Workspace {
    x: DVector<f64>,
    u: DVector<f64>,
    b: DVector<f64>,
    r: DVector<f64>,
    tmp: DVector<f64>,
    sigma: DMatrix<f64>,
    a: DMatrix<f64>,
    diff: DMatrix<f64>,
}

impl Workspace {
    pub fn new(dim: usize, noise_dim: usize) -> Self {
        Self {
            x: DVector::zeros(dim),
            u: DVector::zeros(dim),
            b: DVector::zeros(dim),
            r: DVector::zeros(dim),
            tmp: DVector::zeros(dim),
            sigma: DMatrix::zeros(dim, noise_dim),
            a: DMatrix::zeros(dim, dim),
            diff: DMatrix::zeros(dim, dim),
        }
    }
}

/// Number of noise entries a path on `grid` needs.
pub fn noise_len(grid: &TimeGrid, noise_dim: usize) -> usize {
    grid.steps() * noise_dim
}

/// Fills `out` with Wiener increments for `grid` (variance = clock step).
pub fn fill_noise(grid: &TimeGrid, noise_dim: usize, rng: &mut RngStream, out: &mut [f64]) {
    rng.fill_standard_normal(out);
    let clock = grid.clock();
    for (k, chunk) in out.chunks_mut(noise_dim).enumerate() {
        let sd = (clock[k + 1] - clock[k]).sqrt();
        chunk.iter_mut().for_each(|z| *z *= sd);
    }
}

/// `G(t_k, x)` given `b(t_k, x)`, `a(t_k, x)` and `r̃(t_k, x)` in the workspace.
fn g_from_workspace(ws: &mut Workspace, filter: &BackwardFilter, k: usize) -> f64 {
    // b - b̃ = b - β̃ - B̃ x
    ws.tmp.copy_from(&ws.b);
    ws.tmp -= filter.aux_beta(k);
    ws.tmp.gemv(-1.0, filter.aux_bmat(k), &ws.x, 1.0);
    let drift_term = ws.tmp.dot(&ws.r);
    ws.diff.copy_from(&ws.a);
    ws.diff -= filter.aux_atilde(k);
    // tr((a - ã) H) with both symmetric is the Frobenius product
    let trace_h = ws.diff.dot(filter.h(k));
    ws.tmp.gemv(1.0, &ws.diff, &ws.r, 0.0);
    let quad = ws.r.dot(&ws.tmp);
    drift_term - 0.5 * (trace_h - quad)
}

/// `G(t_k, x) = (b - b̃)ᵀ r̃ - ½ tr((a - ã)(H - r̃ r̃ᵀ))` at knot `k`.
pub fn log_g_increment(model: &dyn DiffusionModel, filter: &BackwardFilter, k: usize, x: &DVector<f64>) -> f64 {
    let mut ws = Workspace::new(model.dim(), model.noise_dim());
    let t = filter.grid().knots()[k];
    ws.x.copy_from(x);
    model.drift_into(t, x, &mut ws.b);
    model.diffusion_into(t, x, &mut ws.a);
    ws.r.copy_from(filter.f(k));
    ws.r.gemv(-1.0, filter.h(k), x, 1.0);
    g_from_workspace(&mut ws, filter, k)
}

/// Simulates the guided proposal from `x0` driven by `noise` and writes the
/// states into `states`; returns `log Ψ`.
///
/// Plain grids use Euler on `X°`. Time-changed grids step
/// `U = (ν - X°)/τ̇` in the clock `s`, except for the last step of each
/// segment, which is an Euler step on `X°` (`τ̇` vanishes at the segment end).
/// `∫ G dt` is a left-endpoint sum aligned with the steps.
pub fn simulate_into(
    model: &dyn DiffusionModel,
    filter: &BackwardFilter,
    x0: &DVector<f64>,
    noise: &[f64],
    ws: &mut Workspace,
    states: &mut [f64],
) -> Result<f64> {
    let grid = filter.grid();
    let (d, dp) = (model.dim(), model.noise_dim());
    if x0.len() != d || noise.len() != noise_len(grid, dp) || states.len() != grid.len() * d {
        return Err(Error::Dimension(format!(
            "guided path: x0 has length {}, noise {}, states {}; expected {d}, {}, {}",
            x0.len(),
            noise.len(),
            states.len(),
            noise_len(grid, dp),
            grid.len() * d
        )));
    }
    let knots = grid.knots();
    let clock = grid.clock();
    let tc = grid.time_change();
    let const_sigma = model.constant_dispersion();
    ws.x.copy_from(x0);
    states[..d].copy_from_slice(x0.as_slice());
    if const_sigma {
        model.dispersion_into(knots[0], x0, &mut ws.sigma);
        ws.a.gemm(1.0, &ws.sigma, &ws.sigma.transpose(), 0.0);
    }
    let mut log_psi = 0.0;
    for k in 0..grid.steps() {
        let t = knots[k];
        if !const_sigma {
            model.dispersion_into(t, &ws.x, &mut ws.sigma);
            ws.a.gemm(1.0, &ws.sigma, &ws.sigma.transpose(), 0.0);
        }
        model.drift_into(t, &ws.x, &mut ws.b);
        ws.r.copy_from(filter.f(k));
        ws.r.gemv(-1.0, filter.h(k), &ws.x, 1.0);
        let g = g_from_workspace(ws, filter, k);
        let dw = DVectorView::from_slice(&noise[k * dp..(k + 1) * dp], dp);
        match tc {
            Some(_) if !grid.closes_segment(k) => {
                let ds = clock[k + 1] - clock[k];
                let rate = filter.rate(k);
                log_psi += g * rate * ds;
                // U = (ν - X)/τ̇
                ws.u.copy_from(filter.nu(k));
                ws.u -= &ws.x;
                ws.u /= rate;
                // dU = (B̃ν + β̃ - b - a r̃) ds - (τ̈/τ̇) U ds - σ/√τ̇ dW; the
                // linear τ̈ term is integrated exactly (factor τ̇_k/τ̇_{k+1}),
                // an Euler step on it shrinks ν - X by about half per segment
                ws.tmp.copy_from(filter.aux_beta(k));
                ws.tmp.gemv(1.0, filter.aux_bmat(k), filter.nu(k), 1.0);
                ws.tmp -= &ws.b;
                ws.tmp.gemv(-1.0, &ws.a, &ws.r, 1.0);
                ws.u.axpy(ds, &ws.tmp, 1.0);
                ws.u.gemv(-1.0 / rate.sqrt(), &ws.sigma, &dw, 1.0);
                // X = ν - τ̇_{k+1} U_{k+1} with U_{k+1} = (τ̇_k/τ̇_{k+1}) U
                ws.x.copy_from(filter.nu(k + 1));
                ws.x.axpy(-rate, &ws.u, 1.0);
            }
            _ => {
                let h = knots[k + 1] - t;
                let scale = if tc.is_some() {
                    (h / (clock[k + 1] - clock[k])).sqrt()
                } else {
                    1.0
                };
                log_psi += g * h;
                ws.b.gemv(1.0, &ws.a, &ws.r, 1.0);
                ws.x.axpy(h, &ws.b, 1.0);
                ws.x.gemv(scale, &ws.sigma, &dw, 1.0);
            }
        }
        if !ws.x.iter().all(|v| v.is_finite()) || !log_psi.is_finite() {
            return Err(Error::Proposal { t: knots[k + 1] });
        }
        states[(k + 1) * d..(k + 2) * d].copy_from_slice(ws.x.as_slice());
    }
    Ok(log_psi)
}

/// Simulates a guided path, allocating its buffers.
pub fn guided_forward(
    model: &dyn DiffusionModel,
    filter: &BackwardFilter,
    x0: DVector<f64>,
    noise: Vec<f64>,
) -> Result<GuidedPath> {
    let (d, dp) = (model.dim(), model.noise_dim());
    let mut ws = Workspace::new(d, dp);
    let mut states = vec![0.0; filter.grid().len() * d];
    let log_psi = simulate_into(model, filter, &x0, &noise, &mut ws, &mut states)?;
    Ok(GuidedPath {
        x0,
        noise,
        states,
        log_psi,
        dim: d,
        noise_dim: dp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::run_backward;
    use crate::model::{LinearAuxiliary, Observation, ObservationSchedule, OrnsteinUhlenbeck};

    fn ou() -> OrnsteinUhlenbeck {
        OrnsteinUhlenbeck::new(
            DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.3]),
            DVector::from_vec(vec![0.2, -0.1]),
            DMatrix::from_row_slice(2, 2, &[0.6, 0.0, 0.3, 0.4]),
        )
        .unwrap()
    }

    fn partial_schedule(sigma2: f64) -> ObservationSchedule {
        let l = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let times: Vec<f64> = (0..5).map(|i| 0.25 * i as f64).collect();
        let values: Vec<DVector<f64>> = [0.3, -0.2, 0.5, 0.1, -0.4]
            .iter()
            .map(|&v| DVector::from_element(1, v))
            .collect();
        ObservationSchedule::constant(&times, &values, &l, &(DMatrix::identity(1, 1) * sigma2), 1e-2).unwrap()
    }

    fn draw_x0(filter: &BackwardFilter, rng: &mut RngStream) -> DVector<f64> {
        let z = DVector::from_fn(filter.dim(), |_, _| rng.standard_normal());
        filter.initial_mean() + filter.initial_factor() * z
    }

    fn simulate(model: &dyn DiffusionModel, filter: &BackwardFilter, rng: &mut RngStream) -> GuidedPath {
        let x0 = draw_x0(filter, rng);
        let mut noise = vec![0.0; noise_len(filter.grid(), model.noise_dim())];
        fill_noise(filter.grid(), model.noise_dim(), rng, &mut noise);
        guided_forward(model, filter, x0, noise).unwrap()
    }

    #[test]
    fn matched_auxiliary_gives_zero_log_psi() {
        let model = ou();
        let s = partial_schedule(0.1);
        let mut rng = RngStream::new(1, 0);
        for grid in [
            TimeGrid::uniform(&s, 50).unwrap(),
            TimeGrid::time_changed(&s, 50).unwrap(),
        ] {
            let (filter, _) = run_backward(&s, &model.to_auxiliary(), &grid).unwrap();
            for _ in 0..50 {
                assert!(simulate(&model, &filter, &mut rng).log_psi.abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn deterministic_given_inputs() {
        let model = ou();
        let s = partial_schedule(0.1);
        let grid = TimeGrid::time_changed(&s, 20).unwrap();
        let aux = LinearAuxiliary::constant(
            DVector::zeros(2),
            DMatrix::zeros(2, 2),
            model.dispersion(0.0, &DVector::zeros(2)),
        )
        .unwrap();
        let (filter, _) = run_backward(&s, &aux, &grid).unwrap();
        let mut rng = RngStream::new(5, 1);
        let p = simulate(&model, &filter, &mut rng);
        let q = guided_forward(&model, &filter, p.x0.clone(), p.noise.clone()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.state(0), p.x0.as_slice());
    }

    #[test]
    fn log_psi_is_left_riemann_sum_of_g() {
        let model = ou();
        let s = partial_schedule(0.1);
        let aux = LinearAuxiliary::constant(DVector::zeros(2), DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let grid = TimeGrid::uniform(&s, 30).unwrap();
        let (filter, _) = run_backward(&s, &aux, &grid).unwrap();
        let p = simulate(&model, &filter, &mut RngStream::new(9, 0));
        let sum: f64 = (0..grid.steps())
            .map(|k| {
                let x = DVector::from_column_slice(p.state(k));
                log_g_increment(&model, &filter, k, &x) * grid.step_size(k)
            })
            .sum();
        assert!((sum - p.log_psi).abs() <= 1e-12 * (1.0 + sum.abs()));
        assert!(p.log_psi.abs() > 1e-3);
    }

    #[test]
    fn g_matches_dense_evaluation() {
        let mut rng = RngStream::new(17, 0);
        let mut rnd = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.standard_normal());
        let model = OrnsteinUhlenbeck::new(rnd(3, 3), rnd(3, 1).column(0).into(), rnd(3, 3)).unwrap();
        let aux = LinearAuxiliary::constant(rnd(3, 1).column(0).into(), rnd(3, 3) * 0.3, rnd(3, 3)).unwrap();
        let o = Observation::new(
            1.0,
            rnd(2, 3),
            DMatrix::identity(2, 2) * 0.5,
            rnd(2, 1).column(0).into(),
        )
        .unwrap();
        let s = ObservationSchedule::new(0.0, vec![o], 0.1).unwrap();
        let grid = TimeGrid::uniform(&s, 10).unwrap();
        let (filter, _) = run_backward(&s, &aux, &grid).unwrap();
        for k in [0, 4, 9] {
            let x: DVector<f64> = rnd(3, 1).column(0).into();
            let t = grid.knots()[k];
            let h = filter.hdagger(k).clone().try_inverse().unwrap();
            let r = &h * (filter.nu(k) - &x);
            let b = model.drift(t, &x);
            let bt = aux.drift(0, t, &x);
            let amat = model.diffusion(t, &x) - aux.atilde(0, t);
            let dense = (b - bt).dot(&r) - 0.5 * (amat * (&h - &r * r.transpose())).trace();
            let got = log_g_increment(&model, &filter, k, &x);
            assert!((got - dense).abs() <= 1e-12 * (1.0 + dense.abs()), "{got} vs {dense}");
        }
    }

    #[test]
    fn matched_diffusion_leaves_only_drift_term() {
        let model = ou();
        let aux = LinearAuxiliary::constant(
            DVector::zeros(2),
            DMatrix::zeros(2, 2),
            model.dispersion(0.0, &DVector::zeros(2)),
        )
        .unwrap();
        let s = partial_schedule(0.2);
        let grid = TimeGrid::uniform(&s, 10).unwrap();
        let (filter, _) = run_backward(&s, &aux, &grid).unwrap();
        let x = DVector::from_vec(vec![0.4, -0.9]);
        let r = filter.r(3, &x);
        let expected = model.drift(0.0, &x).dot(&r);
        assert!((log_g_increment(&model, &filter, 3, &x) - expected).abs() < 1e-12);
    }

    fn brownian() -> OrnsteinUhlenbeck {
        OrnsteinUhlenbeck::new(DMatrix::zeros(1, 1), DVector::zeros(1), DMatrix::identity(1, 1)).unwrap()
    }

    fn bridge_schedule(v: f64, sigma2: f64) -> ObservationSchedule {
        let o = Observation::new(
            1.0,
            DMatrix::identity(1, 1),
            DMatrix::from_element(1, 1, sigma2),
            DVector::from_element(1, v),
        )
        .unwrap();
        ObservationSchedule::new(0.0, vec![o], 0.0).unwrap()
    }

    #[test]
    fn zero_noise_bridge_step() {
        let (v, sigma2) = (2.0, 1e-9);
        let model = brownian();
        let s = bridge_schedule(v, sigma2);
        let grid = TimeGrid::uniform(&s, 10).unwrap();
        let (filter, _) = run_backward(&s, &model.to_auxiliary(), &grid).unwrap();
        let x0 = DVector::from_element(1, 0.5);
        let p = guided_forward(&model, &filter, x0, vec![0.0; 10]).unwrap();
        for k in [0, 3, 8] {
            let (t, x, h) = (grid.knots()[k], p.state(k)[0], grid.step_size(k));
            let expected = x + (v - x) * h / (1.0 - t + sigma2);
            assert!((p.state(k + 1)[0] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_path_when_started_at_nu() {
        // b = 0 = β̃, B̃ = 0, x0 = ν: r̃ stays zero and the path is flat
        let model = brownian();
        let s = bridge_schedule(0.7, 0.3);
        for grid in [
            TimeGrid::uniform(&s, 16).unwrap(),
            TimeGrid::time_changed(&s, 16).unwrap(),
        ] {
            let (filter, _) = run_backward(&s, &model.to_auxiliary(), &grid).unwrap();
            let x0 = filter.nu(0).clone();
            let p = guided_forward(&model, &filter, x0, vec![0.0; 16]).unwrap();
            assert!(p.states.iter().all(|&x| (x - 0.7).abs() < 1e-15));
            assert_eq!(p.log_psi, 0.0);
        }
    }

    #[test]
    fn bridge_mid_time_mean() {
        let (v, sigma2) = (1.5, 1e-4);
        let model = brownian();
        let s = bridge_schedule(v, sigma2);
        let grid = TimeGrid::uniform(&s, 100).unwrap();
        let (filter, _) = run_backward(&s, &model.to_auxiliary(), &grid).unwrap();
        let mut rng = RngStream::new(3, 0);
        let mut ws = Workspace::new(1, 1);
        let mut noise = vec![0.0; 100];
        let mut states = vec![0.0; 101];
        let x0 = DVector::zeros(1);
        let n = 100_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            fill_noise(&grid, 1, &mut rng, &mut noise);
            simulate_into(&model, &filter, &x0, &noise, &mut ws, &mut states).unwrap();
            sum += states[50];
            sum2 += states[50] * states[50];
        }
        let mean = sum / n as f64;
        let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
        let exact = 0.5 * v / (1.0 + sigma2);
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn terminal_state_near_terminal_filter_mean() {
        let model = ou();
        let s = partial_schedule(0.05);
        let grid = TimeGrid::uniform(&s, 40).unwrap();
        let (filter, _) = run_backward(&s, &model.to_auxiliary(), &grid).unwrap();
        let last = grid.len() - 1;
        let sd = filter.hdagger(last).diagonal().map(f64::sqrt);
        let mut rng = RngStream::new(11, 0);
        let inside = (0..1000)
            .filter(|_| {
                let p = simulate(&model, &filter, &mut rng);
                (0..2).all(|j| (p.state(last)[j] - filter.nu(last)[j]).abs() <= 4.0 * sd[j])
            })
            .count();
        assert!(inside >= 990, "{inside}");
    }

    #[test]
    fn time_changed_path_starts_at_x0() {
        let model = ou();
        let s = partial_schedule(0.1);
        let grid = TimeGrid::time_changed(&s, 25).unwrap();
        let (filter, _) = run_backward(&s, &model.to_auxiliary(), &grid).unwrap();
        let p = simulate(&model, &filter, &mut RngStream::new(2, 2));
        assert_eq!(p.state(0), p.x0.as_slice());
        assert!(p.states.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn noisy_endpoint_variance_in_both_modes() {
        // Brownian motion from 0 observed at 1 with noise 0.05: X_1 | v has variance 0.05/1.05
        let model = brownian();
        let s = bridge_schedule(0.0, 0.05);
        let exact = 0.05 / 1.05;
        // plain Euler needs a much finer grid near a noisy observation
        for grid in [
            TimeGrid::uniform(&s, 1000).unwrap(),
            TimeGrid::time_changed(&s, 100).unwrap(),
        ] {
            let (filter, _) = run_backward(&s, &model.to_auxiliary(), &grid).unwrap();
            let steps = grid.steps();
            let mut rng = RngStream::new(5, 0);
            let mut ws = Workspace::new(1, 1);
            let mut noise = vec![0.0; steps];
            let mut states = vec![0.0; steps + 1];
            let x0 = DVector::zeros(1);
            let n = 40_000;
            let mut sum2 = 0.0;
            for _ in 0..n {
                fill_noise(&grid, 1, &mut rng, &mut noise);
                simulate_into(&model, &filter, &x0, &noise, &mut ws, &mut states).unwrap();
                sum2 += states[steps] * states[steps];
            }
            let var = sum2 / n as f64;
            assert!((var / exact - 1.0).abs() < 0.05, "{var} vs {exact}");
        }
    }
}
