//! Self-checks against independent oracles, grouped into levels of
//! increasing cost.

mod oracles;

pub use oracles::{
    dense_gaussian_smoother, information_form_update, rts_smoother, EulerLinearModel, GaussianMarginals,
};

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::filter::{run_backward_with, BackwardFilter, FilterAudit};
use crate::guided::guided_forward;
use crate::model::{
    DiffusionModel, LinearAuxiliary, Lorenz, Observation, ObservationSchedule, OrnsteinUhlenbeck, Pendulum, TimeGrid,
};
use crate::numerics::{spd_inverse, RkTableau, RngStream};
use crate::reference::{assemble_h_r, run_reference_with, StackedState};
use crate::simulate::{equally_spaced, euler_maruyama, observe, SimulatedPath};
use crate::smoother::{
    aux_method_a, initial_auxiliary, pcn_propose, run_smoother, AuxMethod, ProposalBuffers, SmootherConfig,
    SmoothingResult,
};

/// Result of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    /// Threshold the measured value is compared against.
    pub tolerance: f64,
    pub measured: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    /// Passes when `measured <= tolerance`.
    pub fn at_most(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            tolerance,
            measured,
            passed: measured <= tolerance,
            detail: detail.into(),
        }
    }

    /// Passes when `measured >= tolerance`.
    pub fn at_least(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            tolerance,
            measured,
            passed: measured >= tolerance,
            detail: detail.into(),
        }
    }

    fn failed(name: &str, err: &Error) -> Self {
        Self {
            name: name.into(),
            tolerance: f64::NAN,
            measured: f64::NAN,
            passed: false,
            detail: format!("error: {err}"),
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: measured {:.6e}, tolerance {:.6e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        )?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    /// Deterministic oracles, seconds.
    Fast,
    /// Adds the Monte-Carlo comparisons on the linear model, minutes.
    Full,
    /// Adds the Lorenz and pendulum runs.
    Paper,
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fast" => Ok(Self::Fast),
            "full" => Ok(Self::Full),
            "paper" => Ok(Self::Paper),
            other => Err(Error::Config(format!(
                "unknown verify level `{other}` (fast, full, paper)"
            ))),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fast => "fast",
            Self::Full => "full",
            Self::Paper => "paper",
        })
    }
}

/// Runs every check of `level` and the levels below it.
pub fn run_level(level: Level, seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let problems = random_problems(20, seed);
    out.extend(check_cross_filter(&problems));
    out.push(check_conjugacy(&problems));
    out.push(check_g_reimplementation(seed));
    out.push(check_ode_order());
    out.push(check_zero_noise());
    out.extend(check_pcn(seed, 100_000));
    if level >= Level::Full {
        out.extend(check_rts(seed, 20_000));
        out.push(check_time_change(seed, 20_000));
        out.push(check_rts_mismatched(seed, 200_000));
    }
    if level >= Level::Paper {
        out.extend(check_lorenz(seed, 100_000));
        out.extend(check_pendulum(seed, 100_000));
    }
    out
}

// ---------------------------------------------------------------------------
// Monte-Carlo helpers

/// Standard error of the mean of an autocorrelated series by non-overlapping
/// batch means (`batches` batches; the remainder at the end is dropped).
pub fn batch_means_se(series: &[f64], batches: usize) -> f64 {
    let size = series.len() / batches;
    if size == 0 || batches < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = series
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

/// Mean, sample sd and their batch-means standard errors for one series.
/// The sd error uses the delta method on the squared deviations.
#[derive(Debug, Clone, Copy)]
pub struct SeriesSummary {
    pub mean: f64,
    pub sd: f64,
    pub mean_se: f64,
    pub sd_se: f64,
}

pub fn summarize_series(series: &[f64], batches: usize) -> SeriesSummary {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let sq: Vec<f64> = series.iter().map(|x| (x - mean).powi(2)).collect();
    let var = sq.iter().sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    SeriesSummary {
        mean,
        sd,
        mean_se: batch_means_se(series, batches),
        sd_se: batch_means_se(&sq, batches) / (2.0 * sd),
    }
}

/// Values of component `j` of a trace after `burn_in`.
fn trace_component(result: &SmoothingResult, trace: usize, j: usize, burn_in: usize) -> Vec<f64> {
    let tr = &result.traces[trace];
    tr.iterations
        .iter()
        .enumerate()
        .filter(|(_, &it)| it > burn_in)
        .map(|(row, _)| tr.values[row * result.dim + j])
        .collect()
}

// ---------------------------------------------------------------------------
// Random linear problems

/// A random linear-Gaussian filtering problem.
#[derive(Debug, Clone)]
pub struct RandomProblem {
    pub schedule: ObservationSchedule,
    pub aux: LinearAuxiliary,
    pub grid: TimeGrid,
}

fn normal_matrix(rng: &mut RngStream, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.standard_normal())
}

/// Draws a problem with `d ≤ 4`, `n ≤ 3` observations, random SPD `Σ_i`,
/// random `L_i` with `m_i ≤ d` rows and a random constant linear auxiliary.
/// `ε = 0.1` whenever the last observation is partial.
pub fn random_problem(rng: &mut RngStream, steps_per_segment: usize) -> Result<RandomProblem> {
    let d = rng.random_range(1..=4usize);
    let n = rng.random_range(1..=3usize);
    let at_start = rng.random_bool(0.5);
    let mut t = 0.0;
    let mut obs = Vec::with_capacity(n);
    let mut last_m = d;
    for i in 0..n {
        if !(at_start && i == 0) {
            t += rng.random_range(0.2..0.5);
        }
        let m = rng.random_range(1..=d);
        last_m = m;
        let l = normal_matrix(rng, m, d, 1.0);
        let a = normal_matrix(rng, m, m, 0.7);
        let sigma = &a * a.transpose() / m as f64 + DMatrix::identity(m, m) * 0.2;
        let v = normal_matrix(rng, m, 1, 1.0).column(0).into_owned();
        obs.push(Observation::new(t, l, crate::numerics::symmetrize(&sigma), v)?);
    }
    let epsilon = if last_m < d { 0.1 } else { 0.0 };
    let schedule = ObservationSchedule::new(0.0, obs, epsilon)?;
    let dp = rng.random_range(1..=d);
    let aux = LinearAuxiliary::constant(
        normal_matrix(rng, d, 1, 1.0).column(0).into_owned(),
        normal_matrix(rng, d, d, 0.5),
        normal_matrix(rng, d, dp, 0.6),
    )?;
    let grid = if rng.random_bool(0.5) {
        TimeGrid::time_changed(&schedule, steps_per_segment)?
    } else {
        TimeGrid::uniform(&schedule, steps_per_segment)?
    };
    Ok(RandomProblem { schedule, aux, grid })
}

pub fn random_problems(count: usize, seed: u64) -> Vec<RandomProblem> {
    let mut rng = RngStream::new(seed, 11);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if let Ok(p) = random_problem(&mut rng, 400) {
            out.push(p);
        }
    }
    out
}

/// Constant-dimension filter against the stacked reference filter: sup over
/// knots (and post-update states) of the difference in `H` and in `r̃` at
/// random points. Both use the fourth-order tableau.
pub fn check_cross_filter(problems: &[RandomProblem]) -> Vec<CheckOutcome> {
    let tableau = RkTableau::ralston4();
    let mut rng = RngStream::new(0, 12);
    let mut h_err: f64 = 0.0;
    let mut r_err: f64 = 0.0;
    for (p_idx, p) in problems.iter().enumerate() {
        let mut run = || -> Result<(f64, f64)> {
            let (filter, audit) = run_backward_with(&p.schedule, &p.aux, &p.grid, &tableau)?;
            let reference = run_reference_with(&p.schedule, &p.aux, &p.grid, &tableau)?;
            let d = p.schedule.dim();
            let (mut he, mut re) = (0.0f64, 0.0f64);
            let mut compare =
                |h_bf: &DMatrix<f64>, r_bf: &dyn Fn(&DVector<f64>) -> DVector<f64>, state: &StackedState| {
                    for _ in 0..3 {
                        let x = DVector::from_fn(d, |_, _| 2.0 * rng.standard_normal());
                        let (h_ref, r_ref) = assemble_h_r(state, &x)?;
                        he = he.max((h_bf - h_ref).amax());
                        re = re.max((r_bf(&x) - r_ref).amax());
                    }
                    Ok::<(), Error>(())
                };
            for k in 0..p.grid.len() {
                compare(filter.h(k), &|x| filter.r(k, x), reference.state(k))?;
            }
            for (i, rec) in audit.records.iter().enumerate() {
                let h = spd_inverse(&rec.hdagger, "updated H-dagger")?;
                let nu = rec.nu.clone();
                compare(&h, &|x| &h * (&nu - x), reference.post_jump(i))?;
            }
            Ok((he, re))
        };
        match run() {
            Ok((he, re)) => {
                h_err = h_err.max(he);
                r_err = r_err.max(re);
            }
            Err(e) => {
                let name = format!("cross-filter problem {p_idx}");
                return vec![CheckOutcome::failed(&name, &e)];
            }
        }
    }
    let detail = format!("{} random problems", problems.len());
    vec![
        CheckOutcome::at_most("cross-filter H", h_err, 1e-8, detail.clone()),
        CheckOutcome::at_most("cross-filter r", r_err, 1e-8, detail),
    ]
}

/// Every observation update of the backward filter against the
/// information-form Gaussian posterior (relative to the size of the result).
pub fn check_conjugacy(problems: &[RandomProblem]) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for p in problems {
        let audit: FilterAudit = match run_backward_with(&p.schedule, &p.aux, &p.grid, &RkTableau::default()) {
            Ok((_, a)) => a,
            Err(e) => return CheckOutcome::failed("jump conjugacy", &e),
        };
        for rec in &audit.records {
            let Some((hd_plus, nu_plus)) = &rec.prior else { continue };
            // the terminal record's prior is the artificial observation
            let obs = &p.schedule.observations()[rec.index];
            match information_form_update(nu_plus, hd_plus, obs) {
                Ok((nu, hd)) => {
                    let scale_h = hd.amax().max(1.0);
                    let scale_n = nu.amax().max(1.0);
                    worst = worst
                        .max((&rec.hdagger - hd).amax() / scale_h)
                        .max((&rec.nu - nu).amax() / scale_n);
                    count += 1;
                }
                Err(e) => return CheckOutcome::failed("jump conjugacy", &e),
            }
        }
    }
    CheckOutcome::at_most("jump conjugacy", worst, 1e-10, format!("{count} updates"))
}

/// `log Ψ` from the guided simulation against an independent dense evaluation
/// of `G = (b - b̃)ᵀ r̃ - ½ [tr((a - ã) H) - r̃ᵀ (a - ã) r̃]` summed along the path.
pub fn check_g_reimplementation(seed: u64) -> CheckOutcome {
    let run = || -> Result<f64> {
        let model = Lorenz::classic();
        let mut rng = RngStream::new(seed, 13);
        let x0 = DVector::from_vec(vec![1.508870, -1.531271, 25.46091]);
        let path = euler_maruyama(&model, &x0, 0.0, 0.4, 5000, &mut rng)?;
        let times = equally_spaced(0.0, 0.04, 11);
        let schedule = observe(
            &path,
            &times,
            &DMatrix::identity(3, 3),
            &DMatrix::identity(3, 3),
            5e-4,
            &mut rng,
        )?;
        let mut worst: f64 = 0.0;
        for (method, time_change) in [(AuxMethod::A, false), (AuxMethod::B, true), (AuxMethod::B, false)] {
            let mut config = SmootherConfig::for_method(method);
            config.steps_per_segment = 20;
            config.time_change = time_change;
            let aux = initial_auxiliary(&model, &schedule, &config, None)?;
            let schedule = schedule.with_epsilon(config.epsilon)?;
            let grid = config.grid(&schedule)?;
            let (filter, _) = run_backward_with(&schedule, &aux, &grid, &config.tableau)?;
            let x0 = filter.initial_mean().clone();
            let mut noise = vec![0.0; crate::guided::noise_len(&grid, 3)];
            crate::guided::fill_noise(&grid, 3, &mut rng, &mut noise);
            let guided = guided_forward(&model, &filter, x0, noise)?;
            let dense = dense_log_psi(&model, &filter, &guided.states);
            worst = worst.max((guided.log_psi - dense).abs() / dense.abs().max(1.0));
        }
        Ok(worst)
    };
    match run() {
        Ok(w) => CheckOutcome::at_most("G re-implementation", w, 1e-10, "Lorenz, methods A and B"),
        Err(e) => CheckOutcome::failed("G re-implementation", &e),
    }
}

fn dense_log_psi(model: &dyn DiffusionModel, filter: &BackwardFilter, states: &[f64]) -> f64 {
    let grid = filter.grid();
    let d = model.dim();
    let mut total = 0.0;
    for k in 0..grid.steps() {
        let t = grid.knots()[k];
        let x = DVector::from_column_slice(&states[k * d..(k + 1) * d]);
        let b = model.drift(t, &x);
        let bt = filter.aux_bmat(k) * &x + filter.aux_beta(k);
        let a = model.diffusion(t, &x);
        let diff = a - filter.aux_atilde(k);
        let h = filter.h(k);
        let r = h * (filter.nu(k) - &x);
        let g = (b - bt).dot(&r) - 0.5 * ((&diff * h).trace() - r.dot(&(&diff * &r)));
        let weight = match grid.time_change() {
            Some(_) if !grid.closes_segment(k) => filter.rate(k) * (grid.clock()[k + 1] - grid.clock()[k]),
            _ => grid.step_size(k),
        };
        total += g * weight;
    }
    total
}

/// Scalar `dX = B X dt + σ dW` observed once at `T = 1`: `H†(0)` against
/// the closed form for `h ∈ {1e-2, 5e-3, 2.5e-3}`; measured value is the
/// smaller of the two observed convergence slopes.
pub fn check_ode_order() -> CheckOutcome {
    let (b, a, sigma2) = (0.8f64, 1.3f64, 0.5f64);
    let exact = (-2.0 * b).exp() * (sigma2 - a / (2.0 * b)) + a / (2.0 * b);
    let run = || -> Result<Vec<f64>> {
        let obs = Observation::new(
            1.0,
            DMatrix::identity(1, 1),
            DMatrix::from_element(1, 1, sigma2),
            DVector::from_element(1, 0.3),
        )?;
        let schedule = ObservationSchedule::new(0.0, vec![obs], 0.0)?;
        let aux = LinearAuxiliary::constant(
            DVector::zeros(1),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, a.sqrt()),
        )?;
        [100usize, 200, 400]
            .iter()
            .map(|&steps| {
                let grid = TimeGrid::uniform(&schedule, steps)?;
                let (filter, _) = run_backward_with(&schedule, &aux, &grid, &RkTableau::default())?;
                Ok((filter.hdagger(0)[(0, 0)] - exact).abs())
            })
            .collect()
    };
    match run() {
        Ok(errs) => {
            let slope = (errs[0] / errs[1]).log2().min((errs[1] / errs[2]).log2());
            CheckOutcome::at_least(
                "ODE convergence order",
                slope,
                1.9,
                format!("errors {:.3e}, {:.3e}, {:.3e}", errs[0], errs[1], errs[2]),
            )
        }
        Err(e) => CheckOutcome::failed("ODE convergence order", &e),
    }
}

/// Full observation `L = I` with `Σ = 10⁻ᵏ I`, `k = 2, 4, 6`: after the update
/// `‖ν(S) - v‖` and `‖H†(S)‖` must both shrink monotonically. Measured value
/// is the largest ratio of consecutive values.
pub fn check_zero_noise() -> CheckOutcome {
    let v = DVector::from_vec(vec![0.7, -0.4]);
    let run = || -> Result<(Vec<f64>, Vec<f64>)> {
        let aux = LinearAuxiliary::constant(
            DVector::from_vec(vec![0.2, 0.1]),
            DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.3]),
            DMatrix::identity(2, 2) * 0.8,
        )?;
        let (mut dist, mut size) = (Vec::new(), Vec::new());
        for k in [2, 4, 6] {
            let sigma = DMatrix::identity(2, 2) * 10f64.powi(-k);
            let obs = vec![
                Observation::new(0.5, DMatrix::identity(2, 2), sigma, v.clone())?,
                Observation::new(
                    1.0,
                    DMatrix::identity(2, 2),
                    DMatrix::identity(2, 2),
                    DVector::from_vec(vec![-1.0, 2.0]),
                )?,
            ];
            let schedule = ObservationSchedule::new(0.0, obs, 0.0)?;
            let grid = TimeGrid::uniform(&schedule, 50)?;
            let (_, audit) = run_backward_with(&schedule, &aux, &grid, &RkTableau::default())?;
            let rec = audit
                .records
                .iter()
                .find(|r| r.index == 0)
                .expect("every observation has a record");
            dist.push((&rec.nu - &v).norm());
            size.push(rec.hdagger.norm());
        }
        Ok((dist, size))
    };
    match run() {
        Ok((dist, size)) => {
            let ratio = dist
                .windows(2)
                .chain(size.windows(2))
                .map(|w| w[1] / w[0])
                .fold(0.0, f64::max);
            CheckOutcome::at_most(
                "zero-noise limit",
                ratio,
                1.0 - 1e-12,
                format!("|nu - v| = {}, |H-dagger| = {}", sci(&dist), sci(&size)),
            )
        }
        Err(e) => CheckOutcome::failed("zero-noise limit", &e),
    }
}

fn sci(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

// ---------------------------------------------------------------------------
// Linear-Gaussian Monte-Carlo checks

/// The linear test model: `d = 2` rotation-damped OU.
pub fn oracle_model() -> OrnsteinUhlenbeck {
    OrnsteinUhlenbeck::new(
        DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.3]),
        DVector::from_vec(vec![0.1, 0.0]),
        DMatrix::identity(2, 2) * 0.5,
    )
    .expect("valid model")
}

/// Ten observations of the first coordinate at `0, 0.1, …, 0.9` with noise
/// variance `obs_var`, simulated from [`oracle_model`].
pub fn oracle_problem(obs_var: f64, seed: u64) -> Result<(OrnsteinUhlenbeck, ObservationSchedule, SimulatedPath)> {
    let model = oracle_model();
    let mut rng = RngStream::new(seed, 14);
    let path = euler_maruyama(&model, &DVector::from_vec(vec![0.5, -0.5]), 0.0, 0.9, 9000, &mut rng)?;
    let times = equally_spaced(0.0, 0.1, 10);
    let l = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let schedule = observe(&path, &times, &l, &DMatrix::from_element(1, 1, obs_var), 5e-4, &mut rng)?;
    Ok((model, schedule, path))
}

fn oracle_config(iterations: usize, seed: u64, schedule: &ObservationSchedule, time_change: bool) -> SmootherConfig {
    let mut config = SmootherConfig::for_method(AuxMethod::A);
    config.iterations = iterations;
    config.alpha = 5.0;
    // fine enough that plain Euler near the low-noise observations is
    // unbiased at the Monte-Carlo scale
    config.steps_per_segment = 400;
    config.burn_in = iterations / 20;
    config.save_every = 0;
    config.trace_times = schedule.observations().iter().map(|o| o.t).collect();
    config.seed = seed;
    config.time_change = time_change;
    config
}

const BATCHES: usize = 50;

/// Matched auxiliary on the linear model against the exact smoother on the
/// same Euler grid: every update accepted with `|Δ log Ψ| ≤ 1e-10`, and the
/// posterior mean and sd at each observation knot within 3 Monte-Carlo
/// standard errors (batch means). Measured value is the largest z-score.
pub fn check_rts(seed: u64, iterations: usize) -> Vec<CheckOutcome> {
    let run = || -> Result<(f64, f64, f64)> {
        let (model, schedule, _) = oracle_problem(0.1, seed)?;
        let config = oracle_config(iterations, seed, &schedule, false);
        let result = run_smoother(&model, &schedule, &model.to_auxiliary(), &config, 0)?;
        let max_log_psi = result.acceptance.iter().map(|r| r.log_psi.abs()).fold(0.0, f64::max);
        let grid = config.grid(&schedule.with_epsilon(config.epsilon)?)?;
        let euler = EulerLinearModel {
            bmat: &model.bmat,
            beta: &model.beta,
            sigma: &model.sigma,
        };
        let exact = rts_smoother(&euler, &schedule.with_epsilon(config.epsilon)?, &grid, 1e6)?;
        let mut z_mean: f64 = 0.0;
        let mut z_sd: f64 = 0.0;
        for (i, tr) in result.traces.iter().enumerate() {
            for j in 0..2 {
                let s = summarize_series(&trace_component(&result, i, j, config.burn_in), BATCHES);
                let m = exact.mean[tr.knot][j];
                let sd = exact.cov[tr.knot][(j, j)].sqrt();
                z_mean = z_mean.max((s.mean - m).abs() / s.mean_se);
                z_sd = z_sd.max((s.sd - sd).abs() / s.sd_se);
            }
        }
        let rejected = (result.iterations - result.accepted) as f64;
        Ok((
            rejected + if max_log_psi <= 1e-10 { 0.0 } else { max_log_psi },
            z_mean,
            z_sd,
        ))
    };
    match run() {
        Ok((rejected, z_mean, z_sd)) => vec![
            CheckOutcome::at_most(
                "matched auxiliary accepts all",
                rejected,
                0.0,
                "rejections plus any |log Psi| above 1e-10",
            ),
            CheckOutcome::at_most("RTS posterior mean", z_mean, 3.0, "max |z| over observation knots"),
            CheckOutcome::at_most("RTS posterior sd", z_sd, 3.0, "max |z| over observation knots"),
        ],
        Err(e) => vec![CheckOutcome::failed("RTS equivalence", &e)],
    }
}

/// Method-A auxiliary (`B̃ = 0`, `β̃ = 0`) on the linear model: the
/// likelihood ratio is no longer constant, and the posterior mean and sd at
/// each observation knot must still match the exact smoother within 3
/// Monte-Carlo standard errors. Measured value is the largest z-score.
pub fn check_rts_mismatched(seed: u64, iterations: usize) -> CheckOutcome {
    let run = || -> Result<(f64, f64)> {
        let (model, schedule, _) = oracle_problem(0.1, seed)?;
        let config = oracle_config(iterations, seed, &schedule, false);
        let aux = aux_method_a(&model, schedule.start(), &DVector::zeros(2))?;
        let result = run_smoother(&model, &schedule, &aux, &config, 0)?;
        let eps_schedule = schedule.with_epsilon(config.epsilon)?;
        let grid = config.grid(&eps_schedule)?;
        let euler = EulerLinearModel {
            bmat: &model.bmat,
            beta: &model.beta,
            sigma: &model.sigma,
        };
        let exact = rts_smoother(&euler, &eps_schedule, &grid, 1e6)?;
        let mut z: f64 = 0.0;
        for (i, tr) in result.traces.iter().enumerate() {
            for j in 0..2 {
                let s = summarize_series(&trace_component(&result, i, j, config.burn_in), BATCHES);
                let sd = exact.cov[tr.knot][(j, j)].sqrt();
                z = z.max((s.mean - exact.mean[tr.knot][j]).abs() / s.mean_se);
                z = z.max((s.sd - sd).abs() / s.sd_se);
            }
        }
        Ok((z, result.acceptance_rate()))
    };
    match run() {
        Ok((z, rate)) => CheckOutcome::at_most(
            "RTS with method-A auxiliary",
            z,
            3.0,
            format!("max |z| of mean and sd over observation knots, acceptance {rate:.3}"),
        ),
        Err(e) => CheckOutcome::failed("RTS with method-A auxiliary", &e),
    }
}

/// Plain and time-changed grids on the linear model with observation noise
/// `10⁻³`: posterior means at the observation knots agree within 3 combined
/// standard errors. Measured value is the largest z-score.
pub fn check_time_change(seed: u64, iterations: usize) -> CheckOutcome {
    let run = || -> Result<f64> {
        let (model, schedule, _) = oracle_problem(1e-3, seed)?;
        let aux = model.to_auxiliary();
        let plain_cfg = oracle_config(iterations, seed, &schedule, false);
        let tc_cfg = oracle_config(iterations, seed.wrapping_add(1), &schedule, true);
        let plain = run_smoother(&model, &schedule, &aux, &plain_cfg, 0)?;
        let changed = run_smoother(&model, &schedule, &aux, &tc_cfg, 0)?;
        let mut z: f64 = 0.0;
        for i in 0..plain.traces.len() {
            for j in 0..2 {
                let a = summarize_series(&trace_component(&plain, i, j, plain_cfg.burn_in), BATCHES);
                let b = summarize_series(&trace_component(&changed, i, j, tc_cfg.burn_in), BATCHES);
                z = z.max((a.mean - b.mean).abs() / a.mean_se.hypot(b.mean_se));
            }
        }
        Ok(z)
    };
    match run() {
        Ok(z) => CheckOutcome::at_most("time-change equivalence", z, 3.0, "max |z| over observation knots"),
        Err(e) => CheckOutcome::failed("time-change equivalence", &e),
    }
}

/// pCN proposal statistics at stationarity: with `x0 ~ N(ν(0), H†(0))`,
/// `corr(x0, x0°)` per component is `√λ` and `x0°` has covariance `H†(0)`.
pub fn check_pcn(seed: u64, proposals: usize) -> Vec<CheckOutcome> {
    let run = || -> Result<(f64, f64)> {
        let (model, schedule, _) = oracle_problem(0.1, seed)?;
        let schedule = schedule.with_epsilon(5e-4)?;
        let grid = TimeGrid::uniform(&schedule, 20)?;
        let (filter, _) = run_backward_with(&schedule, &model.to_auxiliary(), &grid, &RkTableau::default())?;
        let d = 2;
        let hd = filter.initial_cov().clone();
        let mut rng = RngStream::new(seed, 15);
        let mut buf = ProposalBuffers::new(&model, &filter);
        let noise = vec![0.0; buf.noise().len()];
        let mut corr_err: f64 = 0.0;
        let mut cov_err: f64 = 0.0;
        for lambda in [0.25, 0.5, 0.9] {
            let mut sums = PairMoments::new(d);
            for _ in 0..proposals {
                let z = DVector::from_fn(d, |_, _| rng.standard_normal());
                let x = filter.initial_mean() + filter.initial_factor() * z;
                pcn_propose(&x, &noise, lambda, &filter, model.noise_dim(), &mut rng, &mut buf);
                sums.push(&x, buf.x0());
            }
            for j in 0..d {
                corr_err = corr_err.max((sums.corr(j) - lambda.sqrt()).abs());
            }
            let cov = sums.cov_y();
            for i in 0..d {
                for j in 0..d {
                    let scale = (hd[(i, i)] * hd[(j, j)]).sqrt();
                    cov_err = cov_err.max((cov[(i, j)] - hd[(i, j)]).abs() / scale);
                }
            }
        }
        Ok((corr_err, cov_err))
    };
    match run() {
        Ok((c, v)) => vec![
            CheckOutcome::at_most("pCN correlation", c, 0.02, "max |corr - sqrt(lambda)|"),
            CheckOutcome::at_most("pCN proposal covariance", v, 0.05, "relative to H-dagger(0)"),
        ],
        Err(e) => vec![CheckOutcome::failed("pCN statistics", &e)],
    }
}

struct PairMoments {
    n: f64,
    sx: DVector<f64>,
    sy: DVector<f64>,
    sxx: DVector<f64>,
    sxy: DVector<f64>,
    syy: DMatrix<f64>,
}

impl PairMoments {
    fn new(d: usize) -> Self {
        Self {
            n: 0.0,
            sx: DVector::zeros(d),
            sy: DVector::zeros(d),
            sxx: DVector::zeros(d),
            sxy: DVector::zeros(d),
            syy: DMatrix::zeros(d, d),
        }
    }

    fn push(&mut self, x: &DVector<f64>, y: &DVector<f64>) {
        self.n += 1.0;
        self.sx += x;
        self.sy += y;
        self.sxx += x.component_mul(x);
        self.sxy += x.component_mul(y);
        self.syy += y * y.transpose();
    }

    fn corr(&self, j: usize) -> f64 {
        let n = self.n;
        let (mx, my) = (self.sx[j] / n, self.sy[j] / n);
        let cxy = self.sxy[j] / n - mx * my;
        let vx = self.sxx[j] / n - mx * mx;
        let vy = self.syy[(j, j)] / n - my * my;
        cxy / (vx * vy).sqrt()
    }

    fn cov_y(&self) -> DMatrix<f64> {
        let my = &self.sy / self.n;
        &self.syy / self.n - &my * my.transpose()
    }
}

// ---------------------------------------------------------------------------
// Nonlinear experiments

/// Lorenz data: mesh `8e-5` on `[0, 4]`, 101 full observations with `Σ = I`.
pub fn lorenz_problem(seed: u64) -> Result<(Lorenz, ObservationSchedule, SimulatedPath)> {
    let model = Lorenz::classic();
    let mut rng = RngStream::new(seed, 16);
    let x0 = DVector::from_vec(vec![1.508870, -1.531271, 25.46091]);
    let path = euler_maruyama(&model, &x0, 0.0, 4.0, 50_000, &mut rng)?;
    let times = equally_spaced(0.0, 0.04, 101);
    let schedule = observe(
        &path,
        &times,
        &DMatrix::identity(3, 3),
        &DMatrix::identity(3, 3),
        5e-4,
        &mut rng,
    )?;
    Ok((model, schedule, path))
}

/// Pendulum data (`θ = 1`, `γ = 1`, start `[1, 0.5]`): same mesh and times,
/// first coordinate observed with noise variance `obs_var`.
pub fn pendulum_problem(obs_var: f64, seed: u64) -> Result<(Pendulum, ObservationSchedule, SimulatedPath)> {
    let model = Pendulum::new(1.0, 1.0)?;
    let mut rng = RngStream::new(seed, 17);
    let x0 = DVector::from_vec(vec![1.0, 0.5]);
    let path = euler_maruyama(&model, &x0, 0.0, 4.0, 50_000, &mut rng)?;
    let times = equally_spaced(0.0, 0.04, 101);
    let l = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let schedule = observe(&path, &times, &l, &DMatrix::from_element(1, 1, obs_var), 5e-4, &mut rng)?;
    Ok((model, schedule, path))
}

fn experiment_config(method: AuxMethod, iterations: usize, seed: u64) -> SmootherConfig {
    let mut config = SmootherConfig::for_method(method);
    config.iterations = iterations;
    config.burn_in = (iterations / 10).min(10_000);
    config.steps_per_segment = 50;
    config.save_every = 0;
    config.record_acceptance = false;
    config.seed = seed;
    config
}

/// Root-mean-square distance between the posterior mean and `truth` over all
/// knots and components.
pub fn rmse_against(result: &SmoothingResult, truth: &SimulatedPath) -> f64 {
    let d = result.dim;
    let mut total = 0.0;
    for (k, &t) in result.knots.iter().enumerate() {
        let x = truth.at(t);
        for j in 0..d {
            total += (result.mean_at(k)[j] - x[j]).powi(2);
        }
    }
    (total / (result.knots.len() * d) as f64).sqrt()
}

/// Fraction of knots where `truth` component `j` lies within 1.96 sd of the posterior mean.
pub fn band_coverage(result: &SmoothingResult, truth: &SimulatedPath, j: usize) -> f64 {
    let hits = result
        .knots
        .iter()
        .enumerate()
        .filter(|&(k, &t)| (truth.at(t)[j] - result.mean_at(k)[j]).abs() <= 1.96 * result.sd_at(k)[j])
        .count();
    hits as f64 / result.knots.len() as f64
}

/// Lorenz run with methods A and B (`α = 5`) and C (`α = 0.5`).
pub fn check_lorenz(seed: u64, iterations: usize) -> Vec<CheckOutcome> {
    let (model, schedule, truth) = match lorenz_problem(seed) {
        Ok(p) => p,
        Err(e) => return vec![CheckOutcome::failed("Lorenz data", &e)],
    };
    let mut out = Vec::new();
    for method in [AuxMethod::A, AuxMethod::B, AuxMethod::C] {
        let config = experiment_config(method, iterations, seed);
        let name = format!("Lorenz method {method} acceptance");
        let result = initial_auxiliary(&model, &schedule, &config, None)
            .and_then(|aux| run_smoother(&model, &schedule, &aux, &config, 0));
        match result {
            Ok(r) => {
                let rate = r.acceptance_rate();
                if method == AuxMethod::C {
                    out.push(CheckOutcome::at_least(&name, rate, 0.74, "target [0.74, 1]"));
                    out.push(CheckOutcome::at_most(
                        "Lorenz method C RMSE",
                        rmse_against(&r, &truth),
                        1.0,
                        "posterior mean against the simulated path",
                    ));
                } else {
                    let mut c = CheckOutcome::at_least(&name, rate, 0.10, "target [0.10, 0.45]");
                    c.passed = (0.10..=0.45).contains(&rate);
                    out.push(c);
                }
            }
            Err(e) => out.push(CheckOutcome::failed(&name, &e)),
        }
    }
    out
}

/// Pendulum run, observation variance 1, method C started from the
/// linearised auxiliary, `α = 0.5`.
pub fn check_pendulum(seed: u64, iterations: usize) -> Vec<CheckOutcome> {
    let run = || -> Result<(f64, f64)> {
        let (model, schedule, truth) = pendulum_problem(1.0, seed)?;
        let config = experiment_config(AuxMethod::C, iterations, seed);
        let result = run_smoother(&model, &schedule, &model.linearized_auxiliary(), &config, 0)?;
        Ok((result.acceptance_rate(), band_coverage(&result, &truth, 0)))
    };
    match run() {
        Ok((rate, coverage)) => vec![
            CheckOutcome::at_least("pendulum acceptance", rate, 0.85, "method C"),
            CheckOutcome::at_least("pendulum band coverage", coverage, 0.85, "first component, 1.96 sd"),
        ],
        Err(e) => vec![CheckOutcome::failed("pendulum", &e)],
    }
}
