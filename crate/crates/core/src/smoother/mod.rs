//! Metropolis–Hastings smoother over guided proposals.
//!
//! The chain state is the start value `X_0` and the driving noise of the
//! guided proposal. Both are updated jointly by a preconditioned
//! Crank–Nicolson step with persistence `λ ~ Beta(α, 1)` drawn afresh each
//! iteration, and the proposal is accepted with probability `min(1, Ψ°/Ψ)`.

mod auxiliary;
mod chain;

pub use auxiliary::{aux_method_a, aux_method_b, aux_method_c};
pub use chain::{draw_lambda, pcn_propose, ChainState, ProposalBuffers, StepOutcome};

use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::filter::{run_backward_with, BackwardFilter};
use crate::model::{DiffusionModel, LinearAuxiliary, ObservationSchedule, TimeGrid};
use crate::numerics::{RkTableau, RngStream};

/// How the auxiliary process is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxMethod {
    /// Constant `σ̃`, no drift.
    A,
    /// Drift tabulated along backward deterministic flows.
    B,
    /// Adaptive linearisation around the running mean of the chain.
    C,
}

impl AuxMethod {
    /// Default `α` of the `Beta(α, 1)` persistence law.
    pub fn default_alpha(self) -> f64 {
        match self {
            Self::A | Self::B => 5.0,
            Self::C => 0.5,
        }
    }
}

impl fmt::Display for AuxMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::A => "A",
            Self::B => "B",
            Self::C => "C",
        };
        f.write_str(s)
    }
}

impl FromStr for AuxMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Self::A),
            "B" => Ok(Self::B),
            "C" => Ok(Self::C),
            other => Err(Error::Config(format!("unknown auxiliary method `{other}` (A, B or C)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SmootherConfig {
    pub iterations: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub steps_per_segment: usize,
    /// Iterations between method-C refreshes; 0 disables adaptation.
    pub adapt_every: usize,
    pub aux_method: AuxMethod,
    pub time_change: bool,
    pub burn_in: usize,
    /// Post-burn-in summary statistics and traces use every `thin`-th iteration.
    pub thin: usize,
    /// Keep the full path every `save_every` iterations; 0 keeps none.
    pub save_every: usize,
    pub trace_times: Vec<f64>,
    pub seed: u64,
    pub chains: usize,
    pub tableau: RkTableau,
    /// Keep one acceptance record per iteration.
    pub record_acceptance: bool,
}

impl SmootherConfig {
    /// Defaults for `method`: `α` 5 (A, B) or 0.5 (C), refresh every 1000
    /// iterations for C, burn-in 10⁴.
    pub fn for_method(method: AuxMethod) -> Self {
        Self {
            iterations: 100_000,
            alpha: method.default_alpha(),
            epsilon: 5e-4,
            steps_per_segment: 50,
            adapt_every: if method == AuxMethod::C { 1000 } else { 0 },
            aux_method: method,
            time_change: false,
            burn_in: 10_000,
            thin: 1,
            save_every: 5000,
            trace_times: Vec::new(),
            seed: 1,
            chains: 1,
            tableau: RkTableau::default(),
            record_acceptance: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.steps_per_segment == 0 {
            return Err(Error::Config("steps per segment must be >= 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be >= 1".into()));
        }
        if self.chains == 0 {
            return Err(Error::Config("chains must be >= 1".into()));
        }
        if self.adapt_every > 0 && self.aux_method != AuxMethod::C {
            return Err(Error::Config("adapt_every > 0 requires auxiliary method C".into()));
        }
        Ok(())
    }

    pub fn grid(&self, schedule: &ObservationSchedule) -> Result<TimeGrid> {
        if self.time_change {
            TimeGrid::time_changed(schedule, self.steps_per_segment)
        } else {
            TimeGrid::uniform(schedule, self.steps_per_segment)
        }
    }
}

/// One acceptance-log row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptanceRecord {
    pub iteration: usize,
    pub lambda: f64,
    /// `log Ψ` of the chain after the update.
    pub log_psi: f64,
    pub accepted: bool,
    pub accept_prob: f64,
}

/// Chain values at one monitored time.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSeries {
    pub t: f64,
    pub knot: usize,
    pub iterations: Vec<usize>,
    /// Row-major, `iterations.len() × d`.
    pub values: Vec<f64>,
}

/// One method-C refresh.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationRecord {
    pub iteration: usize,
    /// False when the refreshed filter failed and the previous auxiliary was kept.
    pub applied: bool,
    /// Sup-norm change of `B̃` and `β̃` over the knots against the previous auxiliary.
    pub change: f64,
    /// Mean path at the observation knots used for the linearisation, row-major.
    pub mean_at_observations: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SmoothingResult {
    pub chain: usize,
    pub knots: Vec<f64>,
    pub dim: usize,
    /// `(iteration, states)` with `states` knot-major.
    pub saved: Vec<(usize, Vec<f64>)>,
    /// Per-knot posterior mean, knot-major.
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Number of iterations the summary is based on (0: initial path only).
    pub summary_count: usize,
    pub acceptance: Vec<AcceptanceRecord>,
    pub traces: Vec<TraceSeries>,
    pub adaptations: Vec<AdaptationRecord>,
    pub iterations: usize,
    pub accepted: usize,
    /// Mean of `min(1, Ψ°/Ψ)` over iterations.
    pub mean_accept_prob: f64,
    pub final_auxiliary: LinearAuxiliary,
}

impl SmoothingResult {
    pub fn acceptance_rate(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.accepted as f64 / self.iterations as f64
        }
    }

    pub fn mean_at(&self, k: usize) -> &[f64] {
        &self.mean[k * self.dim..(k + 1) * self.dim]
    }

    pub fn sd_at(&self, k: usize) -> &[f64] {
        &self.sd[k * self.dim..(k + 1) * self.dim]
    }
}

/// Auxiliary process used to start a run: method A with `σ̃ = σ(t_0, 0)`,
/// method B as described, and for method C
/// the model-supplied `initial` when given, otherwise method B.
pub fn initial_auxiliary(
    model: &dyn DiffusionModel,
    schedule: &ObservationSchedule,
    config: &SmootherConfig,
    initial: Option<LinearAuxiliary>,
) -> Result<LinearAuxiliary> {
    let schedule = schedule.with_epsilon(config.epsilon)?;
    let grid = config.grid(&schedule)?;
    match (config.aux_method, initial) {
        (AuxMethod::A, _) => {
            let anchor = DVector::zeros(model.dim());
            aux_method_a(model, schedule.start(), &anchor)
        }
        (AuxMethod::C, Some(aux)) => Ok(aux),
        (AuxMethod::B | AuxMethod::C, _) => aux_method_b(model, &schedule, &grid, &config.tableau),
    }
}

/// Welford accumulator over knot-major paths.
#[derive(Debug, Clone)]
struct PathMoments {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl PathMoments {
    fn new(len: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    fn sd(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.m2.len()];
        }
        let denom = (self.count - 1) as f64;
        self.m2.iter().map(|s| (s / denom).sqrt()).collect()
    }
}

fn aux_change(old: &BackwardFilter, new: &BackwardFilter) -> f64 {
    (0..old.grid().len())
        .map(|k| {
            (old.aux_bmat(k) - new.aux_bmat(k))
                .amax()
                .max((old.aux_beta(k) - new.aux_beta(k)).amax())
        })
        .fold(0.0, f64::max)
}

/// Runs one chain (index `chain`, RNG stream `chain`) of the smoother.
pub fn run_smoother(
    model: &dyn DiffusionModel,
    schedule: &ObservationSchedule,
    aux0: &LinearAuxiliary,
    config: &SmootherConfig,
    chain: usize,
) -> Result<SmoothingResult> {
    config.validate()?;
    let schedule = schedule.with_epsilon(config.epsilon)?;
    if model.dim() != schedule.dim() || aux0.dim() != model.dim() {
        return Err(Error::Dimension(format!(
            "model has d = {}, observations d = {}, auxiliary d = {}",
            model.dim(),
            schedule.dim(),
            aux0.dim()
        )));
    }
    let grid = config.grid(&schedule)?;
    let d = model.dim();
    let n_knots = grid.len();
    let mut aux = aux0.clone();
    let (mut filter, _) = run_backward_with(&schedule, &aux, &grid, &config.tableau)?;
    let mut state = ChainState::initialise(model, &filter, RngStream::new(config.seed, chain as u64))?;
    let mut buf = ProposalBuffers::new(model, &filter);

    let trace_knots: Vec<usize> = config.trace_times.iter().map(|&t| grid.nearest_knot(t)).collect();
    let mut traces: Vec<TraceSeries> = config
        .trace_times
        .iter()
        .zip(&trace_knots)
        .map(|(&t, &k)| TraceSeries {
            t,
            knot: k,
            iterations: Vec::new(),
            values: Vec::new(),
        })
        .collect();
    let record_traces = |traces: &mut Vec<TraceSeries>, it: usize, states: &[f64]| {
        for tr in traces.iter_mut() {
            tr.iterations.push(it);
            tr.values.extend_from_slice(&states[tr.knot * d..(tr.knot + 1) * d]);
        }
    };
    record_traces(&mut traces, 0, &state.states);

    let mut moments = PathMoments::new(n_knots * d);
    let mut window = PathMoments::new(n_knots * d);
    let mut saved = Vec::new();
    let mut acceptance = Vec::with_capacity(if config.record_acceptance { config.iterations } else { 0 });
    let mut adaptations = Vec::new();
    let mut force_next = false;
    let mut refreshed_once = false;
    let mut prob_sum = 0.0;

    for it in 1..=config.iterations {
        let out = state.mh_step(model, &filter, config.alpha, force_next, &mut buf)?;
        force_next = false;
        prob_sum += out.accept_prob;
        if config.record_acceptance {
            acceptance.push(AcceptanceRecord {
                iteration: it,
                lambda: out.lambda,
                log_psi: state.log_psi,
                accepted: out.accepted,
                accept_prob: out.accept_prob,
            });
        }
        if it % config.thin == 0 {
            record_traces(&mut traces, it, &state.states);
            if it > config.burn_in {
                moments.push(&state.states);
            }
        }
        if config.save_every > 0 && it % config.save_every == 0 {
            saved.push((it, state.states.clone()));
        }
        if config.adapt_every == 0 {
            continue;
        }
        window.push(&state.states);
        if it % config.adapt_every != 0 || it == config.iterations {
            continue;
        }
        let mean_at_observations: Vec<f64> = grid
            .obs_knots()
            .iter()
            .flat_map(|&k| window.mean[k * d..(k + 1) * d].iter().copied())
            .collect();
        let refreshed = aux_method_c(model, &grid, &window.mean, aux.sigma_fn())
            .and_then(|a| run_backward_with(&schedule, &a, &grid, &config.tableau).map(|(f, _)| (a, f)));
        window = PathMoments::new(n_knots * d);
        match refreshed {
            Ok((new_aux, new_filter)) => {
                let change = aux_change(&filter, &new_filter);
                aux = new_aux;
                filter = new_filter;
                if let Err(e) = state.refresh(model, &filter) {
                    warn!("iteration {it}: current path failed under the refreshed filter ({e}); forcing the next proposal");
                    state.log_psi = f64::NEG_INFINITY;
                    force_next = true;
                }
                if !refreshed_once {
                    force_next = true;
                    refreshed_once = true;
                }
                info!("iteration {it}: auxiliary refreshed (change {change:.3e})");
                adaptations.push(AdaptationRecord {
                    iteration: it,
                    applied: true,
                    change,
                    mean_at_observations,
                });
            }
            Err(e) => {
                warn!("iteration {it}: adaptation failed ({e}); keeping the previous auxiliary");
                adaptations.push(AdaptationRecord {
                    iteration: it,
                    applied: false,
                    change: 0.0,
                    mean_at_observations,
                });
            }
        }
    }

    let (mean, sd, summary_count) = if moments.count == 0 {
        (state.states.clone(), vec![0.0; n_knots * d], 0)
    } else {
        let sd = moments.sd();
        (moments.mean, sd, moments.count)
    };
    if config.iterations == 0 {
        saved.push((0, state.states.clone()));
    }
    Ok(SmoothingResult {
        chain,
        knots: grid.knots().to_vec(),
        dim: d,
        saved,
        mean,
        sd,
        summary_count,
        acceptance,
        traces,
        adaptations,
        iterations: state.iteration,
        accepted: state.accepted,
        mean_accept_prob: if state.iteration == 0 {
            0.0
        } else {
            prob_sum / state.iteration as f64
        },
        final_auxiliary: aux,
    })
}

/// Runs `config.chains` independent chains concurrently.
pub fn run_chains(
    model: &dyn DiffusionModel,
    schedule: &ObservationSchedule,
    aux0: &LinearAuxiliary,
    config: &SmootherConfig,
) -> Result<Vec<SmoothingResult>> {
    config.validate()?;
    if config.chains == 1 {
        return Ok(vec![run_smoother(model, schedule, aux0, config, 0)?]);
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.chains)
            .map(|c| scope.spawn(move || run_smoother(model, schedule, aux0, config, c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{OrnsteinUhlenbeck, Pendulum};
    use nalgebra::DMatrix;

    fn ou_problem() -> (OrnsteinUhlenbeck, ObservationSchedule) {
        let model = OrnsteinUhlenbeck::new(
            DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.3]),
            DVector::from_vec(vec![0.1, 0.0]),
            DMatrix::identity(2, 2) * 0.5,
        )
        .unwrap();
        let l = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let values: Vec<DVector<f64>> = [0.3, -0.5, 0.8, 0.2]
            .iter()
            .map(|&v| DVector::from_element(1, v))
            .collect();
        let s = ObservationSchedule::constant(
            &[0.0, 0.4, 0.8, 1.2],
            &values,
            &l,
            &(DMatrix::identity(1, 1) * 0.2),
            0.1,
        )
        .unwrap();
        (model, s)
    }

    fn small_config(method: AuxMethod) -> SmootherConfig {
        SmootherConfig {
            iterations: 400,
            burn_in: 100,
            steps_per_segment: 10,
            save_every: 100,
            adapt_every: if method == AuxMethod::C { 100 } else { 0 },
            trace_times: vec![0.6],
            epsilon: 0.1,
            ..SmootherConfig::for_method(method)
        }
    }

    #[test]
    fn reproducible_for_fixed_seed() {
        let (model, s) = ou_problem();
        let cfg = small_config(AuxMethod::A);
        let aux = initial_auxiliary(&model, &s, &cfg, None).unwrap();
        let a = run_smoother(&model, &s, &aux, &cfg, 0).unwrap();
        let b = run_smoother(&model, &s, &aux, &cfg, 0).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.acceptance, b.acceptance);
        assert_eq!(a.saved, b.saved);
        let c = run_smoother(&model, &s, &aux, &cfg, 1).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn matched_linear_model_accepts_all() {
        let (model, s) = ou_problem();
        let cfg = small_config(AuxMethod::A);
        let res = run_smoother(&model, &s, &model.to_auxiliary(), &cfg, 0).unwrap();
        assert_eq!(res.acceptance_rate(), 1.0);
        assert!(res.acceptance.iter().all(|r| r.log_psi.abs() <= 1e-10));
        assert_eq!(res.saved.len(), 4);
        assert_eq!(res.summary_count, 300);
        assert_eq!(res.traces[0].iterations.len(), 401);
    }

    #[test]
    fn zero_budget_summarises_initial_path() {
        let (model, s) = ou_problem();
        let cfg = SmootherConfig {
            iterations: 0,
            ..small_config(AuxMethod::A)
        };
        let aux = initial_auxiliary(&model, &s, &cfg, None).unwrap();
        let res = run_smoother(&model, &s, &aux, &cfg, 0).unwrap();
        assert_eq!(res.summary_count, 0);
        assert_eq!(res.saved.len(), 1);
        assert_eq!(res.mean, res.saved[0].1);
        assert!(res.sd.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn method_c_on_linear_model_recovers_the_drift() {
        let (model, s) = ou_problem();
        let cfg = small_config(AuxMethod::C);
        let aux = initial_auxiliary(&model, &s, &cfg, None).unwrap();
        let res = run_smoother(&model, &s, &aux, &cfg, 0).unwrap();
        assert_eq!(res.adaptations.len(), 3);
        assert!(res.adaptations.iter().all(|a| a.applied));
        // after the first refresh the auxiliary equals the model: no further change
        assert!(res.adaptations[1].change < 1e-6);
        assert!(res.adaptations[2].change < 1e-6);
        let last = res.acceptance.last().unwrap();
        assert!(last.log_psi.abs() < 1e-8);
    }

    #[test]
    fn pendulum_method_c_runs() {
        let model = Pendulum::new(1.0, 1.0).unwrap();
        let l = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let times: Vec<f64> = (0..11).map(|i| 0.1 * i as f64).collect();
        let values: Vec<DVector<f64>> = times.iter().map(|&t| DVector::from_element(1, 1.0 - t)).collect();
        let s = ObservationSchedule::constant(&times, &values, &l, &DMatrix::identity(1, 1), 5e-4).unwrap();
        let cfg = SmootherConfig {
            epsilon: 5e-4,
            ..small_config(AuxMethod::C)
        };
        let aux = initial_auxiliary(&model, &s, &cfg, Some(model.linearized_auxiliary())).unwrap();
        let res = run_smoother(&model, &s, &aux, &cfg, 0).unwrap();
        assert!(res.acceptance_rate() > 0.5, "{}", res.acceptance_rate());
        assert!(res.mean.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn chains_run_concurrently_and_match_sequential() {
        let (model, s) = ou_problem();
        let cfg = SmootherConfig {
            chains: 3,
            ..small_config(AuxMethod::A)
        };
        let aux = initial_auxiliary(&model, &s, &cfg, None).unwrap();
        let all = run_chains(&model, &s, &aux, &cfg).unwrap();
        assert_eq!(all.len(), 3);
        let second = run_smoother(&model, &s, &aux, &cfg, 1).unwrap();
        assert_eq!(all[1].mean, second.mean);
    }

    #[test]
    fn rejects_bad_configuration() {
        let mut cfg = SmootherConfig::for_method(AuxMethod::A);
        cfg.alpha = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SmootherConfig::for_method(AuxMethod::A);
        cfg.adapt_every = 10;
        assert!(cfg.validate().is_err());
        assert_eq!("c".parse::<AuxMethod>().unwrap(), AuxMethod::C);
        assert!("D".parse::<AuxMethod>().is_err());
    }
}
