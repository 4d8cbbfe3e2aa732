use std::path::{Path, PathBuf};

use cdsmooth::model::{DiffusionModel, Observation, ObservationSchedule};
use cdsmooth::numerics::{cholesky, RngStream};
use cdsmooth::simulate::{equally_spaced, euler_maruyama, SimulatedPath};
use cdsmooth::smoother::{initial_auxiliary, run_chains, SmoothingResult};
use cdsmooth::verify::{run_level, CheckOutcome, Level};
use log::info;
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{InitialAuxiliary, ObservationsConfig, Provenance, RunConfig, SmootherSection};
use crate::error::{CliError, CliResult};
use crate::io;

/// RNG stream for data simulation; chains use streams `0..chains`.
const SIMULATION_STREAM: u64 = 1 << 32;

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Simulates the path and the noisy observations of an inline `simulate` block.
fn simulate_data(
    config: &RunConfig,
    model: &dyn DiffusionModel,
    epsilon: f64,
) -> CliResult<(ObservationSchedule, SimulatedPath)> {
    let sim = config
        .observations
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("observations: no `[observations.simulate]` block".into()))?;
    let mut rng = RngStream::new(config.seed, SIMULATION_STREAM);
    let x0 = DVector::from_column_slice(&sim.x0);
    let path = euler_maruyama(model, &x0, sim.t_start, sim.t_end, sim.mesh_steps()?, &mut rng)?;
    let times = equally_spaced(sim.obs_start.unwrap_or(sim.t_start), sim.obs_interval, sim.obs_count);
    let operators = config.observations.operators(model.dim(), times.len())?;
    let mut observations = Vec::with_capacity(times.len());
    for (&t, (l, sigma)) in times.iter().zip(operators) {
        let factor = cholesky(&sigma, "observation noise covariance")?.l();
        let mut eta = DVector::zeros(l.nrows());
        rng.fill_standard_normal(eta.as_mut_slice());
        let v = &l * path.state(path.index_of(t)?) + factor * eta;
        observations.push(Observation::new(t, l, sigma, v)?);
    }
    let start = config.observations.start.unwrap_or(times[0]);
    Ok((ObservationSchedule::new(start, observations, epsilon)?, path))
}

fn read_schedule(obs: &ObservationsConfig, d: usize, epsilon: f64) -> CliResult<ObservationSchedule> {
    let file = obs
        .file
        .as_ref()
        .ok_or_else(|| CliError::Config("observations: no `file`".into()))?;
    let rows = io::read_observations(file)?;
    let operators = obs.operators(d, rows.len())?;
    let observations = rows
        .into_iter()
        .zip(operators)
        .map(|((t, v), (l, sigma))| {
            if v.len() != l.nrows() {
                return Err(CliError::Config(format!(
                    "{}: observation at t = {t} has {} values but L has {} rows",
                    file.display(),
                    v.len(),
                    l.nrows()
                )));
            }
            Ok(Observation::new(t, l, sigma, DVector::from_vec(v))?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let start = obs.start.unwrap_or(observations[0].t);
    Ok(ObservationSchedule::new(start, observations, epsilon)?)
}

/// The configuration with every default spelled out, as written to `provenance.toml`.
fn resolved(config: &RunConfig, smoother: SmootherSection, d: usize, output_dir: &Path) -> RunConfig {
    let mut out = config.clone();
    out.smoother = smoother;
    out.output_dir = Some(std::path::absolute(output_dir).unwrap_or_else(|_| output_dir.to_path_buf()));
    let obs = &mut out.observations;
    if obs.per_observation.is_none() {
        let l = obs.l.get_or_insert_with(|| identity_rows(d));
        let m = l.len();
        obs.sigma.get_or_insert_with(|| identity_rows(m));
    }
    if let Some(sim) = obs.simulate.as_mut() {
        sim.obs_start.get_or_insert(sim.t_start);
    }
    out.provenance = Some(Provenance {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command_line(),
    });
    out
}

fn identity_rows(d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn write_provenance(dir: &Path, config: &RunConfig) -> CliResult<()> {
    let text = toml::to_string(config).map_err(|e| CliError::Config(format!("provenance: {e}")))?;
    io::write_text(&dir.join("provenance.toml"), &text)
}

pub fn simulate(config_path: &Path, output: Option<&Path>) -> CliResult<()> {
    let config = RunConfig::load(config_path)?;
    let (smoother, initial) = config.smoother.resolve(config.seed)?;
    let built = config.model.build()?;
    let (schedule, path) = simulate_data(&config, built.model.as_ref(), smoother.epsilon)?;
    let dir = config.output_dir(output);
    create_dir(&dir)?;
    io::write_observations(&dir.join("observations.csv"), &schedule)?;
    io::write_path(&dir.join("truth.csv"), &path)?;
    let full = resolved(
        &config,
        SmootherSection::from_resolved(&smoother, initial),
        built.model.dim(),
        &dir,
    );
    write_provenance(&dir, &full)?;
    println!(
        "simulated {} mesh points and {} observations into {}",
        path.times.len(),
        schedule.len(),
        dir.display()
    );
    Ok(())
}

fn chain_file(dir: &Path, stem: &str, result: &SmoothingResult, chains: usize) -> PathBuf {
    if chains > 1 {
        dir.join(format!("{stem}_chain{}.csv", result.chain))
    } else {
        dir.join(format!("{stem}.csv"))
    }
}

pub fn smooth(config_path: &Path, output: Option<&Path>) -> CliResult<()> {
    let config = RunConfig::load(config_path)?;
    let (smoother, initial_kind) = config.smoother.resolve(config.seed)?;
    let built = config.model.build()?;
    let model = built.model.as_ref();
    let dir = config.output_dir(output);
    create_dir(&dir)?;
    let schedule = if config.observations.simulate.is_some() {
        let (schedule, path) = simulate_data(&config, model, smoother.epsilon)?;
        io::write_path(&dir.join("truth.csv"), &path)?;
        schedule
    } else {
        read_schedule(&config.observations, model.dim(), smoother.epsilon)?
    };
    io::write_observations(&dir.join("observations.csv"), &schedule)?;
    let full = resolved(
        &config,
        SmootherSection::from_resolved(&smoother, initial_kind),
        model.dim(),
        &dir,
    );
    write_provenance(&dir, &full)?;

    let initial = match initial_kind {
        InitialAuxiliary::Model => built.initial,
        InitialAuxiliary::MethodB => None,
    };
    let aux0 = initial_auxiliary(model, &schedule, &smoother, initial)?;
    info!(
        "running {} chain(s) of {} iterations, method {}",
        smoother.chains, smoother.iterations, smoother.aux_method
    );
    let results = run_chains(model, &schedule, &aux0, &smoother)?;
    for r in &results {
        let file = |stem: &str| chain_file(&dir, stem, r, smoother.chains);
        io::write_samples(&file("samples"), &r.knots, r.dim, &r.saved)?;
        io::write_summary(
            &file("summary"),
            &io::Summary {
                times: r.knots.clone(),
                dim: r.dim,
                mean: r.mean.clone(),
                sd: r.sd.clone(),
            },
        )?;
        io::write_traces(&file("trace"), r.dim, &r.traces)?;
        io::write_acceptance(&file("acceptance"), &r.acceptance)?;
        println!(
            "chain {}: {} iterations, acceptance rate {:.4}, {} saved paths",
            r.chain,
            r.iterations,
            r.acceptance_rate(),
            r.saved.len()
        );
    }
    println!("outputs written to {}", dir.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct CheckReport<'a> {
    name: &'a str,
    tolerance: f64,
    measured: f64,
    passed: bool,
    detail: &'a str,
}

#[derive(Debug, Serialize)]
struct VerifyReport<'a> {
    level: String,
    seed: u64,
    passed: bool,
    checks: Vec<CheckReport<'a>>,
}

pub fn verify(level: Level, seed: u64, report: Option<&Path>) -> CliResult<()> {
    let outcomes: Vec<CheckOutcome> = run_level(level, seed);
    for o in &outcomes {
        eprintln!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    let doc = VerifyReport {
        level: level.to_string(),
        seed,
        passed: failed == 0,
        checks: outcomes
            .iter()
            .map(|o| CheckReport {
                name: &o.name,
                tolerance: o.tolerance,
                measured: o.measured,
                passed: o.passed,
                detail: &o.detail,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&doc).expect("report serialises");
    match report {
        Some(path) => io::write_text(path, &(json + "\n"))?,
        None => println!("{json}"),
    }
    if failed > 0 {
        return Err(CliError::Verification {
            failed,
            total: outcomes.len(),
        });
    }
    Ok(())
}

pub fn summarize(samples: &Path, output: Option<&Path>, burn_in: usize) -> CliResult<()> {
    let summary = io::summarize_samples(samples, burn_in)?;
    match output {
        Some(path) => io::write_summary(path, &summary),
        None => io::write_summary_to(std::io::stdout().lock(), &summary)
            .map_err(|e| CliError::parse("<stdout>", e.to_string())),
    }
}
