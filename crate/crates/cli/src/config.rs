//! TOML run configuration.

use std::path::{Path, PathBuf};

use cdsmooth::model::{DiffusionModel, LinearAuxiliary, Lorenz, OrnsteinUhlenbeck, Pendulum};
use cdsmooth::numerics::RkTableau;
use cdsmooth::smoother::{AuxMethod, SmootherConfig};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const OUTPUT_DIR_ENV: &str = "CDSMOOTH_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "cdsmooth-output";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub observations: ObservationsConfig,
    #[serde(default)]
    pub smoother: SmootherSection,
    /// Written into `provenance.toml`; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Lorenz {
        #[serde(default = "lorenz_theta")]
        theta: [f64; 3],
        #[serde(default = "lorenz_sigma0")]
        sigma0: f64,
    },
    Pendulum {
        #[serde(default = "one")]
        theta: f64,
        #[serde(default = "one")]
        gamma: f64,
    },
    Ou {
        /// Rows of `B`.
        bmat: Vec<Vec<f64>>,
        beta: Vec<f64>,
        /// Rows of `σ`.
        sigma: Vec<Vec<f64>>,
    },
}

fn lorenz_theta() -> [f64; 3] {
    Lorenz::classic().theta
}

fn lorenz_sigma0() -> f64 {
    Lorenz::classic().sigma0
}

fn one() -> f64 {
    1.0
}

/// Built model plus the auxiliary process it suggests for method C, if any.
pub struct BuiltModel {
    pub model: Box<dyn DiffusionModel>,
    pub initial: Option<LinearAuxiliary>,
}

impl ModelConfig {
    pub fn build(&self) -> CliResult<BuiltModel> {
        Ok(match self {
            Self::Lorenz { theta, sigma0 } => BuiltModel {
                model: Box::new(Lorenz::new(*theta, *sigma0)?),
                initial: None,
            },
            Self::Pendulum { theta, gamma } => {
                let p = Pendulum::new(*theta, *gamma)?;
                let initial = Some(p.linearized_auxiliary());
                BuiltModel {
                    model: Box::new(p),
                    initial,
                }
            }
            Self::Ou { bmat, beta, sigma } => {
                let ou = OrnsteinUhlenbeck::new(
                    matrix("model.bmat", bmat)?,
                    DVector::from_column_slice(beta),
                    matrix("model.sigma", sigma)?,
                )?;
                let initial = Some(ou.to_auxiliary());
                BuiltModel {
                    model: Box::new(ou),
                    initial,
                }
            }
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationsConfig {
    /// CSV with header `t,v1,…,vm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    /// Conditioning start time; defaults to the first observation time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    /// Rows of `L`, shared by all observations; identity when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Vec<Vec<f64>>>,
    /// Rows of `Σ`, shared by all observations; identity when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<f64>>>,
    /// TOML file with one `[[observation]]` table (`l`, `sigma`) per observation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_observation: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub x0: Vec<f64>,
    #[serde(default)]
    pub t_start: f64,
    pub t_end: f64,
    /// Euler–Maruyama mesh width.
    pub mesh: f64,
    /// First observation time; defaults to `t_start`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs_start: Option<f64>,
    pub obs_interval: f64,
    pub obs_count: usize,
}

impl SimulateConfig {
    pub fn mesh_steps(&self) -> CliResult<usize> {
        let span = self.t_end - self.t_start;
        if !(self.mesh > 0.0 && span > 0.0) {
            return Err(CliError::Config(
                "observations.simulate: need mesh > 0 and t_end > t_start".into(),
            ));
        }
        let steps = (span / self.mesh).round();
        if (steps * self.mesh - span).abs() > 1e-9 * span {
            return Err(CliError::Config(format!(
                "observations.simulate: mesh {} does not divide [{}, {}]",
                self.mesh, self.t_start, self.t_end
            )));
        }
        Ok(steps as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct PerObservationFile {
    observation: Vec<PerObservation>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct PerObservation {
    l: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
}

/// Per-observation `(L, Σ)` pairs.
pub type Operators = Vec<(DMatrix<f64>, DMatrix<f64>)>;

impl ObservationsConfig {
    /// `(L_i, Σ_i)` for `count` observations of a `d`-dimensional state.
    pub fn operators(&self, d: usize, count: usize) -> CliResult<Operators> {
        if let Some(path) = &self.per_observation {
            if self.l.is_some() || self.sigma.is_some() {
                return Err(CliError::Config(
                    "observations: give either per_observation or l/sigma, not both".into(),
                ));
            }
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let file: PerObservationFile = toml::from_str(&text).map_err(|e| CliError::parse(path, e.to_string()))?;
            if file.observation.len() != count {
                return Err(CliError::Config(format!(
                    "{}: {} [[observation]] tables for {count} observations",
                    path.display(),
                    file.observation.len()
                )));
            }
            return file
                .observation
                .iter()
                .enumerate()
                .map(|(i, o)| {
                    Ok((
                        matrix(&format!("observation[{i}].l"), &o.l)?,
                        matrix(&format!("observation[{i}].sigma"), &o.sigma)?,
                    ))
                })
                .collect();
        }
        let l = match &self.l {
            Some(rows) => matrix("observations.l", rows)?,
            None => DMatrix::identity(d, d),
        };
        let sigma = match &self.sigma {
            Some(rows) => matrix("observations.sigma", rows)?,
            None => DMatrix::identity(l.nrows(), l.nrows()),
        };
        Ok(vec![(l, sigma); count])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmootherSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_segment: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapt_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_change: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thin: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub save_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chains: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tableau: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_acceptance: Option<bool>,
    /// Method C start: "model" (model-supplied linearisation, method B if
    /// none) or "b" (always method B).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_auxiliary: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialAuxiliary {
    Model,
    MethodB,
}

impl SmootherSection {
    pub fn resolve(&self, seed: u64) -> CliResult<(SmootherConfig, InitialAuxiliary)> {
        let method: AuxMethod = self.method.as_deref().unwrap_or("C").parse()?;
        let mut c = SmootherConfig::for_method(method);
        c.seed = seed;
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { c.$field = v.clone(); })*
            };
        }
        take!(
            iterations,
            alpha,
            epsilon,
            steps_per_segment,
            adapt_every,
            time_change,
            burn_in,
            thin,
            save_every,
            trace_times,
            chains,
            record_acceptance
        );
        if let Some(name) = &self.tableau {
            c.tableau = RkTableau::by_name(name)
                .ok_or_else(|| CliError::Config(format!("smoother.tableau: unknown tableau `{name}`")))?;
        }
        let initial = match self.initial_auxiliary.as_deref().unwrap_or("model") {
            "model" => InitialAuxiliary::Model,
            "b" | "B" => InitialAuxiliary::MethodB,
            other => {
                return Err(CliError::Config(format!(
                    "smoother.initial_auxiliary: expected `model` or `b`, got `{other}`"
                )))
            }
        };
        c.validate()?;
        Ok((c, initial))
    }

    /// Every field filled in from `config`.
    pub fn from_resolved(c: &SmootherConfig, initial: InitialAuxiliary) -> Self {
        Self {
            method: Some(c.aux_method.to_string()),
            iterations: Some(c.iterations),
            alpha: Some(c.alpha),
            epsilon: Some(c.epsilon),
            steps_per_segment: Some(c.steps_per_segment),
            adapt_every: Some(c.adapt_every),
            time_change: Some(c.time_change),
            burn_in: Some(c.burn_in),
            thin: Some(c.thin),
            save_every: Some(c.save_every),
            trace_times: Some(c.trace_times.clone()),
            chains: Some(c.chains),
            tableau: Some(c.tableau.name().to_string()),
            record_acceptance: Some(c.record_acceptance),
            initial_auxiliary: Some(
                match initial {
                    InitialAuxiliary::Model => "model",
                    InitialAuxiliary::MethodB => "b",
                }
                .to_string(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub version: String,
    pub command: String,
}

impl RunConfig {
    /// Reads `path`; relative file paths inside are taken relative to its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: Self = toml::from_str(&text).map_err(|e| CliError::parse(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let absolute = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if let Ok(c) = p.canonicalize() {
                *p = c;
            }
        };
        if let Some(p) = config.observations.file.as_mut() {
            absolute(p);
        }
        if let Some(p) = config.observations.per_observation.as_mut() {
            absolute(p);
        }
        match (&config.observations.file, &config.observations.simulate) {
            (Some(_), Some(_)) => Err(CliError::Config(
                "observations: give either `file` or `[observations.simulate]`, not both".into(),
            )),
            (None, None) => Err(CliError::Config(
                "observations: need `file` or `[observations.simulate]`".into(),
            )),
            _ => Ok(config),
        }
    }

    /// Output directory: explicit flag, then the config, then the environment.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

/// Dense matrix from a list of rows.
pub fn matrix(what: &str, rows: &[Vec<f64>]) -> CliResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(format!(
            "{what}: expected a non-empty list of equal-length rows"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7

[model]
kind = "pendulum"

[observations]
l = [[1.0, 0.0]]
sigma = [[0.5]]

[observations.simulate]
x0 = [1.0, 0.5]
t_end = 1.0
mesh = 0.001
obs_interval = 0.1
obs_count = 11

[smoother]
method = "a"
iterations = 10
"#;

    #[test]
    fn minimal_config_resolves_with_method_defaults() {
        let c: RunConfig = toml::from_str(MINIMAL).unwrap();
        assert_eq!(c.model, ModelConfig::Pendulum { theta: 1.0, gamma: 1.0 });
        let (s, init) = c.smoother.resolve(c.seed).unwrap();
        assert_eq!(s.aux_method, AuxMethod::A);
        assert_eq!(s.iterations, 10);
        assert_eq!(s.alpha, 5.0);
        assert_eq!(s.seed, 7);
        assert_eq!(init, InitialAuxiliary::Model);
        assert_eq!(c.observations.simulate.as_ref().unwrap().mesh_steps().unwrap(), 1000);
    }

    #[test]
    fn resolved_section_round_trips() {
        let c: RunConfig = toml::from_str(MINIMAL).unwrap();
        let (s, init) = c.smoother.resolve(c.seed).unwrap();
        let full = SmootherSection::from_resolved(&s, init);
        let (s2, init2) = full.resolve(c.seed).unwrap();
        assert_eq!(SmootherSection::from_resolved(&s2, init2), full);
        let text = toml::to_string(&RunConfig {
            smoother: full,
            ..c.clone()
        })
        .unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.smoother.tableau.as_deref(), Some(s.tableau.name()));
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        assert!(toml::from_str::<RunConfig>(&MINIMAL.replace("iterations", "iters")).is_err());
        let c: RunConfig = toml::from_str(&MINIMAL.replace("\"a\"", "\"z\"")).unwrap();
        assert!(c.smoother.resolve(1).is_err());
        let c: RunConfig = toml::from_str(&MINIMAL.replace("mesh = 0.001", "mesh = 0.3")).unwrap();
        assert!(c.observations.simulate.unwrap().mesh_steps().is_err());
    }

    #[test]
    fn default_operators_are_identity() {
        let o = ObservationsConfig::default();
        let ops = o.operators(3, 2).unwrap();
        assert_eq!(ops.len(), 2);
        assert_eq!(ops[0].0, DMatrix::identity(3, 3));
        assert_eq!(ops[1].1, DMatrix::identity(3, 3));
    }
}
