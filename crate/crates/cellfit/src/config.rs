//! Plain-text experiment configuration: one TOML file describes the
//! forward discretization, the model with its free parameters and boxes,
//! the objective form, the optimizer settings, data locations and the
//! optional scan/perturbation blocks.

use crate::data_io::{NoiseDistribution, NoiseSpec};
use crate::experiment::{ObjectiveForm, PerturbStudy, WeightsChoice};
use crate::forward::{InitialCurve, SolverConfig, SpeciesInit};
use crate::models::{Forcing, FreeSlot, Kinetics, ModelSpec, Physics, Slot};
use crate::optimizer::{LMOptions, ScalingReference};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub forward: ForwardConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
    pub scan: Option<ScanConfig>,
    pub perturb: Option<PerturbConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    pub dt: f64,
    pub n_vertices: usize,
    #[serde(default = "default_remesh_ratio")]
    pub remesh_ratio_threshold: f64,
    #[serde(default = "default_true")]
    pub remesh_enabled: bool,
    #[serde(default)]
    pub check_self_intersection: bool,
    #[serde(default)]
    pub anti_restoring_volume_sign: bool,
    pub sigma: f64,
    pub k_b: f64,
    #[serde(default)]
    pub lambda: f64,
    pub diffusion: Vec<f64>,
}

fn default_remesh_ratio() -> f64 {
    3.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kinetics: KineticsConfig,
    pub forcing: ForcingConfig,
    #[serde(default)]
    pub free: Vec<FreeParameterConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KineticsConfig {
    None,
    Schnakenberg { gamma: f64, k1: f64, k2: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingConfig {
    None,
    Proportional {
        k_p: Vec<f64>,
    },
    YeastThreshold {
        k1: f64,
        k2: f64,
        #[serde(default = "default_k_reg")]
        k_reg: f64,
        #[serde(default)]
        smoothstep_transition: bool,
    },
}

fn default_k_reg() -> f64 {
    5e-2
}

/// A free parameter needs a slot name, a starting guess and an explicit
/// box; configurations without bounds are rejected at parse time.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeParameterConfig {
    pub slot: String,
    pub initial: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    #[serde(default = "default_form")]
    pub form: ObjectiveForm,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub weights: WeightsConfig,
    /// Also write the nodal diffuse-interface fields of the final
    /// parameters (phase-field form only).
    #[serde(default)]
    pub dump_fields: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            form: default_form(),
            epsilon: default_epsilon(),
            weights: WeightsConfig::default(),
            dump_fields: false,
        }
    }
}

fn default_form() -> ObjectiveForm {
    ObjectiveForm::Sharp
}

fn default_epsilon() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(untagged)]
pub enum WeightsConfig {
    #[default]
    #[serde(skip)]
    DefaultOnes,
    Preset(WeightPreset),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPreset {
    Ones,
    Balanced,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default = "default_tolerance")]
    pub stop_gradient: f64,
    #[serde(default = "default_tolerance")]
    pub stop_update: f64,
    #[serde(default = "default_tolerance")]
    pub stop_error: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_damping_init")]
    pub damping_init_factor: f64,
    #[serde(default = "default_scaling")]
    pub scaling_reference: ScalingChoice,
    #[serde(default)]
    pub central_differences: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            fd_step: default_fd_step(),
            stop_gradient: default_tolerance(),
            stop_update: default_tolerance(),
            stop_error: default_tolerance(),
            max_iterations: default_max_iterations(),
            damping_init_factor: default_damping_init(),
            scaling_reference: default_scaling(),
            central_differences: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ScalingChoice {
    InitialGuess,
    TrueValues,
}

fn default_fd_step() -> f64 {
    5e-3
}

fn default_tolerance() -> f64 {
    1e-6
}

fn default_max_iterations() -> usize {
    100
}

fn default_damping_init() -> f64 {
    1e-3
}

fn default_scaling() -> ScalingChoice {
    ScalingChoice::InitialGuess
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Observation file: written by `simulate`, read by `identify`.
    pub observations: PathBuf,
    pub observation_times: ObservationTimes,
    #[serde(default = "default_initial_curve")]
    pub initial_curve: InitialCurve,
    pub initial_species: Option<SpeciesConfig>,
    pub noise: Option<NoiseConfig>,
}

fn default_initial_curve() -> InitialCurve {
    InitialCurve::UnitCircle
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ObservationTimes {
    Explicit(Vec<f64>),
    Uniform { start: f64, stop: f64, count: usize },
}

impl ObservationTimes {
    pub fn expand(&self) -> Result<Vec<f64>, ConfigError> {
        match self {
            ObservationTimes::Explicit(times) => {
                if times.is_empty() {
                    return Err(invalid("observation_times must not be empty"));
                }
                Ok(times.clone())
            }
            ObservationTimes::Uniform { start, stop, count } => {
                if *count < 2 || stop <= start {
                    return Err(invalid(
                        "uniform observation_times need count >= 2 and stop > start",
                    ));
                }
                Ok((0..*count)
                    .map(|i| start + (stop - start) * i as f64 / (*count - 1) as f64)
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpeciesConfig {
    Homogeneous { values: Vec<f64> },
    PerturbedSteadyState,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub distribution: NoiseDistribution,
    pub k_n: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseConfig {
    pub fn spec(&self) -> NoiseSpec {
        NoiseSpec {
            distribution: self.distribution,
            standard_deviation: self.k_n,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub parameters: [String; 2],
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
}

fn default_resolution() -> usize {
    33
}

fn default_half_width() -> f64 {
    0.25
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbConfig {
    pub replications: usize,
    pub noise_levels: Vec<f64>,
    pub distributions: Vec<NoiseDistribution>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.display().to_string(),
                source: Box::new(source),
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_str_validated(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|source| ConfigError::Parse {
                path: "<inline>".into(),
                source: Box::new(source),
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let solver = self.solver_config();
        solver.validate().map_err(|e| invalid(e.to_string()))?;
        let model = self.model_spec()?;
        model
            .validate(&solver.physics)
            .map_err(|e| invalid(e.to_string()))?;
        for (k, fp) in self.model.free.iter().enumerate() {
            if fp.initial < fp.lower || fp.initial > fp.upper {
                return Err(invalid(format!(
                    "free parameter `{}` initial guess {} outside [{}, {}]",
                    fp.slot, fp.initial, fp.lower, fp.upper
                )));
            }
            let _ = k;
        }
        let times = self.data.observation_times.expand()?;
        let n_s = times.len().saturating_sub(1);
        if 2 * n_s < model.n_parameters() {
            return Err(invalid(format!(
                "{} residual entries cannot determine {} parameters",
                2 * n_s,
                model.n_parameters()
            )));
        }
        if let WeightsConfig::Explicit(w) = &self.objective.weights {
            if w.len() != 2 * n_s {
                return Err(invalid(format!(
                    "explicit weights have {} entries, need {}",
                    w.len(),
                    2 * n_s
                )));
            }
        }
        if !(self.objective.epsilon > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        if let Some(scan) = &self.scan {
            for name in &scan.parameters {
                let slot: Slot = name
                    .parse()
                    .map_err(|e: crate::models::ModelError| invalid(e.to_string()))?;
                if !model.free.iter().any(|fs| fs.slot == slot) {
                    return Err(invalid(format!("scan parameter `{name}` is not free")));
                }
            }
            if scan.resolution == 0 {
                return Err(invalid("scan resolution must be positive"));
            }
        }
        if let Some(perturb) = &self.perturb {
            if perturb.replications == 0 {
                return Err(invalid("perturb replications must be positive"));
            }
            if perturb.noise_levels.iter().any(|&k| k < 0.0) {
                return Err(invalid("noise levels must be non-negative"));
            }
        }
        if let Some(noise) = &self.data.noise {
            if noise.k_n < 0.0 {
                return Err(invalid("noise k_n must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            dt: self.forward.dt,
            n_vertices: self.forward.n_vertices,
            remesh_ratio_threshold: self.forward.remesh_ratio_threshold,
            remesh_enabled: self.forward.remesh_enabled,
            check_self_intersection: self.forward.check_self_intersection,
            anti_restoring_volume_sign: self.forward.anti_restoring_volume_sign,
            physics: Physics {
                sigma: self.forward.sigma,
                k_b: self.forward.k_b,
                lambda: self.forward.lambda,
                diffusion: self.forward.diffusion.clone(),
            },
        }
    }

    pub fn kinetics(&self) -> Kinetics {
        match &self.model.kinetics {
            KineticsConfig::None => Kinetics::None,
            KineticsConfig::Schnakenberg { gamma, k1, k2 } => Kinetics::Schnakenberg {
                gamma: *gamma,
                k1: *k1,
                k2: *k2,
            },
        }
    }

    pub fn forcing(&self) -> Forcing {
        match &self.model.forcing {
            ForcingConfig::None => Forcing::None,
            ForcingConfig::Proportional { k_p } => Forcing::Proportional { k_p: k_p.clone() },
            ForcingConfig::YeastThreshold {
                k1,
                k2,
                k_reg,
                smoothstep_transition,
            } => Forcing::YeastThreshold {
                k1: *k1,
                k2: *k2,
                k_reg: *k_reg,
                smoothstep_transition: *smoothstep_transition,
            },
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec, ConfigError> {
        let mut free = Vec::with_capacity(self.model.free.len());
        let mut bounds = Vec::with_capacity(self.model.free.len());
        for (index, fp) in self.model.free.iter().enumerate() {
            let slot: Slot = fp
                .slot
                .parse()
                .map_err(|e: crate::models::ModelError| invalid(e.to_string()))?;
            free.push(FreeSlot { slot, index });
            bounds.push((fp.lower, fp.upper));
        }
        Ok(ModelSpec {
            kinetics: self.kinetics(),
            forcing: self.forcing(),
            free,
            bounds,
        })
    }

    pub fn initial_guess(&self) -> Vec<f64> {
        self.model.free.iter().map(|fp| fp.initial).collect()
    }

    pub fn observation_times(&self) -> Result<Vec<f64>, ConfigError> {
        self.data.observation_times.expand()
    }

    pub fn species_init(&self) -> Result<SpeciesInit, ConfigError> {
        match &self.data.initial_species {
            Some(SpeciesConfig::Homogeneous { values }) => {
                Ok(SpeciesInit::Homogeneous(values.clone()))
            }
            Some(SpeciesConfig::PerturbedSteadyState) => match &self.model.kinetics {
                KineticsConfig::Schnakenberg { gamma, k1, k2 } => {
                    Ok(SpeciesInit::PerturbedSteadyState {
                        gamma: *gamma,
                        k1: *k1,
                        k2: *k2,
                    })
                }
                KineticsConfig::None => Err(invalid(
                    "perturbed_steady_state initial species need schnakenberg kinetics",
                )),
            },
            None => Err(invalid(
                "data.initial_species is required to generate targets",
            )),
        }
    }

    pub fn weights_choice(&self) -> WeightsChoice {
        match &self.objective.weights {
            WeightsConfig::DefaultOnes => WeightsChoice::Ones,
            WeightsConfig::Preset(WeightPreset::Ones) => WeightsChoice::Ones,
            WeightsConfig::Preset(WeightPreset::Balanced) => WeightsChoice::Balanced,
            WeightsConfig::Explicit(w) => WeightsChoice::Explicit(w.clone()),
        }
    }

    /// Optimizer options; true-value scaling resolves against the model's
    /// base slot values.
    pub fn lm_options(&self) -> Result<LMOptions, ConfigError> {
        let scaling = match self.optimizer.scaling_reference {
            ScalingChoice::InitialGuess => ScalingReference::InitialGuess,
            ScalingChoice::TrueValues => {
                let model = self.model_spec()?;
                let truth = model
                    .true_parameters(&self.solver_config().physics)
                    .ok_or_else(|| invalid("true-value scaling needs resolvable slot values"))?;
                if truth.iter().any(|&t| t == 0.0) {
                    return Err(invalid("true-value scaling needs nonzero true values"));
                }
                ScalingReference::Provided(truth)
            }
        };
        Ok(LMOptions {
            fd_step: self.optimizer.fd_step,
            stop_gradient: self.optimizer.stop_gradient,
            stop_update: self.optimizer.stop_update,
            stop_error: self.optimizer.stop_error,
            max_iterations: self.optimizer.max_iterations,
            damping_init_factor: self.optimizer.damping_init_factor,
            scaling,
            central_differences: self.optimizer.central_differences,
            max_inner_rejections: 20,
        })
    }

    pub fn perturb_study(&self) -> Option<PerturbStudy> {
        self.perturb.as_ref().map(|p| PerturbStudy {
            replications: p.replications,
            noise_levels: p.noise_levels.clone(),
            distributions: p.distributions.clone(),
            base_seed: p.seed,
        })
    }
}
