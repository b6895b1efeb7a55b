//! Batch experiment commands: generate synthetic targets, identify
//! parameters, run replicated noise studies, scan objective landscapes
//! and summarize a run directory.
//!
//! Every command is a pure function of its configuration, input files and
//! seeds; artifacts are byte-stable across re-runs. Wall-clock timings go
//! to a sidecar log so the artifacts themselves stay reproducible.

use crate::config::{ConfigError, ExperimentConfig};
use crate::data_io::{
    add_noise, generate_targets, load_observations, save_observations, DataError,
};
use crate::experiment::{
    perturb_study, scan, ExperimentError, ObjectiveForm, ResidualEvaluator, SCAN_ALPHAS,
};
use crate::forward::{make_initial_data, simulate, SolverError};
use crate::models::Slot;
use crate::objective::{build_bulk_mesh, phase_field_fields, ObservationSet};
use crate::optimizer::{relative_error_report, LMResult, OptimError, Termination};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("observations file {0} does not exist; run the simulate command first")]
    MissingObservations(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit code: 2 configuration errors, 3 forward-solver
    /// failures, 4 is reserved for non-convergence (reported by the
    /// identify command itself), 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::MissingObservations(_) => 2,
            CliError::Data(DataError::Parse { .. }) | CliError::Data(DataError::Invalid { .. }) => 2,
            CliError::Experiment(ExperimentError::Solver(_)) => 3,
            CliError::Experiment(ExperimentError::Optimizer(
                OptimError::FailedAtInitialGuess | OptimError::JacobianFailure { .. },
            )) => 3,
            CliError::Experiment(ExperimentError::Objective(_))
            | CliError::Experiment(ExperimentError::Model(_))
            | CliError::Experiment(ExperimentError::TooFewObservations { .. })
            | CliError::Experiment(ExperimentError::ScanParameterNotFree(_))
            | CliError::Experiment(ExperimentError::MissingTruth) => 2,
            _ => 1,
        }
    }
}

/// Exit code signalling that the optimizer hit its iteration cap.
pub const EXIT_NON_CONVERGENCE: i32 = 4;

/// Command-line overrides applied on top of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Paths and pre-parsed pieces shared by all commands.
pub struct Workspace {
    pub config: ExperimentConfig,
    pub config_dir: PathBuf,
    pub output_dir: PathBuf,
    pub observations_path: PathBuf,
}

impl Workspace {
    pub fn open(config_path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let mut config = ExperimentConfig::load(config_path)?;
        if let Some(seed) = overrides.seed {
            if let Some(noise) = config.data.noise.as_mut() {
                noise.seed = seed;
            }
            if let Some(perturb) = config.perturb.as_mut() {
                perturb.seed = seed;
            }
        }
        let config_dir = config_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let output_dir = overrides
            .output_dir
            .clone()
            .unwrap_or_else(|| config.output_dir.clone());
        let output_dir = resolve(&config_dir, &output_dir);
        let observations_path = resolve(&config_dir, &config.data.observations);
        Ok(Self {
            config,
            config_dir,
            output_dir,
            observations_path,
        })
    }

    fn ensure_output_dir(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.output_dir).map_err(|source| CliError::Io {
            path: self.output_dir.display().to_string(),
            source,
        })
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        self.ensure_output_dir()?;
        let path = self.output_dir.join(name);
        std::fs::write(&path, contents).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(path)
    }

    fn append_log(&self, line: &str) {
        if self.ensure_output_dir().is_ok() {
            use std::io::Write;
            if let Ok(mut f) = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(self.output_dir.join("run.log"))
            {
                let _ = writeln!(f, "{line}");
            }
        }
    }

    fn load_or_generate_observations(&self) -> Result<ObservationSet, CliError> {
        if self.observations_path.exists() {
            Ok(load_observations(&self.observations_path)?)
        } else {
            Ok(self.generate_clean_observations()?.0)
        }
    }

    /// Clean targets at the model's base (true) parameter values.
    fn generate_clean_observations(
        &self,
    ) -> Result<(ObservationSet, Vec<f64>), ExperimentError> {
        let solver = self.config.solver_config();
        let model = self
            .config
            .model_spec()
            .map_err(|e| ExperimentError::Solver(SolverError::InvalidConfig(e.to_string())))?;
        let truth = model
            .true_parameters(&solver.physics)
            .ok_or(ExperimentError::MissingTruth)?;
        let bound = model.bind(&truth, &solver.physics)?;
        let species = self
            .config
            .species_init()
            .map_err(|e| ExperimentError::Solver(SolverError::InvalidConfig(e.to_string())))?;
        let initial = make_initial_data(
            self.config.data.initial_curve,
            solver.n_vertices,
            &species,
        )?;
        let times = self
            .config
            .observation_times()
            .map_err(|e| ExperimentError::Solver(SolverError::InvalidConfig(e.to_string())))?;
        let obs = generate_targets(initial, &solver, &bound, Some(&truth), &times)?;
        Ok((obs, truth))
    }

    fn evaluator(&self, observations: ObservationSet) -> Result<ResidualEvaluator, CliError> {
        let solver = self.config.solver_config();
        let model = self.config.model_spec()?;
        let c0 = self.config.initial_guess();
        Ok(ResidualEvaluator::new(
            observations,
            solver,
            model,
            self.config.objective.form,
            self.config.objective.epsilon,
            self.config.weights_choice(),
            &c0,
        )?)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Generate synthetic targets at the configured (true) parameter values,
/// apply the configured noise if any, and write the observation file plus
/// a trajectory export and a per-snapshot summary.
pub fn cmd_simulate(config_path: &Path, overrides: &Overrides) -> Result<i32, CliError> {
    let started = std::time::Instant::now();
    let ws = Workspace::open(config_path, overrides)?;
    let (clean, truth) = ws.generate_clean_observations()?;
    let observations = match &ws.config.data.noise {
        Some(noise) if noise.k_n > 0.0 => add_noise(&clean, &noise.spec())?,
        _ => clean.clone(),
    };
    if let Some(parent) = ws.observations_path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    save_observations(&observations, &ws.observations_path)?;

    // Trajectory export (clean forward run) for plotting.
    let solver = ws.config.solver_config();
    let model = ws.config.model_spec()?;
    let bound = model.bind(&truth, &solver.physics)?;
    let species = ws.config.species_init()?;
    let initial = make_initial_data(ws.config.data.initial_curve, solver.n_vertices, &species)?;
    let times = ws.config.observation_times()?;
    let trajectory = simulate(initial, &solver, &bound, &times)?;
    ws.write("trajectory.json", &trajectory.to_json_string())?;

    let mut summary = String::from("snapshot,t,enclosed_area");
    let n_species = observations.n_species();
    for s in 0..n_species {
        let _ = write!(summary, ",a{}_min,a{}_max", s + 1, s + 1);
    }
    summary.push('\n');
    for (i, snap) in trajectory.snapshots.iter().enumerate() {
        let area = crate::geometry::enclosed_area(&snap.curve);
        let _ = write!(summary, "{i},{},{area:.12e}", snap.time);
        for s in 0..n_species {
            let field = snap.fields.species(s);
            let (lo, hi) = field
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            let _ = write!(summary, ",{lo:.6e},{hi:.6e}");
        }
        summary.push('\n');
    }
    ws.write("summary.csv", &summary)?;
    ws.append_log(&format!(
        "simulate: {} snapshots in {:.2?}",
        trajectory.snapshots.len(),
        started.elapsed()
    ));
    println!(
        "wrote {} snapshots to {}",
        observations.snapshots.len(),
        ws.observations_path.display()
    );
    Ok(0)
}

/// Everything the identify command writes about one run.
#[derive(Debug, Serialize, Deserialize)]
pub struct IdentifyReport {
    pub parameter_names: Vec<String>,
    pub starting_values: Vec<f64>,
    pub identified_values: Vec<f64>,
    pub true_values: Option<Vec<f64>>,
    pub relative_errors_percent: Option<Vec<f64>>,
    pub termination: Termination,
    pub iterations: usize,
    pub function_evaluations: usize,
    pub objective: f64,
    pub residual_norm: f64,
}

fn slot_names(config: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    let model = config.model_spec()?;
    let mut names = vec![String::new(); model.n_parameters()];
    for fs in &model.free {
        names[fs.index] = fs.slot.to_string();
    }
    Ok(names)
}

fn trace_csv(result: &LMResult, names: &[String]) -> String {
    let mut out = String::from(
        "iteration,accepted,objective,position_part,concentration_part,mu,cumulative_evaluations",
    );
    for name in names {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for it in &result.iterates {
        let _ = write!(
            out,
            "{},{},{:.17e},{:.17e},{:.17e},{:.6e},{}",
            it.iteration,
            it.accepted,
            it.objective,
            it.position_part,
            it.concentration_part,
            it.mu,
            it.cumulative_evaluations
        );
        for p in &it.parameters {
            let _ = write!(out, ",{p:.17e}");
        }
        out.push('\n');
    }
    out
}

/// Identify parameters from an existing observation file. Exit code 0 on
/// convergence, 4 when the iteration cap was hit.
pub fn cmd_identify(config_path: &Path, overrides: &Overrides) -> Result<i32, CliError> {
    let started = std::time::Instant::now();
    let ws = Workspace::open(config_path, overrides)?;
    if !ws.observations_path.exists() {
        return Err(CliError::MissingObservations(ws.observations_path.clone()));
    }
    let observations = load_observations(&ws.observations_path)?;
    let evaluator = ws.evaluator(observations)?;
    let c0 = ws.config.initial_guess();
    let opts = ws.config.lm_options()?;
    let result = evaluator.identify(&c0, &opts)?;

    let names = slot_names(&ws.config)?;
    let truth = evaluator.truth();
    let relative_errors = truth.as_ref().map(|t| {
        relative_error_report(&result.parameters, t)
            .into_iter()
            .map(|e| e.error)
            .collect::<Vec<_>>()
    });
    let report = IdentifyReport {
        parameter_names: names.clone(),
        starting_values: c0.clone(),
        identified_values: result.parameters.clone(),
        true_values: truth.clone(),
        relative_errors_percent: relative_errors,
        termination: result.termination,
        iterations: result.iterations,
        function_evaluations: result.function_evaluations,
        objective: result.objective,
        residual_norm: result.residual_norm,
    };
    ws.write(
        "result.json",
        &serde_json::to_string_pretty(&report).expect("report serialization cannot fail"),
    )?;
    ws.write("trace.csv", &trace_csv(&result, &names))?;

    // Per-snapshot residual decomposition at the identified parameters.
    if let Ok(chi) = evaluator.try_residuals(&result.parameters) {
        let n_s = chi.n_s;
        let mut breakdown = String::from("snapshot,t,position_residual,concentration_residual\n");
        for i in 0..n_s {
            let _ = writeln!(
                breakdown,
                "{},{},{:.17e},{:.17e}",
                i + 1,
                evaluator.observations.times[i + 1],
                chi.values[i],
                chi.values[i + n_s]
            );
        }
        ws.write("residual_breakdown.csv", &breakdown)?;
    }

    if ws.config.objective.dump_fields && ws.config.objective.form == ObjectiveForm::PhaseField {
        dump_phase_fields(&ws, &evaluator, &result.parameters)?;
    }

    ws.append_log(&format!(
        "identify: {:?} after {} iterations, {} evaluations, {:.2?}",
        result.termination,
        result.iterations,
        result.function_evaluations,
        started.elapsed()
    ));
    for (name, value) in names.iter().zip(&result.parameters) {
        println!("{name} = {value:.6e}");
    }
    println!(
        "termination: {:?} after {} iterations ({} evaluations), J = {:.3e}",
        result.termination, result.iterations, result.function_evaluations, result.objective
    );
    Ok(if result.termination.converged() {
        0
    } else {
        EXIT_NON_CONVERGENCE
    })
}

fn dump_phase_fields(
    ws: &Workspace,
    evaluator: &ResidualEvaluator,
    parameters: &[f64],
) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct FieldDump {
        t: f64,
        origin: [f64; 2],
        h: f64,
        nx: usize,
        ny: usize,
        computed_phi: Vec<f64>,
        observed_phi: Vec<f64>,
        computed_a: Vec<Vec<f64>>,
        observed_a: Vec<Vec<f64>>,
    }
    let solver = &evaluator.solver;
    let bound = evaluator.model.bind(parameters, &solver.physics)?;
    let trajectory = crate::forward::simulate(
        evaluator.initial_data().clone(),
        solver,
        &bound,
        &evaluator.observations.times,
    )
    .map_err(ExperimentError::from)?;
    for (i, obs_snap) in evaluator.observations.snapshots.iter().enumerate().skip(1) {
        let computed = &trajectory.snapshots[i];
        let obs_curve = crate::geometry::Curve::from_point_loop(obs_snap.points.clone())
            .map_err(ExperimentError::from)?;
        let obs_fields =
            crate::geometry::VertexField::new(obs_snap.fields.clone(), obs_snap.points.len())
                .map_err(ExperimentError::from)?;
        let mesh = build_bulk_mesh(&[&computed.curve, &obs_curve], evaluator.epsilon)
            .map_err(ExperimentError::from)?;
        let comp_pf = phase_field_fields(&computed.curve, &computed.fields, &mesh);
        let obs_pf = phase_field_fields(&obs_curve, &obs_fields, &mesh);
        let dump = FieldDump {
            t: obs_snap.time,
            origin: [mesh.origin().x, mesh.origin().y],
            h: mesh.h(),
            nx: mesh.n_cells().0,
            ny: mesh.n_cells().1,
            computed_phi: comp_pf.phi,
            observed_phi: obs_pf.phi,
            computed_a: comp_pf.a_eps,
            observed_a: obs_pf.a_eps,
        };
        ws.write(
            &format!("fields_{i:03}.json"),
            &serde_json::to_string(&dump).expect("field dump serialization cannot fail"),
        )?;
    }
    Ok(())
}

/// Replicated noisy-identification study; writes per-(distribution, k_n)
/// statistics of the relative errors.
pub fn cmd_perturb(config_path: &Path, overrides: &Overrides) -> Result<i32, CliError> {
    let started = std::time::Instant::now();
    let ws = Workspace::open(config_path, overrides)?;
    let study = ws
        .config
        .perturb_study()
        .ok_or_else(|| ConfigError::Invalid("missing [perturb] block".into()))?;
    let clean = ws.load_or_generate_observations()?;
    let solver = ws.config.solver_config();
    let model = ws.config.model_spec()?;
    let c0 = ws.config.initial_guess();
    let opts = ws.config.lm_options()?;
    let cells = perturb_study(
        &clean,
        &solver,
        &model,
        ws.config.objective.form,
        ws.config.objective.epsilon,
        &c0,
        &opts,
        &study,
    )?;
    let names = slot_names(&ws.config)?;
    let mut csv = String::from("distribution,k_n,successes,failures");
    for name in &names {
        let _ = write!(csv, ",mean_{name},std_{name}");
    }
    csv.push('\n');
    for cell in &cells {
        let _ = write!(
            csv,
            "{},{},{},{}",
            format!("{:?}", cell.distribution).to_lowercase(),
            cell.noise_level,
            cell.successes,
            cell.failures
        );
        for (m, s) in cell.mean_relative_error.iter().zip(&cell.std_relative_error) {
            let _ = write!(csv, ",{m:.6},{s:.6}");
        }
        csv.push('\n');
    }
    ws.write("perturb_stats.csv", &csv)?;
    ws.append_log(&format!(
        "perturb: {} cells x {} replications in {:.2?}",
        cells.len(),
        study.replications,
        started.elapsed()
    ));
    print!("{csv}");
    Ok(0)
}

/// Objective-landscape scan over two free parameters.
pub fn cmd_scan(config_path: &Path, overrides: &Overrides) -> Result<i32, CliError> {
    let started = std::time::Instant::now();
    let ws = Workspace::open(config_path, overrides)?;
    let scan_config = ws
        .config
        .scan
        .clone()
        .ok_or_else(|| ConfigError::Invalid("missing [scan] block".into()))?;
    let observations = ws.load_or_generate_observations()?;
    let evaluator = ws.evaluator(observations)?;
    let reference = evaluator.truth().ok_or(ExperimentError::MissingTruth)?;
    let slots: Vec<Slot> = scan_config
        .parameters
        .iter()
        .map(|name| {
            name.parse()
                .map_err(|e: crate::models::ModelError| ConfigError::Invalid(e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let result = scan(
        &evaluator,
        [slots[0], slots[1]],
        &reference,
        scan_config.half_width,
        scan_config.resolution,
    )?;
    let mut csv = format!(
        "{},{}",
        result.parameters[0], result.parameters[1]
    );
    for alpha in SCAN_ALPHAS {
        let _ = write!(csv, ",J_alpha_{alpha}");
    }
    csv.push_str(",position,concentration,failed\n");
    for cell in &result.cells {
        let _ = write!(csv, "{:.12e},{:.12e}", cell.values[0], cell.values[1]);
        for j in &cell.objectives {
            let _ = write!(csv, ",{j:.17e}");
        }
        let _ = writeln!(
            csv,
            ",{:.17e},{:.17e},{}",
            cell.position, cell.concentration, cell.failed
        );
    }
    ws.write("scan.csv", &csv)?;
    let failed = result.cells.iter().filter(|c| c.failed).count();
    ws.append_log(&format!(
        "scan: {} cells ({failed} failed) in {:.2?}",
        result.cells.len(),
        started.elapsed()
    ));
    println!(
        "scan over {} x {}: {} cells, {} failed",
        result.parameters[0],
        result.parameters[1],
        result.cells.len(),
        failed
    );
    Ok(0)
}

/// Aggregate the artifacts of a run directory into a human-readable
/// summary. Never recomputes anything; missing artifacts are listed and a
/// partial report is still produced.
pub fn cmd_report(config_path: &Path, overrides: &Overrides) -> Result<i32, CliError> {
    let ws = Workspace::open(config_path, overrides)?;
    let dir = &ws.output_dir;
    let mut out = String::new();
    let mut missing = Vec::new();

    let result_path = dir.join("result.json");
    if result_path.exists() {
        let text = std::fs::read_to_string(&result_path).map_err(|source| CliError::Io {
            path: result_path.display().to_string(),
            source,
        })?;
        match serde_json::from_str::<IdentifyReport>(&text) {
            Ok(report) => {
                let _ = writeln!(out, "identification result");
                let _ = writeln!(
                    out,
                    "  {:<10} {:>14} {:>14} {:>22}",
                    "parameter", "true value", "starting", "computed (rel % err)"
                );
                for (i, name) in report.parameter_names.iter().enumerate() {
                    let truth = report
                        .true_values
                        .as_ref()
                        .map(|t| format!("{:.6e}", t[i]))
                        .unwrap_or_else(|| "-".into());
                    let err = report
                        .relative_errors_percent
                        .as_ref()
                        .map(|e| format!("({:.2})", e[i]))
                        .unwrap_or_default();
                    let _ = writeln!(
                        out,
                        "  {:<10} {:>14} {:>14.6e} {:>14.6e} {}",
                        name, truth, report.starting_values[i], report.identified_values[i], err
                    );
                }
                let _ = writeln!(
                    out,
                    "  termination: {:?} after {} iterations, {} evaluations, J = {:.3e}",
                    report.termination,
                    report.iterations,
                    report.function_evaluations,
                    report.objective
                );
            }
            Err(e) => {
                let _ = writeln!(out, "result.json unreadable: {e}");
            }
        }
    } else {
        missing.push("result.json");
    }

    for artifact in ["trace.csv", "perturb_stats.csv", "scan.csv", "summary.csv"] {
        let path = dir.join(artifact);
        if path.exists() {
            let lines = std::fs::read_to_string(&path)
                .map(|t| t.lines().count())
                .unwrap_or(0);
            let _ = writeln!(out, "{artifact}: {lines} lines");
        } else {
            missing.push(artifact);
        }
    }
    if !missing.is_empty() {
        let _ = writeln!(out, "missing artifacts: {}", missing.join(", "));
    }
    if out.is_empty() {
        out = format!("no artifacts found in {}\n", dir.display());
    }
    ws.write("report.txt", &out)?;
    print!("{out}");
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_map_error_classes() {
        let config_err = CliError::Config(ConfigError::Invalid("x".into()));
        assert_eq!(config_err.exit_code(), 2);
        let missing = CliError::MissingObservations(PathBuf::from("x.json"));
        assert_eq!(missing.exit_code(), 2);
        let forward = CliError::Experiment(ExperimentError::Solver(SolverError::Diverged {
            step: 3,
            time: 0.03,
        }));
        assert_eq!(forward.exit_code(), 3);
    }
}
