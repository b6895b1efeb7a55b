//! Orchestration layer tying the forward solver, objective and optimizer
//! together: residual evaluation at a parameter vector, identification,
//! objective-landscape scans and replicated noisy-identification studies.

use crate::data_io::{add_noise, DataError, NoiseDistribution, NoiseSpec};
use crate::forward::{simulate, SolverConfig, SolverError};
use crate::geometry::{Curve, GeometryError, VertexField};
use crate::models::{ModelError, ModelSpec, Slot};
use crate::objective::{
    objective_value, phase_field_residuals, sharp_residuals, ObjectiveError, ObservationSet,
    ResidualVector, WeightVector,
};
use crate::optimizer::{lm_solve, LMOptions, LMResult, OptimError, ParameterBox};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Optimizer(#[from] OptimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{observations} residual entries cannot determine {parameters} parameters")]
    TooFewObservations {
        observations: usize,
        parameters: usize,
    },
    #[error("scan parameter `{0}` is not among the free parameters")]
    ScanParameterNotFree(String),
    #[error("ground truth unavailable: observations carry no generating parameters")]
    MissingTruth,
}

/// Which mismatch functional drives the identification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveForm {
    Sharp,
    PhaseField,
}

/// Weight selection: unit weights, automatic balancing at a reference
/// parameter vector, or an explicit vector.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightsChoice {
    Ones,
    Balanced,
    Explicit(Vec<f64>),
}

/// Residual evaluation bound to one observation set, solver configuration
/// and model. Evaluations at distinct parameter vectors are pure and can
/// run concurrently.
pub struct ResidualEvaluator {
    pub observations: ObservationSet,
    pub solver: SolverConfig,
    pub model: ModelSpec,
    pub form: ObjectiveForm,
    pub epsilon: f64,
    pub weights: WeightVector,
    initial: (Curve, VertexField),
}

impl ResidualEvaluator {
    /// Validate all invariants once and resolve the weight choice. The
    /// `reference_parameters` anchor the balanced-weights preset.
    pub fn new(
        observations: ObservationSet,
        solver: SolverConfig,
        model: ModelSpec,
        form: ObjectiveForm,
        epsilon: f64,
        weights: WeightsChoice,
        reference_parameters: &[f64],
    ) -> Result<Self, ExperimentError> {
        solver.validate()?;
        model.validate(&solver.physics)?;
        observations.validate()?;
        let n_s = observations.n_fitted();
        if n_s == 0 {
            return Err(ObjectiveError::TooFewSnapshots.into());
        }
        if 2 * n_s < model.n_parameters() {
            return Err(ExperimentError::TooFewObservations {
                observations: 2 * n_s,
                parameters: model.n_parameters(),
            });
        }
        let first = &observations.snapshots[0];
        let initial_curve = Curve::new(first.points.clone())?;
        let initial_fields = VertexField::new(first.fields.clone(), first.points.len())?;
        let mut evaluator = Self {
            observations,
            solver,
            model,
            form,
            epsilon,
            weights: WeightVector::ones(n_s),
            initial: (initial_curve, initial_fields),
        };
        evaluator.weights = match weights {
            WeightsChoice::Ones => WeightVector::ones(n_s),
            WeightsChoice::Explicit(w) => WeightVector::new(w)?,
            WeightsChoice::Balanced => {
                let unweighted =
                    evaluator.residual_vector(reference_parameters, &WeightVector::ones(n_s))?;
                WeightVector::balanced_from_unweighted(&unweighted)
            }
        };
        Ok(evaluator)
    }

    pub fn n_fitted(&self) -> usize {
        self.observations.n_fitted()
    }

    pub fn initial_data(&self) -> &(Curve, VertexField) {
        &self.initial
    }

    pub fn parameter_box(&self) -> Result<ParameterBox, ExperimentError> {
        Ok(ParameterBox::from_pairs(&self.model.bounds)?)
    }

    /// Ground truth recorded with the observations, falling back to the
    /// model's base slot values.
    pub fn truth(&self) -> Option<Vec<f64>> {
        self.observations
            .metadata
            .c_true
            .clone()
            .filter(|c| c.len() == self.model.n_parameters())
            .or_else(|| self.model.true_parameters(&self.solver.physics))
    }

    fn residual_vector(
        &self,
        c: &[f64],
        weights: &WeightVector,
    ) -> Result<ResidualVector, ExperimentError> {
        let bound = self.model.bind(c, &self.solver.physics)?;
        let trajectory = simulate(
            self.initial.clone(),
            &self.solver,
            &bound,
            &self.observations.times,
        )?;
        let tolerance = 0.5 * self.solver.dt;
        let residuals = match self.form {
            ObjectiveForm::Sharp => {
                sharp_residuals(&trajectory, &self.observations, weights, tolerance)?
            }
            ObjectiveForm::PhaseField => phase_field_residuals(
                &trajectory,
                &self.observations,
                weights,
                self.epsilon,
                tolerance,
            )?,
        };
        Ok(residuals)
    }

    /// Detailed residuals at `c`, or the error that prevented them.
    pub fn try_residuals(&self, c: &[f64]) -> Result<ResidualVector, ExperimentError> {
        self.residual_vector(c, &self.weights)
    }

    /// Residuals as the optimizer sees them: a failed forward solve turns
    /// into the large finite sentinel so trial points are rejected rather
    /// than aborting the run.
    pub fn residuals(&self, c: &[f64]) -> DVector<f64> {
        match self.residual_vector(c, &self.weights) {
            Ok(r) => r.values,
            Err(_) => ResidualVector::sentinel(self.n_fitted()).values,
        }
    }

    /// Box-constrained identification from the given start.
    pub fn identify(&self, c0: &[f64], opts: &LMOptions) -> Result<LMResult, ExperimentError> {
        let bounds = self.parameter_box()?;
        let f = |c: &[f64]| self.residuals(c);
        Ok(lm_solve(&f, c0, &bounds, opts)?)
    }
}

/// One evaluated cell of an objective-landscape scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanCell {
    pub values: [f64; 2],
    /// J at each concentration-weight preset alpha (position weights 1).
    pub objectives: Vec<f64>,
    /// Unweighted split: position part and concentration part of J.
    pub position: f64,
    pub concentration: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanResult {
    pub parameters: [String; 2],
    pub alphas: Vec<f64>,
    pub axes: [Vec<f64>; 2],
    pub cells: Vec<ScanCell>,
}

impl ScanResult {
    /// Cell with the smallest objective at the given alpha index,
    /// ignoring failed cells.
    pub fn minimum(&self, alpha_index: usize) -> Option<&ScanCell> {
        self.cells
            .iter()
            .filter(|c| !c.failed)
            .min_by(|a, b| {
                a.objectives[alpha_index]
                    .partial_cmp(&b.objectives[alpha_index])
                    .unwrap()
            })
    }
}

/// Concentration-weight presets evaluated by scans.
pub const SCAN_ALPHAS: [f64; 3] = [0.01, 1.0, 100.0];

/// Evaluate the objective on a uniform grid over two free parameters,
/// centred on the reference values, spanning +/- `half_width` of them.
/// The remaining free parameters stay at the reference. Cells run in
/// parallel; forward failures are recorded as failed cells.
pub fn scan(
    evaluator: &ResidualEvaluator,
    slots: [Slot; 2],
    reference: &[f64],
    half_width: f64,
    resolution: usize,
) -> Result<ScanResult, ExperimentError> {
    let mut indices = [0usize; 2];
    for (k, slot) in slots.iter().enumerate() {
        indices[k] = evaluator
            .model
            .free
            .iter()
            .find(|fs| fs.slot == *slot)
            .map(|fs| fs.index)
            .ok_or_else(|| ExperimentError::ScanParameterNotFree(slot.to_string()))?;
    }
    let axis = |center: f64| -> Vec<f64> {
        if resolution == 1 {
            return vec![center];
        }
        (0..resolution)
            .map(|i| center * (1.0 - half_width + 2.0 * half_width * i as f64 / (resolution - 1) as f64))
            .collect()
    };
    let axes = [axis(reference[indices[0]]), axis(reference[indices[1]])];
    let unit_weights = WeightVector::ones(evaluator.n_fitted());
    let grid: Vec<[f64; 2]> = axes[1]
        .iter()
        .flat_map(|&v2| axes[0].iter().map(move |&v1| [v1, v2]))
        .collect();
    let cells: Vec<ScanCell> = grid
        .par_iter()
        .map(|&values| {
            let mut c = reference.to_vec();
            c[indices[0]] = values[0];
            c[indices[1]] = values[1];
            match evaluator.residual_vector(&c, &unit_weights) {
                Ok(residuals) => {
                    let split = objective_value(&residuals);
                    let objectives = SCAN_ALPHAS
                        .iter()
                        .map(|alpha| split.position + alpha * split.concentration)
                        .collect();
                    ScanCell {
                        values,
                        objectives,
                        position: split.position,
                        concentration: split.concentration,
                        failed: false,
                    }
                }
                Err(_) => ScanCell {
                    values,
                    objectives: vec![f64::NAN; SCAN_ALPHAS.len()],
                    position: f64::NAN,
                    concentration: f64::NAN,
                    failed: true,
                },
            }
        })
        .collect();
    Ok(ScanResult {
        parameters: [slots[0].to_string(), slots[1].to_string()],
        alphas: SCAN_ALPHAS.to_vec(),
        axes,
        cells,
    })
}

/// Settings of a replicated noisy-identification study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbStudy {
    pub replications: usize,
    pub noise_levels: Vec<f64>,
    pub distributions: Vec<NoiseDistribution>,
    pub base_seed: u64,
}

/// Aggregated outcome for one (distribution, noise level) pair: mean and
/// standard deviation of the per-parameter relative errors (percent) over
/// the successful replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbCell {
    pub distribution: NoiseDistribution,
    pub noise_level: f64,
    pub mean_relative_error: Vec<f64>,
    pub std_relative_error: Vec<f64>,
    pub successes: usize,
    pub failures: usize,
}

/// Run the study: for every (distribution, noise level) pair, `replications`
/// independently seeded noisy copies of the clean observations are fitted
/// from `c0` and the relative errors against the truth are aggregated.
/// Replicate r uses seed base_seed + r for every pair, and draws scale
/// linearly with the noise level, so levels share underlying noise samples
/// and their errors are directly comparable.
pub fn perturb_study(
    clean: &ObservationSet,
    solver: &SolverConfig,
    model: &ModelSpec,
    form: ObjectiveForm,
    epsilon: f64,
    c0: &[f64],
    opts: &LMOptions,
    study: &PerturbStudy,
) -> Result<Vec<PerturbCell>, ExperimentError> {
    let truth = clean
        .metadata
        .c_true
        .clone()
        .or_else(|| model.true_parameters(&solver.physics))
        .ok_or(ExperimentError::MissingTruth)?;
    let n_p = model.n_parameters();
    let mut cells = Vec::new();
    for &distribution in &study.distributions {
        for &noise_level in &study.noise_levels {
            let runs: Vec<Option<Vec<f64>>> = (0..study.replications)
                .into_par_iter()
                .map(|r| {
                    let spec = NoiseSpec {
                        distribution,
                        standard_deviation: noise_level,
                        seed: study.base_seed.wrapping_add(r as u64),
                    };
                    let noisy = match add_noise(clean, &spec) {
                        Ok(obs) => obs,
                        Err(_) => return None,
                    };
                    let evaluator = ResidualEvaluator::new(
                        noisy,
                        solver.clone(),
                        model.clone(),
                        form,
                        epsilon,
                        WeightsChoice::Ones,
                        c0,
                    )
                    .ok()?;
                    let result = evaluator.identify(c0, opts).ok()?;
                    let errors: Vec<f64> =
                        crate::optimizer::relative_error_report(&result.parameters, &truth)
                            .into_iter()
                            .map(|e| e.error)
                            .collect();
                    Some(errors)
                })
                .collect();
            let successes: Vec<&Vec<f64>> = runs.iter().flatten().collect();
            let n_ok = successes.len();
            let mut mean = vec![0.0; n_p];
            let mut std = vec![0.0; n_p];
            if n_ok > 0 {
                for errors in &successes {
                    for (m, e) in mean.iter_mut().zip(errors.iter()) {
                        *m += e;
                    }
                }
                for m in mean.iter_mut() {
                    *m /= n_ok as f64;
                }
                for errors in &successes {
                    for ((s, e), m) in std.iter_mut().zip(errors.iter()).zip(&mean) {
                        *s += (e - m) * (e - m);
                    }
                }
                for s in std.iter_mut() {
                    *s = (*s / n_ok as f64).sqrt();
                }
            }
            cells.push(PerturbCell {
                distribution,
                noise_level,
                mean_relative_error: mean,
                std_relative_error: std,
                successes: n_ok,
                failures: study.replications - n_ok,
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::generate_targets;
    use crate::forward::{make_initial_data, InitialCurve, SpeciesInit};
    use crate::models::{Forcing, FreeSlot, Kinetics, Physics};

    /// Small, fast synthetic problem: tension + proportional growth on a
    /// coarse circle, two identifiable parameters.
    fn tiny_problem() -> (ObservationSet, SolverConfig, ModelSpec) {
        let physics = Physics {
            sigma: 0.05,
            k_b: 0.0,
            lambda: 0.0,
            diffusion: vec![1.0],
        };
        let solver = SolverConfig {
            dt: 0.02,
            n_vertices: 24,
            remesh_ratio_threshold: 3.0,
            remesh_enabled: true,
            check_self_intersection: false,
            anti_restoring_volume_sign: false,
            physics: physics.clone(),
        };
        let model = ModelSpec {
            kinetics: Kinetics::None,
            forcing: Forcing::Proportional { k_p: vec![0.08] },
            free: vec![
                FreeSlot {
                    slot: Slot::Sigma,
                    index: 0,
                },
                FreeSlot {
                    slot: Slot::ForcingCoefficient(0),
                    index: 1,
                },
            ],
            bounds: vec![(0.0, 0.15), (0.0, 0.24)],
        };
        let truth = model.true_parameters(&physics).unwrap();
        let bound = model.bind(&truth, &physics).unwrap();
        let initial = make_initial_data(
            InitialCurve::UnitCircle,
            24,
            &SpeciesInit::Homogeneous(vec![0.5]),
        )
        .unwrap();
        let times: Vec<f64> = (0..=4).map(|i| i as f64 * 0.2).collect();
        let obs = generate_targets(initial, &solver, &bound, Some(&truth), &times).unwrap();
        (obs, solver, model)
    }

    #[test]
    fn zero_residuals_at_truth() {
        let (obs, solver, model) = tiny_problem();
        let truth = obs.metadata.c_true.clone().unwrap();
        for form in [ObjectiveForm::Sharp, ObjectiveForm::PhaseField] {
            let evaluator = ResidualEvaluator::new(
                obs.clone(),
                solver.clone(),
                model.clone(),
                form,
                0.5,
                WeightsChoice::Ones,
                &truth,
            )
            .unwrap();
            let chi = evaluator.try_residuals(&truth).unwrap();
            assert_eq!(chi.objective(), 0.0, "{form:?}");
        }
    }

    #[test]
    fn identification_recovers_parameters() {
        let (obs, solver, model) = tiny_problem();
        let truth = obs.metadata.c_true.clone().unwrap();
        let c0 = vec![truth[0] * 1.3, truth[1] * 0.7];
        let evaluator = ResidualEvaluator::new(
            obs,
            solver,
            model,
            ObjectiveForm::Sharp,
            0.5,
            WeightsChoice::Ones,
            &c0,
        )
        .unwrap();
        let result = evaluator.identify(&c0, &LMOptions::default()).unwrap();
        assert!(result.termination.converged());
        for (got, want) in result.parameters.iter().zip(&truth) {
            assert!(
                (got - want).abs() <= 2e-3 * want.abs(),
                "{got} vs {want}"
            );
        }
    }

    #[test]
    fn sentinel_on_failed_evaluation() {
        let (obs, solver, model) = tiny_problem();
        let truth = obs.metadata.c_true.clone().unwrap();
        let evaluator = ResidualEvaluator::new(
            obs,
            solver,
            model,
            ObjectiveForm::Sharp,
            0.5,
            WeightsChoice::Ones,
            &truth,
        )
        .unwrap();
        // Out-of-box c triggers the bind error path.
        let chi = evaluator.residuals(&[10.0, 10.0]);
        assert!(chi.iter().all(|&v| v == crate::objective::SOLVER_FAILURE_RESIDUAL));
    }

    #[test]
    fn scan_minimum_sits_at_truth() {
        let (obs, solver, model) = tiny_problem();
        let truth = obs.metadata.c_true.clone().unwrap();
        let evaluator = ResidualEvaluator::new(
            obs,
            solver,
            model,
            ObjectiveForm::Sharp,
            0.5,
            WeightsChoice::Ones,
            &truth,
        )
        .unwrap();
        let result = scan(
            &evaluator,
            [Slot::Sigma, Slot::ForcingCoefficient(0)],
            &truth,
            0.25,
            5,
        )
        .unwrap();
        assert_eq!(result.cells.len(), 25);
        for alpha_index in 0..SCAN_ALPHAS.len() {
            let min = result.minimum(alpha_index).unwrap();
            assert_eq!(min.values, [truth[0], truth[1]]);
            assert_eq!(min.objectives[alpha_index], 0.0);
        }
    }

    #[test]
    fn scan_rejects_fixed_parameters() {
        let (obs, solver, model) = tiny_problem();
        let truth = obs.metadata.c_true.clone().unwrap();
        let evaluator = ResidualEvaluator::new(
            obs,
            solver,
            model,
            ObjectiveForm::Sharp,
            0.5,
            WeightsChoice::Ones,
            &truth,
        )
        .unwrap();
        assert!(matches!(
            scan(&evaluator, [Slot::KineticsGamma, Slot::Sigma], &truth, 0.25, 3),
            Err(ExperimentError::ScanParameterNotFree(_))
        ));
    }

    #[test]
    fn perturb_study_reproducible_and_clean_at_zero_noise() {
        let (obs, solver, model) = tiny_problem();
        let truth = obs.metadata.c_true.clone().unwrap();
        let c0 = vec![truth[0] * 1.2, truth[1] * 0.8];
        let study = PerturbStudy {
            replications: 2,
            noise_levels: vec![0.0],
            distributions: vec![NoiseDistribution::Normal],
            base_seed: 5,
        };
        let opts = LMOptions::default();
        let a = perturb_study(
            &obs,
            &solver,
            &model,
            ObjectiveForm::Sharp,
            0.5,
            &c0,
            &opts,
            &study,
        )
        .unwrap();
        let b = perturb_study(
            &obs,
            &solver,
            &model,
            ObjectiveForm::Sharp,
            0.5,
            &c0,
            &opts,
            &study,
        )
        .unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].failures, 0);
        // Zero noise: every replication identical, so std = 0.
        assert!(a[0].std_relative_error.iter().all(|&s| s == 0.0));
        assert_eq!(a[0].mean_relative_error, b[0].mean_relative_error);
    }
}
