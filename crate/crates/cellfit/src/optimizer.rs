//! Box-constrained Levenberg-Marquardt minimization of J(c) = 1/2 chi^T chi
//! with forward-difference Jacobians over rescaled parameters.
//!
//! Parameters are rescaled by a per-parameter reference magnitude so that
//! a unit step in the internal coordinates corresponds to the reference
//! size: both the finite-difference step and the damping then act
//! uniformly across parameters of very different orders of magnitude. The
//! reference defaults to the initial guess and can be supplied explicitly.

use crate::objective::SOLVER_FAILURE_RESIDUAL;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("initial guess component {index} = {value} outside its box [{lower}, {upper}]")]
    InitialGuessOutsideBox {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("residual evaluation failed at the initial guess")]
    FailedAtInitialGuess,
    #[error("{residuals} residuals cannot determine {parameters} parameters")]
    Underdetermined {
        residuals: usize,
        parameters: usize,
    },
    #[error("scaling reference component {0} must be nonzero")]
    ZeroScale(usize),
    #[error("bounds have {found} entries for {expected} parameters")]
    BoundsLength { expected: usize, found: usize },
    #[error("more than half of the Jacobian columns failed ({failed}/{total})")]
    JacobianFailure { failed: usize, total: usize },
    #[error("invalid bounds at index {index}: lower {lower} > upper {upper}")]
    InvalidBounds { index: usize, lower: f64, upper: f64 },
}

/// Pointwise parameter bounds; infinite entries disable a side.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParameterBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, OptimError> {
        assert_eq!(lower.len(), upper.len());
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if lo > hi {
                return Err(OptimError::InvalidBounds {
                    index: i,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn from_pairs(bounds: &[(f64, f64)]) -> Result<Self, OptimError> {
        Self::new(
            bounds.iter().map(|b| b.0).collect(),
            bounds.iter().map(|b| b.1).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, c: &[f64]) -> bool {
        c.iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }

    pub fn project(&self, c: &[f64]) -> Vec<f64> {
        c.iter()
            .enumerate()
            .map(|(i, &v)| v.clamp(self.lower[i], self.upper[i]))
            .collect()
    }

    pub fn bounds(&self, i: usize) -> (f64, f64) {
        (self.lower[i], self.upper[i])
    }
}

/// Reference magnitudes used to rescale parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScalingReference {
    /// Scale by the initial guess (entries equal to zero scale by 1).
    InitialGuess,
    /// Scale by externally supplied values, e.g. known true magnitudes.
    Provided(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LMOptions {
    /// Finite-difference step in the rescaled coordinates.
    pub fd_step: f64,
    /// Stop when the max-norm of the scaled gradient J^T chi drops below.
    pub stop_gradient: f64,
    /// Stop when the scaled update norm drops below.
    pub stop_update: f64,
    /// Stop when the residual norm ||chi||_2 drops below.
    pub stop_error: f64,
    pub max_iterations: usize,
    /// mu_0 = damping_init_factor * max diag(J^T J).
    pub damping_init_factor: f64,
    pub scaling: ScalingReference,
    pub central_differences: bool,
    /// Consecutive rejected trial steps before giving up an iteration.
    pub max_inner_rejections: usize,
}

impl Default for LMOptions {
    fn default() -> Self {
        Self {
            fd_step: 5e-3,
            stop_gradient: 1e-6,
            stop_update: 1e-6,
            stop_error: 1e-6,
            max_iterations: 100,
            damping_init_factor: 1e-3,
            scaling: ScalingReference::InitialGuess,
            central_differences: false,
            max_inner_rejections: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    SmallError,
    SmallGradient,
    SmallUpdate,
    MaxIterations,
}

impl Termination {
    /// True when the run ended by meeting a tolerance rather than by the
    /// iteration cap.
    pub fn converged(&self) -> bool {
        !matches!(self, Termination::MaxIterations)
    }
}

/// One recorded step of the iteration (accepted or rejected trial).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    /// Count of accepted steps at the time of recording.
    pub iteration: usize,
    pub parameters: Vec<f64>,
    pub objective: f64,
    pub position_part: f64,
    pub concentration_part: f64,
    pub mu: f64,
    pub accepted: bool,
    pub cumulative_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LMResult {
    pub parameters: Vec<f64>,
    pub termination: Termination,
    /// Accepted-step count.
    pub iterations: usize,
    pub function_evaluations: usize,
    pub objective: f64,
    pub residual_norm: f64,
    pub iterates: Vec<Iterate>,
}

/// Relative error of one identified parameter against its true value, in
/// percent; falls back to the absolute error when the true value is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterError {
    pub index: usize,
    pub error: f64,
    pub is_absolute: bool,
}

pub fn relative_error_report(estimate: &[f64], truth: &[f64]) -> Vec<ParameterError> {
    estimate
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(index, (&e, &t))| {
            if t != 0.0 {
                ParameterError {
                    index,
                    error: (e - t).abs() / t.abs() * 100.0,
                    is_absolute: false,
                }
            } else {
                ParameterError {
                    index,
                    error: (e - t).abs(),
                    is_absolute: true,
                }
            }
        })
        .collect()
}

fn is_sentinel(chi: &DVector<f64>) -> bool {
    !chi.is_empty() && chi.iter().all(|&v| v == SOLVER_FAILURE_RESIDUAL)
}

/// Forward-difference Jacobian with per-parameter reference scaling:
/// column j is [chi(c + h s_j e_j) - chi(c)] / (h s_j). Perturbed points
/// are projected into the box first (flipping to a backward step when the
/// box truncates the forward one), and the columns are evaluated in
/// parallel. Returns the Jacobian and the evaluation count.
pub fn fd_jacobian<F>(
    residual_fn: &F,
    c: &[f64],
    chi0: &DVector<f64>,
    scale: &[f64],
    fd_step: f64,
    bounds: &ParameterBox,
    central: bool,
) -> Result<(DMatrix<f64>, usize), OptimError>
where
    F: Fn(&[f64]) -> DVector<f64> + Sync,
{
    let n_p = c.len();
    let m = chi0.len();
    for (j, &s) in scale.iter().enumerate() {
        if s == 0.0 || !s.is_finite() {
            return Err(OptimError::ZeroScale(j));
        }
    }
    struct Column {
        values: Option<DVector<f64>>,
        evaluations: usize,
    }
    let columns: Vec<Column> = (0..n_p)
        .into_par_iter()
        .map(|j| {
            let step = fd_step * scale[j];
            let perturb = |delta: f64| -> (Vec<f64>, f64) {
                let mut cj = c.to_vec();
                cj[j] += delta;
                let projected = bounds.project(&cj);
                let actual = projected[j] - c[j];
                (projected, actual)
            };
            if central {
                let (c_plus, d_plus) = perturb(step);
                let (c_minus, d_minus) = perturb(-step);
                let span = d_plus - d_minus;
                if span == 0.0 {
                    return Column {
                        values: None,
                        evaluations: 0,
                    };
                }
                let chi_plus = residual_fn(&c_plus);
                let chi_minus = residual_fn(&c_minus);
                if is_sentinel(&chi_plus) || is_sentinel(&chi_minus) {
                    return Column {
                        values: None,
                        evaluations: 2,
                    };
                }
                Column {
                    values: Some((chi_plus - chi_minus) / span),
                    evaluations: 2,
                }
            } else {
                let (mut cj, mut actual) = perturb(step);
                if actual.abs() < 0.5 * step.abs() {
                    // Forward step truncated by the box: step backward.
                    let (c_back, d_back) = perturb(-step);
                    if d_back.abs() > actual.abs() {
                        cj = c_back;
                        actual = d_back;
                    }
                }
                if actual == 0.0 {
                    return Column {
                        values: None,
                        evaluations: 0,
                    };
                }
                let chi_j = residual_fn(&cj);
                if is_sentinel(&chi_j) {
                    return Column {
                        values: None,
                        evaluations: 1,
                    };
                }
                Column {
                    values: Some((chi_j - chi0) / actual),
                    evaluations: 1,
                }
            }
        })
        .collect();

    let failed = columns.iter().filter(|c| c.values.is_none()).count();
    if 2 * failed > n_p {
        return Err(OptimError::JacobianFailure {
            failed,
            total: n_p,
        });
    }
    let evaluations = columns.iter().map(|c| c.evaluations).sum();
    let mut jacobian = DMatrix::zeros(m, n_p);
    for (j, column) in columns.into_iter().enumerate() {
        if let Some(values) = column.values {
            jacobian.set_column(j, &values);
        }
    }
    Ok((jacobian, evaluations))
}

/// Step of the damped normal equations (J^T J + mu I) delta = -J^T chi.
/// Returns None when the damped system is not positive definite.
pub fn damped_normal_step(
    jacobian: &DMatrix<f64>,
    chi: &DVector<f64>,
    mu: f64,
) -> Option<DVector<f64>> {
    let n = jacobian.ncols();
    let mut normal = jacobian.transpose() * jacobian;
    for i in 0..n {
        normal[(i, i)] += mu;
    }
    let rhs = -(jacobian.transpose() * chi);
    normal.cholesky().map(|chol| chol.solve(&rhs))
}

fn split_halves(chi: &DVector<f64>) -> (f64, f64) {
    let half = chi.len() / 2;
    let pos: f64 = chi.iter().take(half).map(|v| v * v).sum();
    let conc: f64 = chi.iter().skip(half).map(|v| v * v).sum();
    (0.5 * pos, 0.5 * conc)
}

/// Levenberg-Marquardt iteration: gain-based accept/reject with the
/// damping divided by 3 on acceptance and doubled on rejection,
/// mu_0 = damping_init_factor * max diag(J^T J), trial points projected
/// onto the box, and the Jacobian recomputed after every accepted step.
pub fn lm_solve<F>(
    residual_fn: &F,
    c0: &[f64],
    bounds: &ParameterBox,
    opts: &LMOptions,
) -> Result<LMResult, OptimError>
where
    F: Fn(&[f64]) -> DVector<f64> + Sync,
{
    let n_p = c0.len();
    if bounds.len() != n_p {
        return Err(OptimError::BoundsLength {
            expected: n_p,
            found: bounds.len(),
        });
    }
    for (i, &v) in c0.iter().enumerate() {
        let (lo, hi) = bounds.bounds(i);
        if v < lo || v > hi {
            return Err(OptimError::InitialGuessOutsideBox {
                index: i,
                value: v,
                lower: lo,
                upper: hi,
            });
        }
    }
    let scale: Vec<f64> = match &opts.scaling {
        ScalingReference::InitialGuess => c0
            .iter()
            .map(|&v| if v != 0.0 { v } else { 1.0 })
            .collect(),
        ScalingReference::Provided(values) => {
            if values.len() != n_p {
                return Err(OptimError::BoundsLength {
                    expected: n_p,
                    found: values.len(),
                });
            }
            values.clone()
        }
    };
    for (j, &s) in scale.iter().enumerate() {
        if s == 0.0 || !s.is_finite() {
            return Err(OptimError::ZeroScale(j));
        }
    }

    let mut c = c0.to_vec();
    let mut chi = residual_fn(&c);
    let mut evaluations = 1usize;
    if is_sentinel(&chi) {
        return Err(OptimError::FailedAtInitialGuess);
    }
    if chi.len() < n_p {
        return Err(OptimError::Underdetermined {
            residuals: chi.len(),
            parameters: n_p,
        });
    }
    let mut objective = 0.5 * chi.norm_squared();
    let mut iterates = Vec::new();
    let mut iterations = 0usize;
    let record = |iterates: &mut Vec<Iterate>,
                  iteration: usize,
                  c: &[f64],
                  chi: &DVector<f64>,
                  mu: f64,
                  accepted: bool,
                  evaluations: usize| {
        let (pos, conc) = split_halves(chi);
        iterates.push(Iterate {
            iteration,
            parameters: c.to_vec(),
            objective: 0.5 * chi.norm_squared(),
            position_part: pos,
            concentration_part: conc,
            mu,
            accepted,
            cumulative_evaluations: evaluations,
        });
    };
    record(&mut iterates, 0, &c, &chi, 0.0, true, evaluations);

    let finish = |c: Vec<f64>,
                  chi: &DVector<f64>,
                  termination: Termination,
                  iterations: usize,
                  evaluations: usize,
                  iterates: Vec<Iterate>| {
        Ok(LMResult {
            objective: 0.5 * chi.norm_squared(),
            residual_norm: chi.norm(),
            parameters: c,
            termination,
            iterations,
            function_evaluations: evaluations,
            iterates,
        })
    };

    if chi.norm() <= opts.stop_error {
        return finish(
            c,
            &chi,
            Termination::SmallError,
            0,
            evaluations,
            iterates,
        );
    }

    let mut mu: Option<f64> = None;
    loop {
        if iterations >= opts.max_iterations {
            return finish(
                c,
                &chi,
                Termination::MaxIterations,
                iterations,
                evaluations,
                iterates,
            );
        }
        let (jac_raw, jac_evals) = fd_jacobian(
            residual_fn,
            &c,
            &chi,
            &scale,
            opts.fd_step,
            bounds,
            opts.central_differences,
        )?;
        evaluations += jac_evals;
        // Jacobian with respect to the rescaled coordinates.
        let mut jacobian = jac_raw;
        for (j, &s) in scale.iter().enumerate() {
            let mut col = jacobian.column_mut(j);
            col *= s;
        }
        let gradient = jacobian.transpose() * &chi;
        if gradient.amax() <= opts.stop_gradient {
            return finish(
                c,
                &chi,
                Termination::SmallGradient,
                iterations,
                evaluations,
                iterates,
            );
        }
        if mu.is_none() {
            let normal = jacobian.transpose() * &jacobian;
            let max_diag = (0..n_p).map(|i| normal[(i, i)]).fold(0.0f64, f64::max);
            mu = Some(opts.damping_init_factor * max_diag.max(f64::MIN_POSITIVE));
        }

        let mut rejections = 0usize;
        let accepted = loop {
            let mu_now = mu.unwrap();
            let Some(delta_scaled) = damped_normal_step(&jacobian, &chi, mu_now) else {
                mu = Some(mu_now * 2.0);
                rejections += 1;
                if rejections > opts.max_inner_rejections {
                    break false;
                }
                continue;
            };
            let trial: Vec<f64> = bounds.project(
                &c.iter()
                    .enumerate()
                    .map(|(j, &v)| v + scale[j] * delta_scaled[j])
                    .collect::<Vec<_>>(),
            );
            let actual_scaled: f64 = trial
                .iter()
                .zip(&c)
                .zip(&scale)
                .map(|((t, v), s)| ((t - v) / s).powi(2))
                .sum::<f64>()
                .sqrt();
            if actual_scaled <= opts.stop_update {
                return finish(
                    c,
                    &chi,
                    Termination::SmallUpdate,
                    iterations,
                    evaluations,
                    iterates,
                );
            }
            let chi_trial = residual_fn(&trial);
            evaluations += 1;
            let objective_trial = 0.5 * chi_trial.norm_squared();
            if objective_trial < objective {
                c = trial;
                chi = chi_trial;
                objective = objective_trial;
                mu = Some(mu_now / 3.0);
                iterations += 1;
                record(&mut iterates, iterations, &c, &chi, mu_now, true, evaluations);
                break true;
            }
            mu = Some(mu_now * 2.0);
            record(
                &mut iterates,
                iterations,
                &trial,
                &chi_trial,
                mu_now,
                false,
                evaluations,
            );
            rejections += 1;
            if rejections > opts.max_inner_rejections {
                break false;
            }
        };
        if !accepted {
            return finish(
                c,
                &chi,
                Termination::SmallUpdate,
                iterations,
                evaluations,
                iterates,
            );
        }
        if chi.norm() <= opts.stop_error {
            return finish(
                c,
                &chi,
                Termination::SmallError,
                iterations,
                evaluations,
                iterates,
            );
        }
    }
}
