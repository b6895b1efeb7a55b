//! Mismatch functionals between simulated trajectories and observations.
//!
//! Both residual forms produce a weighted vector chi of length 2 n_s
//! (position entries first, concentration entries second) from which the
//! objective is J = 1/2 chi^T chi. The sharp form compares vertex sets
//! and closest-vertex concentrations directly; the diffuse form compares
//! smoothed indicator functions and band-extended concentrations in L2
//! over a shared bulk rectangle.

mod phase_field;

pub use phase_field::{
    build_bulk_mesh, l2_difference_squared, phase_field_fields, phase_field_residuals,
    BulkMesh, PhaseFieldData,
};

use crate::forward::Trajectory;
use crate::geometry::{GeometryError, PointGrid, Vec2};
use nalgebra::DVector;
use thiserror::Error;

/// Residual entry recorded when a forward solve fails at a trial point;
/// large but finite so the optimizer rejects the point gracefully.
pub const SOLVER_FAILURE_RESIDUAL: f64 = 1e10;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("need at least one fitted snapshot (t0 only defines initial data)")]
    TooFewSnapshots,
    #[error("trajectory has no snapshot within {tolerance} of observation time {time}")]
    MisalignedTimes { time: f64, tolerance: f64 },
    #[error("weight vector has {found} entries, need {expected}")]
    WeightLength { expected: usize, found: usize },
    #[error("weights must be strictly positive")]
    NonPositiveWeight,
    #[error("observations carry {observed} species, trajectory carries {computed}")]
    SpeciesMismatch { observed: usize, computed: usize },
    #[error(
        "snapshot {0} is an unordered point cloud; the diffuse-interface form needs \
         connectivity to build a signed distance — use the sharp form instead"
    )]
    UnorderedObservations(usize),
    #[error("invalid observations: {0}")]
    ObservationInvariant(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Timestamped observation snapshots: point clouds with per-point species
/// values. The snapshot at t0 defines initial data only and never enters
/// the residual.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub times: Vec<f64>,
    pub snapshots: Vec<ObservedSnapshot>,
    pub metadata: ObservationMetadata,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSnapshot {
    pub time: f64,
    pub points: Vec<Vec2>,
    /// Points are consecutive vertices of a closed loop.
    pub ordered: bool,
    /// Species-major values, one row per species, one column per point.
    pub fields: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationMetadata {
    pub c_true: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub units: Option<String>,
    /// Identifier of the noise generator, for portable replications.
    pub rng: Option<String>,
}

impl ObservationSet {
    /// Number of fitted snapshots n_s (excludes t0).
    pub fn n_fitted(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn n_species(&self) -> usize {
        self.snapshots.first().map_or(0, |s| s.fields.len())
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if self.times.len() != self.snapshots.len() {
            return Err(ObjectiveError::ObservationInvariant(format!(
                "{} times but {} snapshots",
                self.times.len(),
                self.snapshots.len()
            )));
        }
        for pair in self.times.windows(2) {
            if pair[1] <= pair[0] {
                return Err(ObjectiveError::ObservationInvariant(
                    "times must be strictly increasing".into(),
                ));
            }
        }
        let n_species = self.n_species();
        for (i, snap) in self.snapshots.iter().enumerate() {
            if snap.points.is_empty() {
                return Err(ObjectiveError::ObservationInvariant(format!(
                    "snapshot {i} is empty"
                )));
            }
            if snap.fields.len() != n_species {
                return Err(ObjectiveError::ObservationInvariant(format!(
                    "snapshot {i} has {} species, expected {n_species}",
                    snap.fields.len()
                )));
            }
            for (s, field) in snap.fields.iter().enumerate() {
                if field.len() != snap.points.len() {
                    return Err(ObjectiveError::ObservationInvariant(format!(
                        "snapshot {i}: field {s} has {} values for {} points",
                        field.len(),
                        snap.points.len()
                    )));
                }
            }
            if (snap.time - self.times[i]).abs() > 1e-9 * self.times[i].abs().max(1.0) {
                return Err(ObjectiveError::ObservationInvariant(format!(
                    "snapshot {i} time {} disagrees with times[{i}] = {}",
                    snap.time, self.times[i]
                )));
            }
        }
        Ok(())
    }
}

/// Strictly positive residual weights, length 2 n_s.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    w: Vec<f64>,
}

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self, ObjectiveError> {
        if w.len() % 2 != 0 || w.is_empty() {
            return Err(ObjectiveError::WeightLength {
                expected: 2,
                found: w.len(),
            });
        }
        if w.iter().any(|&x| !(x > 0.0)) {
            return Err(ObjectiveError::NonPositiveWeight);
        }
        Ok(Self { w })
    }

    pub fn ones(n_s: usize) -> Self {
        Self {
            w: vec![1.0; 2 * n_s],
        }
    }

    /// Position weights 1, concentration weights alpha.
    pub fn concentration_scaled(n_s: usize, alpha: f64) -> Self {
        let mut w = vec![1.0; 2 * n_s];
        for entry in w.iter_mut().skip(n_s) {
            *entry = alpha;
        }
        Self { w }
    }

    /// Rebalance concentration weights so that, at the reference residuals
    /// (computed with unit weights), the position and concentration error
    /// contributions to J are equal.
    pub fn balanced_from_unweighted(reference: &ResidualVector) -> Self {
        let (pos, conc) = reference.split_sums();
        let alpha = if conc > 0.0 { pos / conc } else { 1.0 };
        Self::concentration_scaled(reference.n_s, alpha)
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    fn check_len(&self, n_s: usize) -> Result<(), ObjectiveError> {
        if self.w.len() != 2 * n_s {
            return Err(ObjectiveError::WeightLength {
                expected: 2 * n_s,
                found: self.w.len(),
            });
        }
        Ok(())
    }
}

/// Weighted residual vector: entries 0..n_s are position mismatches,
/// entries n_s..2 n_s concentration mismatches.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    pub values: DVector<f64>,
    pub n_s: usize,
}

impl ResidualVector {
    pub fn sentinel(n_s: usize) -> Self {
        Self {
            values: DVector::from_element(2 * n_s, SOLVER_FAILURE_RESIDUAL),
            n_s,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        !self.values.is_empty() && self.values.iter().all(|&v| v == SOLVER_FAILURE_RESIDUAL)
    }

    /// J = 1/2 sum chi_i^2.
    pub fn objective(&self) -> f64 {
        0.5 * self.values.norm_squared()
    }

    /// Raw split (sum chi_pos^2, sum chi_conc^2); the halves of 2 J.
    pub fn split_sums(&self) -> (f64, f64) {
        let pos: f64 = self.values.iter().take(self.n_s).map(|v| v * v).sum();
        let conc: f64 = self.values.iter().skip(self.n_s).map(|v| v * v).sum();
        (pos, conc)
    }
}

/// Objective value together with its position/concentration split; the two
/// parts add up to the total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub position: f64,
    pub concentration: f64,
}

pub fn objective_value(residuals: &ResidualVector) -> ObjectiveValue {
    let (pos, conc) = residuals.split_sums();
    ObjectiveValue {
        total: 0.5 * (pos + conc),
        position: 0.5 * pos,
        concentration: 0.5 * conc,
    }
}

/// Pair each fitted observation time with the matching trajectory
/// snapshot.
fn align<'a>(
    traj: &'a Trajectory,
    obs: &'a ObservationSet,
    time_tolerance: f64,
) -> Result<Vec<(&'a crate::forward::Snapshot, &'a ObservedSnapshot)>, ObjectiveError> {
    let n_s = obs.n_fitted();
    if n_s == 0 {
        return Err(ObjectiveError::TooFewSnapshots);
    }
    let mut pairs = Vec::with_capacity(n_s);
    for i in 1..=n_s {
        let t = obs.times[i];
        let snap = traj
            .snapshots
            .iter()
            .find(|s| (s.time - t).abs() <= time_tolerance)
            .ok_or(ObjectiveError::MisalignedTimes {
                time: t,
                tolerance: time_tolerance,
            })?;
        pairs.push((snap, &obs.snapshots[i]));
    }
    Ok(pairs)
}

/// Sharp-interface residuals: symmetric mean closest-vertex distances for
/// position, symmetric mean 1-norm concentration differences at closest
/// vertices for species. Closest-point queries run on vertex sets only.
pub fn sharp_residuals(
    traj: &Trajectory,
    obs: &ObservationSet,
    weights: &WeightVector,
    time_tolerance: f64,
) -> Result<ResidualVector, ObjectiveError> {
    let n_s = obs.n_fitted();
    weights.check_len(n_s)?;
    let pairs = align(traj, obs, time_tolerance)?;
    let n_species = obs.n_species();
    let mut values = DVector::zeros(2 * n_s);
    for (i, (computed, observed)) in pairs.iter().enumerate() {
        if computed.fields.n_species() != n_species {
            return Err(ObjectiveError::SpeciesMismatch {
                observed: n_species,
                computed: computed.fields.n_species(),
            });
        }
        let comp_points = computed.curve.vertices();
        let obs_points = &observed.points;
        let comp_grid = PointGrid::from_loop(comp_points);
        let obs_grid = PointGrid::from_loop(obs_points);

        let mut pos_comp_to_obs = 0.0;
        let mut conc_comp_to_obs = 0.0;
        for (j, v) in comp_points.iter().enumerate() {
            let (d, idx) = obs_grid.nearest(*v);
            pos_comp_to_obs += d;
            for s in 0..n_species {
                conc_comp_to_obs += (computed.fields.value(s, j) - observed.fields[s][idx]).abs();
            }
        }
        let mut pos_obs_to_comp = 0.0;
        let mut conc_obs_to_comp = 0.0;
        for (k, p) in obs_points.iter().enumerate() {
            let (d, idx) = comp_grid.nearest(*p);
            pos_obs_to_comp += d;
            for s in 0..n_species {
                conc_obs_to_comp += (observed.fields[s][k] - computed.fields.value(s, idx)).abs();
            }
        }
        let n_comp = comp_points.len() as f64;
        let n_obs = obs_points.len() as f64;
        let w_pos = weights.as_slice()[i].sqrt();
        let w_conc = weights.as_slice()[i + n_s].sqrt();
        values[i] = w_pos * (pos_comp_to_obs / n_comp + pos_obs_to_comp / n_obs);
        values[i + n_s] = w_conc * (conc_comp_to_obs / n_comp + conc_obs_to_comp / n_obs);
    }
    Ok(ResidualVector { values, n_s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{Snapshot, Trajectory};
    use crate::geometry::{hausdorff_point_distance, regular_polygon, VertexField};

    fn circle_snapshot(t: f64, radius: f64, n: usize, value: f64) -> Snapshot {
        let curve = regular_polygon(Vec2::zeros(), radius, n);
        let fields = VertexField::constant(&[value], n);
        Snapshot {
            time: t,
            curve,
            fields,
        }
    }

    fn to_observed(snap: &Snapshot) -> ObservedSnapshot {
        ObservedSnapshot {
            time: snap.time,
            points: snap.curve.vertices().to_vec(),
            ordered: true,
            fields: (0..snap.fields.n_species())
                .map(|s| snap.fields.species(s).to_vec())
                .collect(),
        }
    }

    fn obs_from_snapshots(snaps: Vec<Snapshot>) -> ObservationSet {
        ObservationSet {
            times: snaps.iter().map(|s| s.time).collect(),
            snapshots: snaps.iter().map(to_observed).collect(),
            metadata: ObservationMetadata::default(),
        }
    }

    #[test]
    fn identical_data_gives_exactly_zero() {
        let snaps = vec![
            circle_snapshot(0.0, 1.0, 64, 0.5),
            circle_snapshot(1.0, 1.1, 64, 0.5),
            circle_snapshot(2.0, 1.2, 64, 0.7),
        ];
        let traj = Trajectory {
            snapshots: snaps.clone(),
        };
        let obs = obs_from_snapshots(snaps);
        let chi = sharp_residuals(&traj, &obs, &WeightVector::ones(2), 1e-6).unwrap();
        assert_eq!(chi.values.as_slice(), &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(chi.objective(), 0.0);
    }

    #[test]
    fn dilated_circle_matches_direct_formula() {
        let delta = 1e-3;
        let n = 128;
        let base = circle_snapshot(0.0, 1.0, n, 0.5);
        let computed = circle_snapshot(1.0, 1.0 + delta, n, 0.5);
        let traj = Trajectory {
            snapshots: vec![base.clone(), computed.clone()],
        };
        let obs = obs_from_snapshots(vec![base.clone(), circle_snapshot(1.0, 1.0, n, 0.5)]);
        let chi = sharp_residuals(&traj, &obs, &WeightVector::ones(1), 1e-6).unwrap();

        // Exhaustive-scan evaluation of the same symmetric mean formula.
        let comp_pts = computed.curve.vertices();
        let obs_pts = &obs.snapshots[1].points;
        let mut forward = 0.0;
        for v in comp_pts {
            forward += hausdorff_point_distance(obs_pts, *v).unwrap().0;
        }
        let mut backward = 0.0;
        for p in obs_pts {
            backward += hausdorff_point_distance(comp_pts, *p).unwrap().0;
        }
        let expected = forward / n as f64 + backward / n as f64;
        assert_eq!(chi.values[0], expected);
        assert!((chi.values[0] - 2.0 * delta).abs() < 1e-5);
        // Matching concentrations pair up at the same vertex.
        assert_eq!(chi.values[1], 0.0);
    }

    #[test]
    fn swap_is_symmetric() {
        let a = vec![
            circle_snapshot(0.0, 1.0, 48, 0.5),
            circle_snapshot(1.0, 1.15, 48, 0.8),
        ];
        let b = vec![
            circle_snapshot(0.0, 1.0, 48, 0.5),
            circle_snapshot(1.0, 0.95, 48, 0.3),
        ];
        let w = WeightVector::ones(1);
        let chi_ab = sharp_residuals(
            &Trajectory {
                snapshots: a.clone(),
            },
            &obs_from_snapshots(b.clone()),
            &w,
            1e-6,
        )
        .unwrap();
        let chi_ba = sharp_residuals(
            &Trajectory { snapshots: b },
            &obs_from_snapshots(a),
            &w,
            1e-6,
        )
        .unwrap();
        assert_eq!(chi_ab.values, chi_ba.values);
    }

    #[test]
    fn weight_scaling_is_exact() {
        let snaps = vec![
            circle_snapshot(0.0, 1.0, 48, 0.5),
            circle_snapshot(1.0, 1.15, 48, 0.8),
        ];
        let obs = obs_from_snapshots(vec![
            circle_snapshot(0.0, 1.0, 48, 0.5),
            circle_snapshot(1.0, 0.95, 48, 0.3),
        ]);
        let traj = Trajectory { snapshots: snaps };
        let alpha = 3.0f64;
        let chi1 = sharp_residuals(&traj, &obs, &WeightVector::ones(1), 1e-6).unwrap();
        let w2 = WeightVector::new(vec![alpha * alpha, alpha * alpha]).unwrap();
        let chi2 = sharp_residuals(&traj, &obs, &w2, 1e-6).unwrap();
        for i in 0..2 {
            assert_eq!(chi2.values[i], alpha * chi1.values[i]);
        }
    }

    #[test]
    fn misaligned_times_are_rejected() {
        let snaps = vec![
            circle_snapshot(0.0, 1.0, 32, 0.5),
            circle_snapshot(1.0, 1.1, 32, 0.5),
        ];
        let mut obs = obs_from_snapshots(snaps.clone());
        obs.times[1] = 1.5;
        obs.snapshots[1].time = 1.5;
        let traj = Trajectory { snapshots: snaps };
        assert!(matches!(
            sharp_residuals(&traj, &obs, &WeightVector::ones(1), 1e-3),
            Err(ObjectiveError::MisalignedTimes { .. })
        ));
    }

    #[test]
    fn objective_value_examples() {
        let chi = ResidualVector {
            values: DVector::from_vec(vec![3.0, 4.0]),
            n_s: 1,
        };
        let v = objective_value(&chi);
        assert_eq!(v.total, 12.5);
        assert_eq!(v.position + v.concentration, v.total);
        let zero = ResidualVector {
            values: DVector::zeros(2),
            n_s: 1,
        };
        assert_eq!(objective_value(&zero).total, 0.0);
    }

    #[test]
    fn sentinel_round_trip() {
        let s = ResidualVector::sentinel(3);
        assert!(s.is_sentinel());
        assert_eq!(s.values.len(), 6);
        let normal = ResidualVector {
            values: DVector::from_vec(vec![1.0, 2.0]),
            n_s: 1,
        };
        assert!(!normal.is_sentinel());
    }

    #[test]
    fn balanced_weights_equalize_contributions() {
        let chi = ResidualVector {
            values: DVector::from_vec(vec![2.0, 1.0, 0.5, 0.25]),
            n_s: 2,
        };
        let w = WeightVector::balanced_from_unweighted(&chi);
        let (pos, conc) = chi.split_sums();
        let alpha = w.as_slice()[2];
        assert!((alpha * conc - pos).abs() < 1e-12);
    }

    #[test]
    fn validates_observation_invariants() {
        let snaps = vec![
            circle_snapshot(0.0, 1.0, 16, 0.5),
            circle_snapshot(1.0, 1.1, 16, 0.5),
        ];
        let mut obs = obs_from_snapshots(snaps);
        assert!(obs.validate().is_ok());
        obs.snapshots[1].fields[0].pop();
        assert!(obs.validate().is_err());
    }
}
