//! Observation persistence, synthetic target generation and the noise
//! model used in robustness studies.

use crate::forward::{simulate, SolverConfig, SolverError, Trajectory};
use crate::geometry::{Curve, Vec2, VertexField};
use crate::models::BoundModel;
use crate::objective::{ObservationMetadata, ObservationSet, ObservedSnapshot};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Identifier of the noise generator, recorded in output metadata so that
/// replications are portable.
pub const RNG_ALGORITHM: &str = "chacha12";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("noise standard deviation must be non-negative, got {0}")]
    NegativeNoise(f64),
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid observations in {path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    Normal,
    Uniform,
}

/// Mean-zero perturbation with standard deviation `standard_deviation`;
/// the uniform variant draws from a half-width of sqrt(3) times that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub distribution: NoiseDistribution,
    pub standard_deviation: f64,
    pub seed: u64,
}

/// Perturb every coordinate and species value of the fitted snapshots
/// (the snapshot at t0 defines initial data and stays clean) by an
/// independent draw scaled by that quantity's per-snapshot range in the
/// clean data.
///
/// Draw order, for reproducibility: snapshots in time order; per snapshot
/// first the x then the y coordinate over points in order, then each
/// species over points in order. Draws are unit-variance samples
/// multiplied by the standard deviation, so runs with different noise
/// strengths but equal seeds use identical underlying samples.
pub fn add_noise(obs: &ObservationSet, spec: &NoiseSpec) -> Result<ObservationSet, DataError> {
    if spec.standard_deviation < 0.0 {
        return Err(DataError::NegativeNoise(spec.standard_deviation));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut draw = |rng: &mut ChaCha12Rng| -> f64 {
        let unit: f64 = match spec.distribution {
            NoiseDistribution::Normal => rng.sample(StandardNormal),
            NoiseDistribution::Uniform => {
                let half = 3.0f64.sqrt();
                rng.random_range(-half..=half)
            }
        };
        spec.standard_deviation * unit
    };
    let mut out = obs.clone();
    for snap in out.snapshots.iter_mut().skip(1) {
        for coord in 0..2 {
            let pick = |p: &Vec2| if coord == 0 { p.x } else { p.y };
            let (lo, hi) = snap
                .points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    (lo.min(pick(p)), hi.max(pick(p)))
                });
            let range = hi - lo;
            for p in snap.points.iter_mut() {
                let eta = draw(&mut rng);
                if coord == 0 {
                    p.x += eta * range;
                } else {
                    p.y += eta * range;
                }
            }
        }
        for field in snap.fields.iter_mut() {
            let (lo, hi) = field
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            let range = hi - lo;
            for v in field.iter_mut() {
                let eta = draw(&mut rng);
                *v += eta * range;
            }
        }
    }
    out.metadata.seed = Some(spec.seed);
    out.metadata.rng = Some(RNG_ALGORITHM.to_string());
    Ok(out)
}

/// Run the forward solver at the given parameters and convert the
/// trajectory into an ordered observation set, recording the generating
/// parameters for later error reporting.
pub fn generate_targets(
    initial: (Curve, VertexField),
    config: &SolverConfig,
    model: &BoundModel,
    c_true: Option<&[f64]>,
    observation_times: &[f64],
) -> Result<ObservationSet, SolverError> {
    let trajectory = simulate(initial, config, model, observation_times)?;
    Ok(observations_from_trajectory(&trajectory, c_true))
}

pub fn observations_from_trajectory(
    trajectory: &Trajectory,
    c_true: Option<&[f64]>,
) -> ObservationSet {
    ObservationSet {
        times: trajectory.times(),
        snapshots: trajectory
            .snapshots
            .iter()
            .map(|s| ObservedSnapshot {
                time: s.time,
                points: s.curve.vertices().to_vec(),
                ordered: true,
                fields: (0..s.fields.n_species())
                    .map(|k| s.fields.species(k).to_vec())
                    .collect(),
            })
            .collect(),
        metadata: ObservationMetadata {
            c_true: c_true.map(<[f64]>::to_vec),
            ..Default::default()
        },
    }
}

#[derive(Serialize, Deserialize)]
struct ObservationFile {
    times: Vec<f64>,
    snapshots: Vec<SnapshotFile>,
    #[serde(default, skip_serializing_if = "MetadataFile::is_empty")]
    metadata: MetadataFile,
}

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    t: f64,
    points: Vec<[f64; 2]>,
    ordered: bool,
    fields: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize, Default)]
struct MetadataFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c_true: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    units: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rng: Option<String>,
}

impl MetadataFile {
    fn is_empty(&self) -> bool {
        self.c_true.is_none() && self.seed.is_none() && self.units.is_none() && self.rng.is_none()
    }
}

pub fn observations_to_json(obs: &ObservationSet) -> String {
    let file = ObservationFile {
        times: obs.times.clone(),
        snapshots: obs
            .snapshots
            .iter()
            .map(|s| SnapshotFile {
                t: s.time,
                points: s.points.iter().map(|p| [p.x, p.y]).collect(),
                ordered: s.ordered,
                fields: s.fields.clone(),
            })
            .collect(),
        metadata: MetadataFile {
            c_true: obs.metadata.c_true.clone(),
            seed: obs.metadata.seed,
            units: obs.metadata.units.clone(),
            rng: obs.metadata.rng.clone(),
        },
    };
    serde_json::to_string_pretty(&file).expect("observation serialization cannot fail")
}

pub fn save_observations(obs: &ObservationSet, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, observations_to_json(obs)).map_err(|source| DataError::Write {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_observations(path: &Path) -> Result<ObservationSet, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Read {
        path: path.display().to_string(),
        source,
    })?;
    observations_from_json(&text, &path.display().to_string())
}

pub fn observations_from_json(text: &str, path: &str) -> Result<ObservationSet, DataError> {
    let file: ObservationFile = serde_json::from_str(text).map_err(|source| DataError::Parse {
        path: path.to_string(),
        source,
    })?;
    let obs = ObservationSet {
        times: file.times,
        snapshots: file
            .snapshots
            .into_iter()
            .map(|s| ObservedSnapshot {
                time: s.t,
                points: s.points.iter().map(|p| Vec2::new(p[0], p[1])).collect(),
                ordered: s.ordered,
                fields: s.fields,
            })
            .collect(),
        metadata: ObservationMetadata {
            c_true: file.metadata.c_true,
            seed: file.metadata.seed,
            units: file.metadata.units,
            rng: file.metadata.rng,
        },
    };
    obs.validate().map_err(|e| DataError::Invalid {
        path: path.to_string(),
        message: e.to_string(),
    })?;
    Ok(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::regular_polygon;
    use crate::objective::ObservationMetadata;

    fn circle_observations(n_snapshots: usize, n_points: usize) -> ObservationSet {
        let snapshots: Vec<ObservedSnapshot> = (0..n_snapshots)
            .map(|i| {
                let curve = regular_polygon(Vec2::zeros(), 1.0 + 0.05 * i as f64, n_points);
                ObservedSnapshot {
                    time: i as f64,
                    points: curve.vertices().to_vec(),
                    ordered: true,
                    fields: vec![
                        (0..n_points).map(|k| 0.5 + 0.1 * (k as f64).sin()).collect(),
                    ],
                }
            })
            .collect();
        ObservationSet {
            times: (0..n_snapshots).map(|i| i as f64).collect(),
            snapshots,
            metadata: ObservationMetadata::default(),
        }
    }

    #[test]
    fn zero_noise_is_identity_with_metadata() {
        let obs = circle_observations(3, 32);
        let spec = NoiseSpec {
            distribution: NoiseDistribution::Normal,
            standard_deviation: 0.0,
            seed: 9,
        };
        let noisy = add_noise(&obs, &spec).unwrap();
        assert_eq!(noisy.snapshots, obs.snapshots);
        assert_eq!(noisy.metadata.rng.as_deref(), Some(RNG_ALGORITHM));
    }

    #[test]
    fn initial_snapshot_stays_clean() {
        let obs = circle_observations(3, 32);
        let spec = NoiseSpec {
            distribution: NoiseDistribution::Uniform,
            standard_deviation: 0.1,
            seed: 3,
        };
        let noisy = add_noise(&obs, &spec).unwrap();
        assert_eq!(noisy.snapshots[0], obs.snapshots[0]);
        assert_ne!(noisy.snapshots[1], obs.snapshots[1]);
    }

    #[test]
    fn constant_field_is_never_perturbed() {
        let mut obs = circle_observations(2, 16);
        obs.snapshots[1].fields[0] = vec![0.7; 16];
        let spec = NoiseSpec {
            distribution: NoiseDistribution::Normal,
            standard_deviation: 0.5,
            seed: 11,
        };
        let noisy = add_noise(&obs, &spec).unwrap();
        assert_eq!(noisy.snapshots[1].fields[0], vec![0.7; 16]);
    }

    #[test]
    fn seeds_control_reproducibility() {
        let obs = circle_observations(3, 32);
        let spec = |seed| NoiseSpec {
            distribution: NoiseDistribution::Normal,
            standard_deviation: 0.05,
            seed,
        };
        let a = add_noise(&obs, &spec(1)).unwrap();
        let b = add_noise(&obs, &spec(1)).unwrap();
        let c = add_noise(&obs, &spec(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_calibration_monte_carlo() {
        // Empirical standard deviation of perturbation / range matches the
        // requested k_n within 3% over ~10^4 draws.
        let n_points = 100;
        let n_snapshots = 101; // 100 perturbed snapshots x 100 points
        let obs = circle_observations(n_snapshots, n_points);
        for distribution in [NoiseDistribution::Normal, NoiseDistribution::Uniform] {
            let k_n = 0.02;
            let spec = NoiseSpec {
                distribution,
                standard_deviation: k_n,
                seed: 42,
            };
            let noisy = add_noise(&obs, &spec).unwrap();
            let mut samples = Vec::new();
            for (clean, pert) in obs.snapshots.iter().zip(&noisy.snapshots).skip(1) {
                let (lo, hi) = clean
                    .points
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                        (lo.min(p.x), hi.max(p.x))
                    });
                let range = hi - lo;
                for (c, p) in clean.points.iter().zip(&pert.points) {
                    samples.push((p.x - c.x) / range);
                }
            }
            let n = samples.len() as f64;
            let mean: f64 = samples.iter().sum::<f64>() / n;
            let var: f64 = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            assert!(
                (std - k_n).abs() < 0.03 * k_n,
                "{distribution:?}: std {std} vs {k_n}"
            );
            // Unbiased: the mean vanishes within sampling error.
            assert!(mean.abs() < 3.0 * k_n / n.sqrt() * 3.0, "mean {mean}");
        }
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let mut obs = circle_observations(3, 24);
        obs.metadata.c_true = Some(vec![5e-2, 20.0, 1e-2]);
        obs.metadata.units = Some("um".into());
        let spec = NoiseSpec {
            distribution: NoiseDistribution::Normal,
            standard_deviation: 0.02,
            seed: 7,
        };
        let noisy = add_noise(&obs, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.json");
        save_observations(&noisy, &path).unwrap();
        let loaded = load_observations(&path).unwrap();
        assert_eq!(loaded, noisy);
    }

    #[test]
    fn missing_times_key_is_named() {
        let err = observations_from_json(r#"{"snapshots": []}"#, "test.json").unwrap_err();
        assert!(err.to_string().contains("times"), "{err}");
    }

    #[test]
    fn mismatched_field_length_names_snapshot() {
        let text = r#"{
            "times": [0.0, 1.0],
            "snapshots": [
                {"t": 0.0, "points": [[0,0],[1,0],[0,1]], "ordered": true, "fields": [[1,2,3]]},
                {"t": 1.0, "points": [[0,0],[1,0],[0,1]], "ordered": true, "fields": [[1,2]]}
            ]
        }"#;
        let err = observations_from_json(text, "test.json").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("snapshot 1"), "{msg}");
    }
}
