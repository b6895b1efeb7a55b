//! Pluggable model components: reaction kinetics f(a), normal forcing g(a)
//! and the binding of a free-parameter vector into named model slots with
//! box constraints.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("k1 + k2 must be positive, got {0}")]
    DegenerateSteadyState(f64),
    #[error("forcing coefficient vector has {coefficients} entries, field has {species} species")]
    DimensionMismatch { coefficients: usize, species: usize },
    #[error("parameter vector has {found} entries, model declares {expected} free parameters")]
    ParameterCount { expected: usize, found: usize },
    #[error("parameter {index} = {value} outside its box [{lower}, {upper}]")]
    OutOfBox {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("invalid box for parameter {index}: lower {lower} > upper {upper}")]
    InvalidBox { index: usize, lower: f64, upper: f64 },
    #[error("unknown parameter slot `{0}`")]
    UnknownSlot(String),
    #[error("slot {0} does not exist in this model")]
    SlotNotInModel(Slot),
    #[error("duplicate slot {0} in free-parameter list")]
    DuplicateSlot(Slot),
    #[error("free-parameter indices must be a permutation of 0..{0}")]
    BadIndexing(usize),
    #[error("model requires {expected} species, configuration provides {found}")]
    SpeciesCount { expected: usize, found: usize },
}

/// Activator-depleted substrate kinetics:
/// f1 = gamma (k1 - a1 + a1^2 a2), f2 = gamma (k2 - a1^2 a2).
pub fn schnakenberg(a: [f64; 2], gamma: f64, k1: f64, k2: f64) -> [f64; 2] {
    let auto = a[0] * a[0] * a[1];
    [gamma * (k1 - a[0] + auto), gamma * (k2 - auto)]
}

/// Spatially homogeneous steady state of the activator-depleted substrate
/// kinetics: (k1 + k2, k2 / (k1 + k2)^2), independent of gamma.
pub fn steady_state(_gamma: f64, k1: f64, k2: f64) -> Result<[f64; 2], ModelError> {
    let sum = k1 + k2;
    if sum <= 0.0 {
        return Err(ModelError::DegenerateSteadyState(sum));
    }
    Ok([sum, k2 / (sum * sum)])
}

/// Protrusion/retraction proportional to the species vector: g(a) = k_p . a.
pub fn proportional_forcing(a: &[f64], k_p: &[f64]) -> Result<f64, ModelError> {
    if a.len() != k_p.len() {
        return Err(ModelError::DimensionMismatch {
            coefficients: k_p.len(),
            species: a.len(),
        });
    }
    Ok(a.iter().zip(k_p).map(|(ai, ki)| ai * ki).sum())
}

/// Thresholded growth forcing with a transition band of width `k_reg`:
/// zero below `k1`, `k2 * (s (3 - 2 s))^2` with s = (eta - k1) / k_reg on
/// the band, `k2` above `k1 + k_reg`. Continuous at both breakpoints; the
/// transition polynomial overshoots k2 inside the band (max 81/64 k2 at
/// s = 3/4).
pub fn yeast_forcing(eta: f64, k1: f64, k2: f64, k_reg: f64) -> f64 {
    if eta <= k1 {
        0.0
    } else if eta < k1 + k_reg {
        let s = (eta - k1) / k_reg;
        let ramp = s * (3.0 - 2.0 * s);
        k2 * ramp * ramp
    } else {
        k2
    }
}

/// Monotone variant of [`yeast_forcing`] using the smoothstep ramp
/// s^2 (3 - 2 s) on the transition band.
pub fn yeast_forcing_smoothstep(eta: f64, k1: f64, k2: f64, k_reg: f64) -> f64 {
    if eta <= k1 {
        0.0
    } else if eta < k1 + k_reg {
        let s = (eta - k1) / k_reg;
        k2 * s * s * (3.0 - 2.0 * s)
    } else {
        k2
    }
}

/// Reaction kinetics selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Kinetics {
    None,
    Schnakenberg { gamma: f64, k1: f64, k2: f64 },
}

impl Kinetics {
    /// Species count this choice requires, if it constrains one.
    pub fn required_species(&self) -> Option<usize> {
        match self {
            Kinetics::None => None,
            Kinetics::Schnakenberg { .. } => Some(2),
        }
    }

    /// Reaction terms at one point, written into `out`.
    pub fn eval(&self, a: &[f64], out: &mut [f64]) {
        match self {
            Kinetics::None => out.fill(0.0),
            Kinetics::Schnakenberg { gamma, k1, k2 } => {
                let f = schnakenberg([a[0], a[1]], *gamma, *k1, *k2);
                out[0] = f[0];
                out[1] = f[1];
            }
        }
    }
}

/// Normal-forcing selector for the evolution law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Forcing {
    None,
    Proportional {
        k_p: Vec<f64>,
    },
    YeastThreshold {
        k1: f64,
        k2: f64,
        k_reg: f64,
        /// Replace the printed transition polynomial with the monotone
        /// smoothstep ramp.
        smoothstep_transition: bool,
    },
}

impl Forcing {
    pub fn required_species(&self) -> Option<usize> {
        match self {
            Forcing::None => None,
            Forcing::Proportional { k_p } => Some(k_p.len()),
            Forcing::YeastThreshold { .. } => None,
        }
    }

    /// Scalar normal forcing at one point. The thresholded variant reads
    /// the first species as its intensity.
    pub fn eval(&self, a: &[f64]) -> f64 {
        match self {
            Forcing::None => 0.0,
            Forcing::Proportional { k_p } => {
                debug_assert_eq!(k_p.len(), a.len());
                a.iter().zip(k_p).map(|(ai, ki)| ai * ki).sum()
            }
            Forcing::YeastThreshold {
                k1,
                k2,
                k_reg,
                smoothstep_transition,
            } => {
                if *smoothstep_transition {
                    yeast_forcing_smoothstep(a[0], *k1, *k2, *k_reg)
                } else {
                    yeast_forcing(a[0], *k1, *k2, *k_reg)
                }
            }
        }
    }
}

/// Physical constants of the evolution law and the reaction-diffusion
/// system: surface tension, bending rigidity, volume penalty and one
/// diffusion coefficient per species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Physics {
    pub sigma: f64,
    pub k_b: f64,
    pub lambda: f64,
    pub diffusion: Vec<f64>,
}

impl Physics {
    pub fn n_species(&self) -> usize {
        self.diffusion.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.sigma < 0.0 || self.k_b < 0.0 || self.lambda < 0.0 {
            return Err(ModelError::InvalidBox {
                index: 0,
                lower: self.sigma.min(self.k_b).min(self.lambda),
                upper: 0.0,
            });
        }
        Ok(())
    }
}

/// Named slot a free parameter can bind to: a physical constant or a
/// coefficient of the kinetics/forcing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    Sigma,
    BendingRigidity,
    VolumePenalty,
    Diffusion(usize),
    KineticsGamma,
    KineticsK1,
    KineticsK2,
    ForcingCoefficient(usize),
    YeastK1,
    YeastK2,
    YeastKReg,
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Sigma => write!(f, "sigma"),
            Slot::BendingRigidity => write!(f, "k_b"),
            Slot::VolumePenalty => write!(f, "lambda"),
            Slot::Diffusion(i) => write!(f, "d{}", i + 1),
            Slot::KineticsGamma => write!(f, "gamma"),
            Slot::KineticsK1 => write!(f, "k1"),
            Slot::KineticsK2 => write!(f, "k2"),
            Slot::ForcingCoefficient(i) => write!(f, "kp{}", i + 1),
            Slot::YeastK1 => write!(f, "yeast_k1"),
            Slot::YeastK2 => write!(f, "yeast_k2"),
            Slot::YeastKReg => write!(f, "k_reg"),
        }
    }
}

impl FromStr for Slot {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "");
        match norm.as_str() {
            "sigma" => Ok(Slot::Sigma),
            "kb" => Ok(Slot::BendingRigidity),
            "lambda" => Ok(Slot::VolumePenalty),
            "gamma" => Ok(Slot::KineticsGamma),
            "k1" => Ok(Slot::KineticsK1),
            "k2" => Ok(Slot::KineticsK2),
            "yeastk1" => Ok(Slot::YeastK1),
            "yeastk2" => Ok(Slot::YeastK2),
            "kreg" => Ok(Slot::YeastKReg),
            _ => {
                if let Some(rest) = norm.strip_prefix("kp") {
                    if let Ok(i) = rest.parse::<usize>() {
                        if i >= 1 {
                            return Ok(Slot::ForcingCoefficient(i - 1));
                        }
                    }
                } else if let Some(rest) = norm.strip_prefix('d') {
                    if let Ok(i) = rest.parse::<usize>() {
                        if i >= 1 {
                            return Ok(Slot::Diffusion(i - 1));
                        }
                    }
                }
                Err(ModelError::UnknownSlot(s.to_string()))
            }
        }
    }
}

/// One free parameter: the slot it drives and its index in the parameter
/// vector c.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeSlot {
    pub slot: Slot,
    pub index: usize,
}

/// Model definition: base kinetics/forcing values, the free-parameter map
/// and the admissible box. Base values double as the ground truth when the
/// model is used to generate synthetic targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kinetics: Kinetics,
    pub forcing: Forcing,
    pub free: Vec<FreeSlot>,
    /// (lower, upper) per entry of c.
    pub bounds: Vec<(f64, f64)>,
}

impl ModelSpec {
    pub fn fixed(kinetics: Kinetics, forcing: Forcing) -> Self {
        Self {
            kinetics,
            forcing,
            free: Vec::new(),
            bounds: Vec::new(),
        }
    }

    pub fn n_parameters(&self) -> usize {
        self.free.len()
    }

    pub fn validate(&self, base: &Physics) -> Result<(), ModelError> {
        if self.free.len() != self.bounds.len() {
            return Err(ModelError::BadIndexing(self.free.len()));
        }
        let n_p = self.free.len();
        let mut seen = vec![false; n_p];
        for fs in &self.free {
            if self.free.iter().filter(|o| o.slot == fs.slot).count() > 1 {
                return Err(ModelError::DuplicateSlot(fs.slot));
            }
            if fs.index >= n_p || seen[fs.index] {
                return Err(ModelError::BadIndexing(n_p));
            }
            seen[fs.index] = true;
            if self.slot_value(fs.slot, base).is_none() {
                return Err(ModelError::SlotNotInModel(fs.slot));
            }
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo > hi {
                return Err(ModelError::InvalidBox {
                    index: i,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        if let Some(required) = self.kinetics.required_species() {
            if required != base.n_species() {
                return Err(ModelError::SpeciesCount {
                    expected: required,
                    found: base.n_species(),
                });
            }
        }
        if let Some(required) = self.forcing.required_species() {
            if required != base.n_species() {
                return Err(ModelError::SpeciesCount {
                    expected: required,
                    found: base.n_species(),
                });
            }
        }
        Ok(())
    }

    /// Base value currently stored in a slot, if the slot exists for this
    /// model/physics combination.
    pub fn slot_value(&self, slot: Slot, base: &Physics) -> Option<f64> {
        match (slot, &self.kinetics, &self.forcing) {
            (Slot::Sigma, _, _) => Some(base.sigma),
            (Slot::BendingRigidity, _, _) => Some(base.k_b),
            (Slot::VolumePenalty, _, _) => Some(base.lambda),
            (Slot::Diffusion(i), _, _) => base.diffusion.get(i).copied(),
            (Slot::KineticsGamma, Kinetics::Schnakenberg { gamma, .. }, _) => Some(*gamma),
            (Slot::KineticsK1, Kinetics::Schnakenberg { k1, .. }, _) => Some(*k1),
            (Slot::KineticsK2, Kinetics::Schnakenberg { k2, .. }, _) => Some(*k2),
            (Slot::ForcingCoefficient(i), _, Forcing::Proportional { k_p }) => {
                k_p.get(i).copied()
            }
            (Slot::YeastK1, _, Forcing::YeastThreshold { k1, .. }) => Some(*k1),
            (Slot::YeastK2, _, Forcing::YeastThreshold { k2, .. }) => Some(*k2),
            (Slot::YeastKReg, _, Forcing::YeastThreshold { k_reg, .. }) => Some(*k_reg),
            _ => None,
        }
    }

    /// The base slot values of the free parameters in c order; the ground
    /// truth of a synthetic experiment.
    pub fn true_parameters(&self, base: &Physics) -> Option<Vec<f64>> {
        let mut c = vec![0.0; self.free.len()];
        for fs in &self.free {
            c[fs.index] = self.slot_value(fs.slot, base)?;
        }
        Some(c)
    }

    /// Bind a parameter vector into the free slots, producing concrete
    /// kinetics, forcing and physical constants. Pure and deterministic;
    /// rejects vectors outside the box.
    pub fn bind(&self, c: &[f64], base: &Physics) -> Result<BoundModel, ModelError> {
        if c.len() != self.free.len() {
            return Err(ModelError::ParameterCount {
                expected: self.free.len(),
                found: c.len(),
            });
        }
        for (i, &v) in c.iter().enumerate() {
            let (lo, hi) = self.bounds[i];
            if v < lo || v > hi {
                return Err(ModelError::OutOfBox {
                    index: i,
                    value: v,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        let mut kinetics = self.kinetics.clone();
        let mut forcing = self.forcing.clone();
        let mut physics = base.clone();
        for fs in &self.free {
            let v = c[fs.index];
            match (fs.slot, &mut kinetics, &mut forcing) {
                (Slot::Sigma, _, _) => physics.sigma = v,
                (Slot::BendingRigidity, _, _) => physics.k_b = v,
                (Slot::VolumePenalty, _, _) => physics.lambda = v,
                (Slot::Diffusion(i), _, _) => {
                    *physics
                        .diffusion
                        .get_mut(i)
                        .ok_or(ModelError::SlotNotInModel(fs.slot))? = v;
                }
                (Slot::KineticsGamma, Kinetics::Schnakenberg { gamma, .. }, _) => *gamma = v,
                (Slot::KineticsK1, Kinetics::Schnakenberg { k1, .. }, _) => *k1 = v,
                (Slot::KineticsK2, Kinetics::Schnakenberg { k2, .. }, _) => *k2 = v,
                (Slot::ForcingCoefficient(i), _, Forcing::Proportional { k_p }) => {
                    *k_p.get_mut(i).ok_or(ModelError::SlotNotInModel(fs.slot))? = v;
                }
                (Slot::YeastK1, _, Forcing::YeastThreshold { k1, .. }) => *k1 = v,
                (Slot::YeastK2, _, Forcing::YeastThreshold { k2, .. }) => *k2 = v,
                (Slot::YeastKReg, _, Forcing::YeastThreshold { k_reg, .. }) => *k_reg = v,
                _ => return Err(ModelError::SlotNotInModel(fs.slot)),
            }
        }
        Ok(BoundModel {
            kinetics,
            forcing,
            physics,
        })
    }
}

/// A model with all free parameters substituted: evaluable kinetics and
/// forcing plus the effective physical constants.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundModel {
    pub kinetics: Kinetics,
    pub forcing: Forcing,
    pub physics: Physics,
}

impl BoundModel {
    /// Read a slot back from the bound model (round-trip check for `bind`).
    pub fn slot_value(&self, slot: Slot) -> Option<f64> {
        let spec = ModelSpec::fixed(self.kinetics.clone(), self.forcing.clone());
        spec.slot_value(slot, &self.physics)
    }
}

/// Sign-preserving box around a reference value with the given magnitude
/// factor: (0, f t] for positive t, [f t, 0) for negative t.
pub fn sign_preserving_box(reference: f64, factor: f64) -> (f64, f64) {
    if reference > 0.0 {
        (0.0, factor * reference)
    } else if reference < 0.0 {
        (factor * reference, 0.0)
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn schnakenberg_steady_state_is_zero() {
        let f = schnakenberg([1.0, 0.9], 20.0, 0.1, 0.9);
        assert!(f[0].abs() < 1e-14 && f[1].abs() < 1e-14);
    }

    #[test]
    fn schnakenberg_at_origin() {
        assert_eq!(schnakenberg([0.0, 0.0], 20.0, 0.1, 0.9), [2.0, 18.0]);
    }

    #[test]
    fn steady_state_values() {
        let a = steady_state(20.0, 0.1, 0.9).unwrap();
        assert_eq!(a, [1.0, 0.9 / 1.0]);
        // Independent of gamma.
        assert_eq!(steady_state(3.5, 0.1, 0.9).unwrap(), a);
        assert!(steady_state(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn proportional_forcing_example() {
        let g = proportional_forcing(&[1.0, 0.9], &[-0.01, 0.05]).unwrap();
        assert!((g - 0.035).abs() < 1e-15);
        assert_eq!(proportional_forcing(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(proportional_forcing(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn yeast_forcing_breakpoints() {
        let (k1, k2, kr) = (0.2, 0.01, 0.05);
        assert_eq!(yeast_forcing(k1, k1, k2, kr), 0.0);
        assert!((yeast_forcing(k1 + kr, k1, k2, kr) - k2).abs() < 1e-15);
        // Midpoint of the printed (non-monotone) transition hits k2 exactly.
        assert!((yeast_forcing(k1 + 0.5 * kr, k1, k2, kr) - k2).abs() < 1e-15);
        // Overshoot peak 81/64 k2 at s = 3/4.
        let peak = yeast_forcing(k1 + 0.75 * kr, k1, k2, kr);
        assert!((peak - 81.0 / 64.0 * k2).abs() < 1e-15);
        assert_eq!(yeast_forcing(0.0, k1, k2, kr), 0.0);
        assert_eq!(yeast_forcing(10.0, k1, k2, kr), k2);
    }

    #[test]
    fn yeast_forcing_continuous_at_breakpoints() {
        let (k1, k2, kr) = (0.2, 0.01, 0.05);
        for (f, name): (fn(f64, f64, f64, f64) -> f64, &str) in [
            (yeast_forcing as fn(f64, f64, f64, f64) -> f64, "printed"),
            (yeast_forcing_smoothstep, "smoothstep"),
        ] {
            for x in [k1, k1 + kr] {
                let below = f(x - 1e-9, k1, k2, kr);
                let above = f(x + 1e-9, k1, k2, kr);
                assert!((below - above).abs() < 1e-6 * k2.max(1.0), "{name} at {x}");
            }
        }
    }

    #[test]
    fn smoothstep_variant_is_monotone() {
        let (k1, k2, kr) = (0.2, 0.01, 0.05);
        let mut prev = -1.0;
        for i in 0..=200 {
            let eta = k1 - 0.01 + 0.07 * i as f64 / 200.0;
            let v = yeast_forcing_smoothstep(eta, k1, k2, kr);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    fn table2_spec() -> (ModelSpec, Physics) {
        let spec = ModelSpec {
            kinetics: Kinetics::Schnakenberg {
                gamma: 20.0,
                k1: 0.1,
                k2: 0.9,
            },
            forcing: Forcing::Proportional {
                k_p: vec![-1e-2, 5e-2],
            },
            free: vec![
                FreeSlot {
                    slot: Slot::ForcingCoefficient(1),
                    index: 0,
                },
                FreeSlot {
                    slot: Slot::KineticsGamma,
                    index: 1,
                },
                FreeSlot {
                    slot: Slot::BendingRigidity,
                    index: 2,
                },
            ],
            bounds: vec![(0.0, 0.15), (0.0, 60.0), (0.0, 0.03)],
        };
        let base = Physics {
            sigma: 5e-3,
            k_b: 1e-2,
            lambda: 1.0,
            diffusion: vec![1.0, 100.0],
        };
        (spec, base)
    }

    #[test]
    fn bind_reaches_target_configuration() {
        let (spec, base) = table2_spec();
        spec.validate(&base).unwrap();
        let bound = spec.bind(&[5e-2, 20.0, 1e-2], &base).unwrap();
        assert_eq!(bound.slot_value(Slot::ForcingCoefficient(1)), Some(5e-2));
        assert_eq!(bound.slot_value(Slot::KineticsGamma), Some(20.0));
        assert_eq!(bound.slot_value(Slot::BendingRigidity), Some(1e-2));
        // Untouched slots keep their base values.
        assert_eq!(bound.slot_value(Slot::Sigma), Some(5e-3));
        assert_eq!(bound.slot_value(Slot::ForcingCoefficient(0)), Some(-1e-2));
    }

    #[test]
    fn bind_empty_free_list_is_identity() {
        let (mut spec, base) = table2_spec();
        spec.free.clear();
        spec.bounds.clear();
        let bound = spec.bind(&[], &base).unwrap();
        assert_eq!(bound.kinetics, spec.kinetics);
        assert_eq!(bound.forcing, spec.forcing);
        assert_eq!(bound.physics, base);
    }

    #[test]
    fn bind_rejects_out_of_box() {
        let (spec, base) = table2_spec();
        assert!(matches!(
            spec.bind(&[0.2, 20.0, 1e-2], &base),
            Err(ModelError::OutOfBox { index: 0, .. })
        ));
    }

    #[test]
    fn true_parameters_round_trip() {
        let (spec, base) = table2_spec();
        let truth = spec.true_parameters(&base).unwrap();
        assert_eq!(truth, vec![5e-2, 20.0, 1e-2]);
        let bound = spec.bind(&truth, &base).unwrap();
        for fs in &spec.free {
            assert_eq!(bound.slot_value(fs.slot), Some(truth[fs.index]));
        }
    }

    #[test]
    fn slot_names_round_trip() {
        for slot in [
            Slot::Sigma,
            Slot::BendingRigidity,
            Slot::VolumePenalty,
            Slot::Diffusion(1),
            Slot::KineticsGamma,
            Slot::KineticsK1,
            Slot::KineticsK2,
            Slot::ForcingCoefficient(1),
            Slot::YeastK1,
            Slot::YeastK2,
            Slot::YeastKReg,
        ] {
            assert_eq!(slot.to_string().parse::<Slot>().unwrap(), slot);
        }
        assert!("nonsense".parse::<Slot>().is_err());
    }

    #[test]
    fn sign_preserving_boxes() {
        assert_eq!(sign_preserving_box(5e-2, 3.0), (0.0, 0.15));
        assert_eq!(sign_preserving_box(-1e-2, 3.0), (-0.03, 0.0));
    }

    proptest! {
        #[test]
        fn schnakenberg_linear_identity(
            a1 in -2.0..2.0f64, a2 in -2.0..2.0f64,
            gamma in 0.1..50.0f64, k1 in 0.0..2.0f64, k2 in 0.0..2.0f64,
        ) {
            let f = schnakenberg([a1, a2], gamma, k1, k2);
            let lhs = f[0] + f[1];
            let rhs = gamma * (k1 + k2 - a1);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs().max(rhs.abs())));
        }

        #[test]
        fn steady_state_closure(k1 in 1e-3..1.0f64, k2 in 1e-3..1.0f64) {
            let a = steady_state(7.0, k1, k2).unwrap();
            let f = schnakenberg(a, 1.0, k1, k2);
            prop_assert!(f[0].abs() < 1e-14 && f[1].abs() < 1e-14);
        }

        #[test]
        fn proportional_forcing_is_linear(
            a1 in -3.0..3.0f64, a2 in -3.0..3.0f64, alpha in -4.0..4.0f64,
        ) {
            let kp = [-0.01, 0.05];
            let g = proportional_forcing(&[a1, a2], &kp).unwrap();
            let g_scaled = proportional_forcing(&[alpha * a1, alpha * a2], &kp).unwrap();
            prop_assert!((g_scaled - alpha * g).abs() <= 1e-12 * (1.0 + g.abs() * alpha.abs()));
        }

        #[test]
        fn yeast_forcing_constant_outside_band(eta in -1.0..2.0f64) {
            let (k1, k2, kr) = (0.2, 0.01, 0.05);
            let v = yeast_forcing(eta, k1, k2, kr);
            if eta <= k1 {
                prop_assert_eq!(v, 0.0);
            } else if eta >= k1 + kr {
                prop_assert_eq!(v, k2);
            }
        }

        #[test]
        fn bind_is_injective_on_free_slots(
            dkp in -0.01..0.01f64, dg in -1.0..1.0f64,
        ) {
            let (spec, base) = table2_spec();
            let c1 = [5e-2, 20.0, 1e-2];
            let c2 = [5e-2 + dkp.abs() + 1e-6, 20.0 + dg, 1e-2];
            let b1 = spec.bind(&c1, &base).unwrap();
            let b2 = spec.bind(&c2, &base).unwrap();
            prop_assert_ne!(
                b1.slot_value(Slot::ForcingCoefficient(1)),
                b2.slot_value(Slot::ForcingCoefficient(1))
            );
        }
    }
}
