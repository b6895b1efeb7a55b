//! Diffuse-interface representation of curves and concentrations on a
//! shared bulk rectangle, and the L2 mismatch residuals built from it.
//!
//! At every bulk node the smoothed indicator is
//!
//! ```text
//! phi(x) = clamp[-1, 1] sin(pi d(x) / (2 eps))
//! ```
//!
//! with d the signed distance to the curve (negative inside), and each
//! species is extended off the curve by its value at the closest curve
//! point, weighted by cos(pi d / (2 eps)) inside the band |d| < eps and
//! zero outside.
//!
//! Nodes far from the curve only need the sign of d, never its value, so
//! the evaluation marks the band nodes by rasterizing each edge with a
//! safety dilation and computes exact segment distances there, while the
//! inside/outside sign for the whole grid comes from one even-odd parity
//! sweep per node row. Values agree exactly with brute-force signed
//! distances at every node.

use super::{align, ObjectiveError, ObservationSet, ResidualVector, WeightVector};
use crate::forward::Trajectory;
use crate::geometry::{segment_closest_point, Curve, Vec2, VertexField};
use nalgebra::DVector;
use std::f64::consts::PI;

/// Structured triangulation (two triangles per square cell) of the bulk
/// rectangle surrounding a pair of curves.
#[derive(Debug, Clone, PartialEq)]
pub struct BulkMesh {
    origin: Vec2,
    h: f64,
    /// Cell counts per direction; node counts are one larger.
    nx: usize,
    ny: usize,
    epsilon: f64,
}

impl BulkMesh {
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    pub fn extent(&self) -> Vec2 {
        Vec2::new(self.nx as f64 * self.h, self.ny as f64 * self.h)
    }

    pub fn n_cells(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    #[inline]
    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        iy * (self.nx + 1) + ix
    }

    #[inline]
    pub fn node_position(&self, ix: usize, iy: usize) -> Vec2 {
        self.origin + Vec2::new(ix as f64 * self.h, iy as f64 * self.h)
    }
}

/// Bulk rectangle covering all curves with a 2.5 eps margin, triangulated
/// uniformly with cell size eps / 4.5 (strictly finer than eps / 4).
/// Deterministic: identical inputs give identical meshes.
pub fn build_bulk_mesh(curves: &[&Curve], epsilon: f64) -> Result<BulkMesh, ObjectiveError> {
    if !(epsilon > 0.0) {
        return Err(ObjectiveError::ObservationInvariant(format!(
            "interface width must be positive, got {epsilon}"
        )));
    }
    if curves.is_empty() {
        return Err(ObjectiveError::ObservationInvariant(
            "bulk mesh needs at least one curve".into(),
        ));
    }
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for curve in curves {
        let (clo, chi) = curve.bounding_box();
        lo.x = lo.x.min(clo.x);
        lo.y = lo.y.min(clo.y);
        hi.x = hi.x.max(chi.x);
        hi.y = hi.y.max(chi.y);
    }
    let margin = 2.5 * epsilon;
    let origin = lo - Vec2::new(margin, margin);
    let extent = (hi - lo) + Vec2::new(2.0 * margin, 2.0 * margin);
    let h = epsilon / 4.5;
    // Round cell counts up so the margin never shrinks.
    let nx = (extent.x / h).ceil() as usize;
    let ny = (extent.y / h).ceil() as usize;
    Ok(BulkMesh {
        origin,
        h,
        nx: nx.max(1),
        ny: ny.max(1),
        epsilon,
    })
}

/// Nodal diffuse-interface values of one curve with its species fields.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseFieldData {
    /// Smoothed indicator, -1 inside the curve, +1 outside.
    pub phi: Vec<f64>,
    /// Band-extended species values, species-major.
    pub a_eps: Vec<Vec<f64>>,
}

/// Profile of the smoothed indicator at signed distance `d`.
pub fn indicator_profile(d: f64, epsilon: f64) -> f64 {
    if d >= epsilon {
        1.0
    } else if d <= -epsilon {
        -1.0
    } else {
        (PI * d / (2.0 * epsilon)).sin()
    }
}

/// Band weight of the concentration extension at signed distance `d`.
pub fn extension_profile(d: f64, epsilon: f64) -> f64 {
    if d.abs() < epsilon {
        (PI * d / (2.0 * epsilon)).cos()
    } else {
        0.0
    }
}

/// Per-row even-odd parity of the whole node grid against a closed
/// polygon. Matches the pointwise half-open crossing test bit for bit.
fn inside_mask(mesh: &BulkMesh, curve: &Curve) -> Vec<bool> {
    let (nx, ny) = (mesh.nx, mesh.ny);
    let n = curve.n_vertices();
    let vertices = curve.vertices();
    let mut inside = vec![false; mesh.n_nodes()];
    let mut crossings: Vec<f64> = Vec::with_capacity(16);
    for iy in 0..=ny {
        let y = mesh.origin.y + iy as f64 * mesh.h;
        crossings.clear();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            if (a.y > y) != (b.y > y) {
                crossings.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        if crossings.is_empty() {
            continue;
        }
        crossings.sort_unstable_by(|p, q| p.partial_cmp(q).unwrap());
        let mut at_or_below = 0usize;
        for ix in 0..=nx {
            let x = mesh.origin.x + ix as f64 * mesh.h;
            while at_or_below < crossings.len() && crossings[at_or_below] <= x {
                at_or_below += 1;
            }
            // Odd number of crossings strictly to the right: inside.
            inside[mesh.node_index(ix, iy)] = (crossings.len() - at_or_below) % 2 == 1;
        }
    }
    inside
}

/// (node, edge) candidate pairs for every node within `radius` of an edge,
/// sorted by node then edge.
fn band_candidates(mesh: &BulkMesh, curve: &Curve, radius: f64) -> Vec<(u32, u32)> {
    let n = curve.n_vertices();
    let vertices = curve.vertices();
    let h = mesh.h;
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for e in 0..n {
        let a = vertices[e];
        let b = vertices[(e + 1) % n];
        let lo_x = a.x.min(b.x) - radius;
        let hi_x = a.x.max(b.x) + radius;
        let lo_y = a.y.min(b.y) - radius;
        let hi_y = a.y.max(b.y) + radius;
        let ix0 = (((lo_x - mesh.origin.x) / h).ceil().max(0.0)) as usize;
        let ix1 = ((hi_x - mesh.origin.x) / h).floor().min(mesh.nx as f64);
        let iy0 = (((lo_y - mesh.origin.y) / h).ceil().max(0.0)) as usize;
        let iy1 = ((hi_y - mesh.origin.y) / h).floor().min(mesh.ny as f64);
        if ix1 < 0.0 || iy1 < 0.0 {
            continue;
        }
        let (ix1, iy1) = (ix1 as usize, iy1 as usize);
        for iy in iy0..=iy1 {
            for ix in ix0..=ix1 {
                let p = mesh.node_position(ix, iy);
                let (cp, _) = segment_closest_point(p, a, b);
                if (p - cp).norm() <= radius {
                    pairs.push((mesh.node_index(ix, iy) as u32, e as u32));
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Evaluate the diffuse representation of one curve (and its fields) at
/// every node of the mesh. Node values equal direct evaluation of the
/// signed distance and closest-point extension.
pub fn phase_field_fields(curve: &Curve, fields: &VertexField, mesh: &BulkMesh) -> PhaseFieldData {
    let eps = mesh.epsilon;
    let n_nodes = mesh.n_nodes();
    let n_species = fields.n_species();
    let inside = inside_mask(mesh, curve);
    let mut phi: Vec<f64> = inside.iter().map(|&i| if i { -1.0 } else { 1.0 }).collect();
    let mut a_eps = vec![vec![0.0; n_nodes]; n_species];

    let radius = eps + mesh.h;
    let pairs = band_candidates(mesh, curve, radius);
    let vertices = curve.vertices();
    let n = curve.n_vertices();
    let mut k = 0usize;
    while k < pairs.len() {
        let node = pairs[k].0;
        let mut best_d = f64::INFINITY;
        let mut best_edge = 0usize;
        let mut best_t = 0.0;
        let (ix, iy) = (node as usize % (mesh.nx + 1), node as usize / (mesh.nx + 1));
        let p = mesh.node_position(ix, iy);
        while k < pairs.len() && pairs[k].0 == node {
            let e = pairs[k].1 as usize;
            let (cp, t) = segment_closest_point(p, vertices[e], vertices[(e + 1) % n]);
            let d = (p - cp).norm();
            if d < best_d {
                best_d = d;
                best_edge = e;
                best_t = t;
            }
            k += 1;
        }
        if best_d < eps {
            let d_signed = if inside[node as usize] { -best_d } else { best_d };
            phi[node as usize] = (PI * d_signed / (2.0 * eps)).sin();
            let weight = (PI * d_signed / (2.0 * eps)).cos();
            for (s, field) in a_eps.iter_mut().enumerate() {
                field[node as usize] = weight * fields.edge_value(s, best_edge, best_t);
            }
        }
    }
    PhaseFieldData { phi, a_eps }
}

/// Exact L2(Omega)^2 norm of the difference of two nodal functions on the
/// piecewise-linear triangulation (element mass matrix, no quadrature
/// error).
pub fn l2_difference_squared(mesh: &BulkMesh, f: &[f64], g: &[f64]) -> f64 {
    assert_eq!(f.len(), mesh.n_nodes());
    assert_eq!(g.len(), mesh.n_nodes());
    let row = mesh.nx + 1;
    let tri_area = 0.5 * mesh.h * mesh.h;
    let mut total = 0.0;
    for iy in 0..mesh.ny {
        let base = iy * row;
        for ix in 0..mesh.nx {
            let n00 = base + ix;
            let n10 = n00 + 1;
            let n01 = n00 + row;
            let n11 = n01 + 1;
            let u00 = f[n00] - g[n00];
            let u10 = f[n10] - g[n10];
            let u01 = f[n01] - g[n01];
            let u11 = f[n11] - g[n11];
            if u00 == 0.0 && u10 == 0.0 && u01 == 0.0 && u11 == 0.0 {
                continue;
            }
            // Triangles (n00, n10, n11) and (n00, n11, n01).
            let t1 = u00 * u00
                + u10 * u10
                + u11 * u11
                + u00 * u10
                + u10 * u11
                + u11 * u00;
            let t2 = u00 * u00
                + u11 * u11
                + u01 * u01
                + u00 * u11
                + u11 * u01
                + u01 * u00;
            total += tri_area / 6.0 * (t1 + t2);
        }
    }
    total
}

/// Diffuse-interface residuals: per snapshot, one shared bulk mesh holds
/// both curves; the position entry is the L2 norm of the indicator
/// difference and the concentration entry the L2 norm over all species of
/// the extension difference. Requires ordered observations (a signed
/// distance needs a closed loop).
pub fn phase_field_residuals(
    traj: &Trajectory,
    obs: &ObservationSet,
    weights: &WeightVector,
    epsilon: f64,
    time_tolerance: f64,
) -> Result<ResidualVector, ObjectiveError> {
    let n_s = obs.n_fitted();
    weights.check_len(n_s)?;
    for (i, snap) in obs.snapshots.iter().enumerate().skip(1) {
        if !snap.ordered {
            return Err(ObjectiveError::UnorderedObservations(i));
        }
    }
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
        let observed_curve = Curve::from_point_loop(observed.points.clone())?;
        let observed_fields =
            VertexField::new(observed.fields.clone(), observed.points.len())?;
        let mesh = build_bulk_mesh(&[&computed.curve, &observed_curve], epsilon)?;
        let comp = phase_field_fields(&computed.curve, &computed.fields, &mesh);
        let obs_pf = phase_field_fields(&observed_curve, &observed_fields, &mesh);
        let position_sq = l2_difference_squared(&mesh, &obs_pf.phi, &comp.phi);
        let mut concentration_sq = 0.0;
        for s in 0..n_species {
            concentration_sq += l2_difference_squared(&mesh, &obs_pf.a_eps[s], &comp.a_eps[s]);
        }
        let w_pos = weights.as_slice()[i].sqrt();
        let w_conc = weights.as_slice()[i + n_s].sqrt();
        values[i] = w_pos * position_sq.sqrt();
        values[i + n_s] = w_conc * concentration_sq.sqrt();
    }
    Ok(ResidualVector { values, n_s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{Snapshot, Trajectory};
    use crate::geometry::{regular_polygon, signed_distance};
    use crate::objective::{ObservationMetadata, ObservedSnapshot};
    use approx::assert_relative_eq;

    #[test]
    fn profile_values() {
        let eps = 0.5;
        assert_eq!(indicator_profile(0.0, eps), 0.0);
        assert_eq!(indicator_profile(eps, eps), 1.0);
        assert_eq!(indicator_profile(-eps, eps), -1.0);
        assert_eq!(indicator_profile(2.0, eps), 1.0);
        assert_eq!(extension_profile(eps, eps), 0.0);
        assert_eq!(extension_profile(2.0, eps), 0.0);
        assert_relative_eq!(extension_profile(0.0, eps), 1.0);
        // Half-band distance hits sqrt(2)/2 on both profiles.
        let half = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(indicator_profile(eps / 2.0, eps), half, max_relative = 1e-15);
        assert_relative_eq!(extension_profile(eps / 2.0, eps), half, max_relative = 1e-15);
    }

    #[test]
    fn mesh_follows_the_sizing_rules() {
        let eps = 0.5;
        let circle = regular_polygon(Vec2::zeros(), 1.0, 64);
        let mesh = build_bulk_mesh(&[&circle, &circle], eps).unwrap();
        assert_relative_eq!(mesh.h(), eps / 4.5, max_relative = 1e-15);
        assert!(mesh.h() < eps / 4.0);
        // Rectangle roughly [-2.25, 2.25]^2 (vertex box plus 2.5 eps).
        assert!((mesh.origin().x + 2.25).abs() < 1e-12);
        assert!((mesh.origin().y + 2.25).abs() < 1e-12);
        assert!(mesh.extent().x >= 4.5 - 1e-12 && mesh.extent().x <= 4.5 + mesh.h());
        // Every curve point keeps a margin greater than 2 eps.
        for v in circle.vertices() {
            let to_lo = v - mesh.origin();
            let to_hi = mesh.origin() + mesh.extent() - v;
            for d in [to_lo.x, to_lo.y, to_hi.x, to_hi.y] {
                assert!(d > 2.0 * eps);
            }
        }
    }

    #[test]
    fn halving_epsilon_quadruples_nodes() {
        let circle = regular_polygon(Vec2::zeros(), 1.0, 64);
        let coarse = build_bulk_mesh(&[&circle], 0.5).unwrap();
        let fine = build_bulk_mesh(&[&circle], 0.25).unwrap();
        let ratio = fine.n_nodes() as f64 / coarse.n_nodes() as f64;
        assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn mesh_is_deterministic() {
        let circle = regular_polygon(Vec2::new(0.1, -0.2), 1.3, 48);
        let a = build_bulk_mesh(&[&circle], 0.4).unwrap();
        let b = build_bulk_mesh(&[&circle], 0.4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pipeline_matches_direct_evaluation() {
        // Values from the rasterized band pipeline must equal brute-force
        // signed distances node by node.
        let curve = regular_polygon(Vec2::new(0.2, -0.1), 0.9, 33);
        let n = curve.n_vertices();
        let fields = VertexField::new(
            vec![(0..n).map(|i| 0.3 + 0.05 * (i as f64).sin()).collect()],
            n,
        )
        .unwrap();
        let mesh = build_bulk_mesh(&[&curve], 0.35).unwrap();
        let data = phase_field_fields(&curve, &fields, &mesh);
        for iy in 0..=mesh.n_cells().1 {
            for ix in 0..=mesh.n_cells().0 {
                let node = mesh.node_index(ix, iy);
                let p = mesh.node_position(ix, iy);
                let d = signed_distance(&curve, p);
                assert_eq!(
                    data.phi[node],
                    indicator_profile(d, mesh.epsilon()),
                    "phi at node ({ix},{iy}), d = {d}"
                );
                if d.abs() >= mesh.epsilon() {
                    assert_eq!(data.a_eps[0][node], 0.0);
                }
            }
        }
    }

    #[test]
    fn circle_band_values_match_closed_form() {
        // Fine polygon so the polygonal distance is close to the analytic
        // circle distance.
        let eps = 0.5;
        let curve = regular_polygon(Vec2::zeros(), 1.0, 2048);
        let fields = VertexField::constant(&[1.0], 2048);
        let mesh = build_bulk_mesh(&[&curve], eps).unwrap();
        let data = phase_field_fields(&curve, &fields, &mesh);
        // Pick the node closest to radius 1 + eps/2 along +x.
        let mut best = (f64::INFINITY, 0, Vec2::zeros());
        for iy in 0..=mesh.n_cells().1 {
            for ix in 0..=mesh.n_cells().0 {
                let p = mesh.node_position(ix, iy);
                let miss = (p - Vec2::new(1.0 + eps / 2.0, 0.0)).norm();
                if miss < best.0 {
                    best = (miss, mesh.node_index(ix, iy), p);
                }
            }
        }
        let d = best.2.norm() - 1.0;
        let expect_phi = (PI * d / (2.0 * eps)).sin();
        let expect_a = (PI * d / (2.0 * eps)).cos();
        assert!((data.phi[best.1] - expect_phi).abs() < 1e-4);
        assert!((data.a_eps[0][best.1] - expect_a).abs() < 1e-4);
    }

    fn snapshot(t: f64, radius: f64, n: usize, value: f64) -> Snapshot {
        let curve = regular_polygon(Vec2::zeros(), radius, n);
        Snapshot {
            time: t,
            curve,
            fields: VertexField::constant(&[value], n),
        }
    }

    fn observed(snap: &Snapshot) -> ObservedSnapshot {
        ObservedSnapshot {
            time: snap.time,
            points: snap.curve.vertices().to_vec(),
            ordered: true,
            fields: (0..snap.fields.n_species())
                .map(|s| snap.fields.species(s).to_vec())
                .collect(),
        }
    }

    #[test]
    fn identical_sides_give_exact_zero() {
        let snaps = vec![snapshot(0.0, 1.0, 64, 0.4), snapshot(1.0, 1.1, 64, 0.6)];
        let obs = ObservationSet {
            times: vec![0.0, 1.0],
            snapshots: snaps.iter().map(observed).collect(),
            metadata: ObservationMetadata::default(),
        };
        let traj = Trajectory { snapshots: snaps };
        let chi =
            phase_field_residuals(&traj, &obs, &WeightVector::ones(1), 0.5, 1e-6).unwrap();
        assert_eq!(chi.values.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn unordered_observations_are_rejected() {
        let snaps = vec![snapshot(0.0, 1.0, 32, 0.4), snapshot(1.0, 1.1, 32, 0.6)];
        let mut obs = ObservationSet {
            times: vec![0.0, 1.0],
            snapshots: snaps.iter().map(observed).collect(),
            metadata: ObservationMetadata::default(),
        };
        obs.snapshots[1].ordered = false;
        let traj = Trajectory { snapshots: snaps };
        assert!(matches!(
            phase_field_residuals(&traj, &obs, &WeightVector::ones(1), 0.5, 1e-6),
            Err(ObjectiveError::UnorderedObservations(1))
        ));
    }

    #[test]
    fn concentric_circles_match_quadrature_oracle() {
        // Independent integration route: midpoint quadrature of the same
        // piecewise-linear integrand at high subdivision.
        let eps = 0.5;
        let inner = snapshot(1.0, 1.0, 256, 0.0);
        let outer = snapshot(1.0, 1.2, 256, 0.0);
        let obs = ObservationSet {
            times: vec![0.0, 1.0],
            snapshots: vec![observed(&snapshot(0.0, 1.0, 256, 0.0)), observed(&outer)],
            metadata: ObservationMetadata::default(),
        };
        let traj = Trajectory {
            snapshots: vec![snapshot(0.0, 1.0, 256, 0.0), inner.clone()],
        };
        let chi =
            phase_field_residuals(&traj, &obs, &WeightVector::ones(1), eps, 1e-6).unwrap();

        let outer_curve = regular_polygon(Vec2::zeros(), 1.2, 256);
        let mesh = build_bulk_mesh(&[&inner.curve, &outer_curve], eps).unwrap();
        let pf_inner =
            phase_field_fields(&inner.curve, &VertexField::constant(&[0.0], 256), &mesh);
        let pf_outer =
            phase_field_fields(&outer_curve, &VertexField::constant(&[0.0], 256), &mesh);
        // Midpoint rule on a k x k subgrid of every cell, sampling the
        // linear interpolant on the two triangles.
        let k = 12usize;
        let row = mesh.n_cells().0 + 1;
        let mut integral = 0.0;
        for iy in 0..mesh.n_cells().1 {
            for ix in 0..mesh.n_cells().0 {
                let n00 = iy * row + ix;
                let (u00, u10, u01, u11) = (
                    pf_outer.phi[n00] - pf_inner.phi[n00],
                    pf_outer.phi[n00 + 1] - pf_inner.phi[n00 + 1],
                    pf_outer.phi[n00 + row] - pf_inner.phi[n00 + row],
                    pf_outer.phi[n00 + row + 1] - pf_inner.phi[n00 + row + 1],
                );
                if u00 == 0.0 && u10 == 0.0 && u01 == 0.0 && u11 == 0.0 {
                    continue;
                }
                let sub = mesh.h() / k as f64;
                for sy in 0..k {
                    for sx in 0..k {
                        let x = (sx as f64 + 0.5) / k as f64;
                        let y = (sy as f64 + 0.5) / k as f64;
                        // Lower triangle (n00, n10, n11) when y <= x.
                        let v = if y <= x {
                            u00 + (u10 - u00) * x + (u11 - u10) * y
                        } else {
                            u00 + (u11 - u01) * x + (u01 - u00) * y
                        };
                        integral += v * v * sub * sub;
                    }
                }
            }
        }
        let oracle = integral.sqrt();
        assert!(
            (chi.values[0] - oracle).abs() < 1e-6,
            "{} vs oracle {}",
            chi.values[0],
            oracle
        );
        assert_eq!(chi.values[1], 0.0);
    }

    #[test]
    fn phi_stays_in_range_and_extension_vanishes_off_band() {
        let curve = regular_polygon(Vec2::zeros(), 1.0, 64);
        let fields = VertexField::constant(&[2.0], 64);
        let mesh = build_bulk_mesh(&[&curve], 0.3).unwrap();
        let data = phase_field_fields(&curve, &fields, &mesh);
        for (node, &phi) in data.phi.iter().enumerate() {
            assert!((-1.0..=1.0).contains(&phi));
            if phi.abs() == 1.0 {
                assert_eq!(data.a_eps[0][node], 0.0);
            }
        }
    }
}
