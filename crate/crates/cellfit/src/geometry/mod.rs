//! Discrete differential geometry of closed polygonal curves in the plane:
//! curvature, enclosed area, signed distance, closest points and
//! point-cloud distance queries.
//!
//! Curves are ordered vertex loops, oriented counter-clockwise so the
//! outward normal points away from the enclosed region. All operations are
//! pure functions; [`Curve`] and [`VertexField`] are immutable after
//! construction and safe to share across threads.

mod grid;

pub use grid::PointGrid;

use thiserror::Error;

/// 2-D point / vector type used throughout the crate.
pub type Vec2 = nalgebra::Vector2<f64>;

/// Relative edge-length floor: edges shorter than this fraction of the
/// curve diameter are treated as degenerate.
pub const DEGENERATE_EDGE_FRACTION: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("curve needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("degenerate edge {index}: length {length:e} below {threshold:e}")]
    DegenerateEdge {
        index: usize,
        length: f64,
        threshold: f64,
    },
    #[error("vertices are not counter-clockwise (signed area {0:e})")]
    NotCounterClockwise(f64),
    #[error("curve is self-intersecting (edges {0} and {1} cross)")]
    SelfIntersecting(usize, usize),
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("field has {found} values for species {species}, curve has {expected} vertices")]
    FieldLengthMismatch {
        species: usize,
        expected: usize,
        found: usize,
    },
    #[error("vertex coordinates must be finite")]
    NonFiniteVertex,
}

/// Closed polygonal curve, counter-clockwise, vertex i joined to i+1 mod N.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    vertices: Vec<Vec2>,
}

impl Curve {
    /// Fully validated constructor: N >= 3, finite coordinates, no
    /// degenerate edges, counter-clockwise orientation, simple polygon.
    pub fn new(vertices: Vec<Vec2>) -> Result<Self, GeometryError> {
        let curve = Self::from_point_loop(vertices)?;
        if let Some((i, j)) = curve.first_self_intersection() {
            return Err(GeometryError::SelfIntersecting(i, j));
        }
        Ok(curve)
    }

    /// Lenient constructor for polygons built from observed point clouds:
    /// checks vertex count, finiteness and edge lengths, fixes a clockwise
    /// input by reversing it, but does not require the loop to be simple
    /// (noisy observations may self-intersect mildly).
    pub fn from_point_loop(mut vertices: Vec<Vec2>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err(GeometryError::NonFiniteVertex);
        }
        let diameter = bbox_diagonal(&vertices);
        let threshold = DEGENERATE_EDGE_FRACTION * diameter;
        let n = vertices.len();
        for i in 0..n {
            let len = (vertices[(i + 1) % n] - vertices[i]).norm();
            if len <= threshold {
                return Err(GeometryError::DegenerateEdge {
                    index: i,
                    length: len,
                    threshold,
                });
            }
        }
        let area = shoelace(&vertices);
        if area == 0.0 {
            return Err(GeometryError::NotCounterClockwise(area));
        }
        if area < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    /// Constructor for solver-internal updates where invariants are
    /// maintained by the time-stepping loop itself (degeneracy and
    /// divergence are caught by the solver's own guards).
    pub(crate) fn from_vertices_unchecked(vertices: Vec<Vec2>) -> Self {
        debug_assert!(vertices.len() >= 3);
        Self { vertices }
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> Vec2 {
        self.vertices[i % self.vertices.len()]
    }

    /// Length of edge i (joining vertex i to vertex i+1 mod N).
    pub fn edge_length(&self, i: usize) -> f64 {
        let n = self.vertices.len();
        (self.vertices[(i + 1) % n] - self.vertices[i % n]).norm()
    }

    pub fn edge_lengths(&self) -> Vec<f64> {
        (0..self.vertices.len()).map(|i| self.edge_length(i)).collect()
    }

    pub fn total_length(&self) -> f64 {
        self.edge_lengths().iter().sum()
    }

    pub fn mean_edge_length(&self) -> f64 {
        self.total_length() / self.vertices.len() as f64
    }

    /// Lumped mass per vertex: half the length of the two incident edges.
    pub fn lumped_masses(&self) -> Vec<f64> {
        let n = self.vertices.len();
        let h = self.edge_lengths();
        (0..n).map(|i| 0.5 * (h[(i + n - 1) % n] + h[i])).collect()
    }

    pub fn bounding_box(&self) -> (Vec2, Vec2) {
        bounding_box(&self.vertices)
    }

    pub fn diameter(&self) -> f64 {
        bbox_diagonal(&self.vertices)
    }

    pub fn centroid(&self) -> Vec2 {
        let sum: Vec2 = self.vertices.iter().sum();
        sum / self.vertices.len() as f64
    }

    /// Outward unit normal at each vertex (central difference of the
    /// position, rotated clockwise; outward for counter-clockwise loops).
    pub fn outward_normals(&self) -> Vec<Vec2> {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let t = self.vertices[(i + 1) % n] - self.vertices[(i + n - 1) % n];
                let nu = Vec2::new(t.y, -t.x);
                let len = nu.norm();
                if len > 0.0 {
                    nu / len
                } else {
                    Vec2::zeros()
                }
            })
            .collect()
    }

    pub fn is_simple(&self) -> bool {
        self.first_self_intersection().is_none()
    }

    /// First pair of non-adjacent edges that cross, if any.
    pub fn first_self_intersection(&self) -> Option<(usize, usize)> {
        let n = self.vertices.len();
        for i in 0..n {
            let (a1, a2) = (self.vertices[i], self.vertices[(i + 1) % n]);
            for j in (i + 2)..n {
                // Skip the shared-vertex pair (last edge with the first).
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (b1, b2) = (self.vertices[j], self.vertices[(j + 1) % n]);
                if segments_intersect(a1, a2, b1, b2) {
                    return Some((i, j));
                }
            }
        }
        None
    }
}

/// Per-vertex scalar fields, one array per chemical species.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexField {
    values: Vec<Vec<f64>>,
}

impl VertexField {
    pub fn new(values: Vec<Vec<f64>>, n_vertices: usize) -> Result<Self, GeometryError> {
        for (s, v) in values.iter().enumerate() {
            if v.len() != n_vertices {
                return Err(GeometryError::FieldLengthMismatch {
                    species: s,
                    expected: n_vertices,
                    found: v.len(),
                });
            }
        }
        Ok(Self { values })
    }

    pub fn constant(values: &[f64], n_vertices: usize) -> Self {
        Self {
            values: values.iter().map(|&v| vec![v; n_vertices]).collect(),
        }
    }

    pub fn n_species(&self) -> usize {
        self.values.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn species(&self, s: usize) -> &[f64] {
        &self.values[s]
    }

    pub fn species_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.values[s]
    }

    pub fn value(&self, s: usize, vertex: usize) -> f64 {
        self.values[s][vertex]
    }

    /// All species at one vertex, in species order.
    pub fn at_vertex(&self, vertex: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[vertex]).collect()
    }

    /// Linear interpolation along edge `edge` at parameter `t` in [0, 1].
    pub fn edge_value(&self, s: usize, edge: usize, t: f64) -> f64 {
        let v = &self.values[s];
        let n = v.len();
        (1.0 - t) * v[edge % n] + t * v[(edge + 1) % n]
    }
}

fn bounding_box(points: &[Vec2]) -> (Vec2, Vec2) {
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

fn bbox_diagonal(points: &[Vec2]) -> f64 {
    let (lo, hi) = bounding_box(points);
    (hi - lo).norm()
}

fn shoelace(vertices: &[Vec2]) -> f64 {
    let n = vertices.len();
    let mut twice_area = 0.0;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        twice_area += a.x * b.y - a.y * b.x;
    }
    0.5 * twice_area
}

/// Signed (shoelace) area; positive for counter-clockwise loops.
pub fn signed_area(curve: &Curve) -> f64 {
    shoelace(&curve.vertices)
}

/// Area enclosed by the curve (absolute value of the shoelace sum).
pub fn enclosed_area(curve: &Curve) -> f64 {
    signed_area(curve).abs()
}

/// Discrete curvature vector at the middle vertex of a three-point stencil.
///
/// This is the lumped-mass Laplace-Beltrami of the position restricted to
/// one vertex; for a circle of radius r traversed counter-clockwise it has
/// magnitude 1/r and points toward the centre.
pub fn curvature_stencil(prev: Vec2, center: Vec2, next: Vec2) -> Vec2 {
    let h_prev = (center - prev).norm();
    let h_next = (next - center).norm();
    let mass = 0.5 * (h_prev + h_next);
    ((prev - center) / h_prev + (next - center) / h_next) / mass
}

/// Discrete curvature vector at every vertex. Approximates -H(x) nu(x)
/// where H is the curvature with respect to the outward normal nu, so the
/// vector points inward on a convex counter-clockwise loop.
pub fn discrete_curvature_vector(curve: &Curve) -> Vec<Vec2> {
    let n = curve.n_vertices();
    (0..n)
        .map(|i| {
            curvature_stencil(
                curve.vertex((i + n - 1) % n),
                curve.vertex(i),
                curve.vertex((i + 1) % n),
            )
        })
        .collect()
}

/// Even-odd inside test (half-open edge rule, so a vertex lying on the
/// query ray is counted once).
pub fn point_in_curve(curve: &Curve, p: Vec2) -> bool {
    let n = curve.n_vertices();
    let mut inside = false;
    for i in 0..n {
        let a = curve.vertices[i];
        let b = curve.vertices[(i + 1) % n];
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Closest point on a segment together with the parameter t in [0, 1].
pub fn segment_closest_point(p: Vec2, a: Vec2, b: Vec2) -> (Vec2, f64) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (a, 0.0);
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (a + ab * t, t)
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let (cp, _) = segment_closest_point(p, a, b);
    (p - cp).norm()
}

/// Closest point on the polygonal curve (segment-accurate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub point: Vec2,
    pub edge: usize,
    /// Parameter along the edge, in [0, 1].
    pub t: f64,
    pub distance: f64,
}

pub fn closest_point_on_curve(curve: &Curve, p: Vec2) -> CurvePoint {
    let n = curve.n_vertices();
    let mut best = CurvePoint {
        point: curve.vertices[0],
        edge: 0,
        t: 0.0,
        distance: f64::INFINITY,
    };
    for i in 0..n {
        let a = curve.vertices[i];
        let b = curve.vertices[(i + 1) % n];
        let (cp, t) = segment_closest_point(p, a, b);
        let d = (p - cp).norm();
        if d < best.distance {
            best = CurvePoint {
                point: cp,
                edge: i,
                t,
                distance: d,
            };
        }
    }
    best
}

/// Signed distance to the curve: segment-accurate in magnitude, negative
/// inside the enclosed region and positive outside.
pub fn signed_distance(curve: &Curve, p: Vec2) -> f64 {
    let d = closest_point_on_curve(curve, p).distance;
    if point_in_curve(curve, p) {
        -d
    } else {
        d
    }
}

/// Minimum distance from `x` to a point set, with the index of the closest
/// point (first index on exact ties).
pub fn hausdorff_point_distance(points: &[Vec2], x: Vec2) -> Result<(f64, usize), GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyPointSet);
    }
    let mut best = f64::INFINITY;
    let mut best_idx = 0;
    for (i, p) in points.iter().enumerate() {
        let d2 = (x - p).norm_squared();
        if d2 < best {
            best = d2;
            best_idx = i;
        }
    }
    Ok((best.sqrt(), best_idx))
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Proper or touching intersection test for two segments.
fn segments_intersect(a1: Vec2, a2: Vec2, b1: Vec2, b2: Vec2) -> bool {
    let d1 = orient(b1, b2, a1);
    let d2 = orient(b1, b2, a2);
    let d3 = orient(a1, a2, b1);
    let d4 = orient(a1, a2, b2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on_segment = |p: Vec2, q: Vec2, r: Vec2| {
        r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    (d1 == 0.0 && on_segment(b1, b2, a1))
        || (d2 == 0.0 && on_segment(b1, b2, a2))
        || (d3 == 0.0 && on_segment(a1, a2, b1))
        || (d4 == 0.0 && on_segment(a1, a2, b2))
}

/// Regular N-gon inscribed in a circle, counter-clockwise, first vertex on
/// the positive x axis.
pub fn regular_polygon(center: Vec2, radius: f64, n: usize) -> Curve {
    let vertices = (0..n)
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            center + Vec2::new(radius * theta.cos(), radius * theta.sin())
        })
        .collect();
    Curve::from_vertices_unchecked(vertices)
}
