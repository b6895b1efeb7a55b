//! Uniform-grid acceleration for nearest-point queries.
//!
//! Identification runs issue very large numbers of closest-point queries
//! against the same point sets, so the sets are bucketed into a uniform
//! grid once and queried with an expanding ring search. Results (distance
//! and index, ties broken toward the smaller index) are identical to an
//! exhaustive scan.

use super::Vec2;

#[derive(Debug, Clone)]
pub struct PointGrid {
    points: Vec<Vec2>,
    origin: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl PointGrid {
    /// Build a grid with the given cell size. A non-positive or non-finite
    /// hint falls back to an automatic size.
    pub fn new(points: &[Vec2], cell_size: f64) -> Self {
        assert!(!points.is_empty(), "PointGrid requires a non-empty set");
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        let extent = hi - lo;
        let mut cell = cell_size;
        if !(cell.is_finite() && cell > 0.0) {
            cell = (extent.norm() / (points.len() as f64).sqrt()).max(1e-12);
        }
        // Keep the bucket table proportional to the point count.
        let max_cells = 8 * points.len() + 64;
        loop {
            let nx = (extent.x / cell).floor() as usize + 1;
            let ny = (extent.y / cell).floor() as usize + 1;
            if nx.saturating_mul(ny) <= max_cells {
                break;
            }
            cell *= 2.0;
        }
        let nx = (extent.x / cell).floor() as usize + 1;
        let ny = (extent.y / cell).floor() as usize + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        for (i, p) in points.iter().enumerate() {
            let (cx, cy) = Self::cell_of(lo, cell, nx, ny, *p);
            buckets[cy * nx + cx].push(i as u32);
        }
        Self {
            points: points.to_vec(),
            origin: lo,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    /// Grid sized by the mean consecutive spacing of an ordered loop.
    pub fn from_loop(points: &[Vec2]) -> Self {
        let n = points.len();
        let mean_edge = (0..n)
            .map(|i| (points[(i + 1) % n] - points[i]).norm())
            .sum::<f64>()
            / n as f64;
        Self::new(points, mean_edge)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    fn cell_of(origin: Vec2, cell: f64, nx: usize, ny: usize, p: Vec2) -> (usize, usize) {
        let cx = ((p.x - origin.x) / cell).floor();
        let cy = ((p.y - origin.y) / cell).floor();
        let cx = (cx.max(0.0) as usize).min(nx - 1);
        let cy = (cy.max(0.0) as usize).min(ny - 1);
        (cx, cy)
    }

    /// Nearest point to `x`: (distance, index). Matches the exhaustive scan
    /// exactly, including the first-index tie rule.
    pub fn nearest(&self, x: Vec2) -> (f64, usize) {
        let (cx, cy) = Self::cell_of(self.origin, self.cell, self.nx, self.ny, x);
        let mut best_d2 = f64::INFINITY;
        let mut best_idx = u32::MAX;
        let max_ring = self.nx.max(self.ny) + 1;
        let mut ring = 0usize;
        loop {
            // Any cell in ring r is at least (r-1) * cell away from x.
            if best_idx != u32::MAX {
                let bound = (ring as f64 - 1.0).max(0.0) * self.cell;
                if bound * bound > best_d2 {
                    break;
                }
            }
            if ring > max_ring {
                break;
            }
            self.scan_ring(cx, cy, ring, x, &mut best_d2, &mut best_idx);
            ring += 1;
        }
        (best_d2.sqrt(), best_idx as usize)
    }

    fn scan_ring(
        &self,
        cx: usize,
        cy: usize,
        ring: usize,
        x: Vec2,
        best_d2: &mut f64,
        best_idx: &mut u32,
    ) {
        let r = ring as isize;
        let (cx, cy) = (cx as isize, cy as isize);
        let mut visit = |gx: isize, gy: isize| {
            if gx < 0 || gy < 0 || gx >= self.nx as isize || gy >= self.ny as isize {
                return;
            }
            for &idx in &self.buckets[gy as usize * self.nx + gx as usize] {
                let d2 = (x - self.points[idx as usize]).norm_squared();
                if d2 < *best_d2 || (d2 == *best_d2 && idx < *best_idx) {
                    *best_d2 = d2;
                    *best_idx = idx;
                }
            }
        };
        if ring == 0 {
            visit(cx, cy);
            return;
        }
        for gx in (cx - r)..=(cx + r) {
            visit(gx, cy - r);
            visit(gx, cy + r);
        }
        for gy in (cy - r + 1)..=(cy + r - 1) {
            visit(cx - r, gy);
            visit(cx + r, gy);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::hausdorff_point_distance;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn matches_brute_force_on_random_sets() {
        let mut rng = ChaCha12Rng::seed_from_u64(12345);
        let points: Vec<Vec2> = (0..1000)
            .map(|_| Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
            .collect();
        let grid = PointGrid::new(&points, 0.2);
        for _ in 0..100 {
            let q = Vec2::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let (d_grid, i_grid) = grid.nearest(q);
            let (d_brute, i_brute) = hausdorff_point_distance(&points, q).unwrap();
            assert_eq!(d_grid, d_brute);
            assert_eq!(i_grid, i_brute);
        }
    }

    #[test]
    fn matches_brute_force_far_outside_the_box() {
        let points = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.5, 1.0)];
        let grid = PointGrid::new(&points, 0.5);
        let q = Vec2::new(50.0, -20.0);
        let (d_grid, i_grid) = grid.nearest(q);
        let (d_brute, i_brute) = hausdorff_point_distance(&points, q).unwrap();
        assert_eq!((d_grid, i_grid), (d_brute, i_brute));
    }

    #[test]
    fn tie_breaks_toward_first_index() {
        let points = vec![Vec2::new(-1.0, 0.0), Vec2::new(1.0, 0.0)];
        let grid = PointGrid::new(&points, 0.5);
        let (_, idx) = grid.nearest(Vec2::new(0.0, 0.0));
        assert_eq!(idx, 0);
    }
}
