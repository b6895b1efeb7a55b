//! Direct solver for cyclically banded linear systems.
//!
//! The time-stepping schemes produce matrices that are banded except for
//! wrap-around entries in the corners (the mesh is a closed loop). Those
//! are handled by splitting A = B + U W^T with B strictly banded and a
//! rank-2p correction, factoring B with a partially pivoted band LU and
//! applying the Woodbury identity.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BandError {
    #[error("matrix is numerically singular at column {0}")]
    Singular(usize),
    #[error("system too small: n = {n}, bandwidth = {p}")]
    TooSmall { n: usize, p: usize },
}

/// Banded matrix with kl sub- and ku super-diagonals, stored column-wise
/// with kl extra rows of fill space for pivoting.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// Column-major band storage, stride = 2 kl + ku + 1; entry (i, j) maps
    /// to row kl + ku + i - j of column j.
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            data: vec![0.0; (2 * kl + ku + 1) * n],
        }
    }

    #[inline]
    fn stride(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(i + self.ku >= j && j + self.kl >= i, "({i},{j}) off band");
        let row = self.kl + self.ku + i - j;
        self.data[j * self.stride() + row] = value;
    }

    /// LU factorization with partial pivoting (in place).
    pub fn lu(mut self) -> Result<BandLu, BandError> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let stride = self.stride();
        let kv = kl + ku; // effective super-diagonals after fill
        let mut ipiv = vec![0usize; n];
        for j in 0..n {
            // Pivot among rows j..=j+kl (within the band).
            let window = kl.min(n - 1 - j);
            let mut piv = 0usize;
            let mut piv_val = self.data[j * stride + kv].abs();
            for k in 1..=window {
                let v = self.data[j * stride + kv + k].abs();
                if v > piv_val {
                    piv_val = v;
                    piv = k;
                }
            }
            if piv_val == 0.0 {
                return Err(BandError::Singular(j));
            }
            ipiv[j] = j + piv;
            if piv != 0 {
                // Swap rows j and j+piv across the affected columns.
                let cols = (kv).min(n - 1 - j);
                for c in 0..=cols {
                    let col = j + c;
                    let r1 = kv + piv - c;
                    let r2 = kv - c;
                    self.data.swap(col * stride + r1, col * stride + r2);
                }
            }
            let pivot = self.data[j * stride + kv];
            for k in 1..=window {
                let m = self.data[j * stride + kv + k] / pivot;
                self.data[j * stride + kv + k] = m;
                let cols = kv.min(n - 1 - j);
                for c in 1..=cols {
                    let col = j + c;
                    let u = self.data[col * stride + kv - c];
                    self.data[col * stride + kv - c + k] -= m * u;
                }
            }
        }
        Ok(BandLu {
            n,
            kl,
            ku,
            data: self.data,
            ipiv,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let stride = 2 * kl + ku + 1;
        let kv = kl + ku;
        // Forward: apply row swaps and L.
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let window = kl.min(n - 1 - j);
            let bj = b[j];
            for k in 1..=window {
                b[j + k] -= self.data[j * stride + kv + k] * bj;
            }
        }
        // Backward: solve U x = y.
        for j in (0..n).rev() {
            let mut sum = b[j];
            let cols = kv.min(n - 1 - j);
            for c in 1..=cols {
                sum -= self.data[(j + c) * stride + kv - c] * b[j + c];
            }
            b[j] = sum / self.data[j * stride + kv];
        }
    }
}

/// Cyclic banded matrix with half-bandwidth p: nonzeros at offsets
/// -p..=p modulo n.
#[derive(Debug, Clone)]
pub struct CyclicBandMatrix {
    n: usize,
    p: usize,
    /// diagonals[k][i] = A[i, (i + k - p) mod n] for k in 0..=2p.
    diagonals: Vec<Vec<f64>>,
}

impl CyclicBandMatrix {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            diagonals: vec![vec![0.0; n]; 2 * p + 1],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Add to the entry at row i and cyclic offset o in [-p, p], i.e.
    /// column (i + o) mod n.
    #[inline]
    pub fn add(&mut self, i: usize, offset: isize, value: f64) {
        debug_assert!(offset.unsigned_abs() <= self.p);
        let k = (offset + self.p as isize) as usize;
        self.diagonals[k][i] += value;
    }

    fn entry(&self, i: usize, offset: isize) -> f64 {
        let k = (offset + self.p as isize) as usize;
        self.diagonals[k][i]
    }

    /// Dense row/column index of the entry at (i, offset).
    fn column(&self, i: usize, offset: isize) -> usize {
        ((i as isize + offset).rem_euclid(self.n as isize)) as usize
    }

    pub fn factor(&self) -> Result<CyclicBandLu, BandError> {
        let (n, p) = (self.n, self.p);
        if n < 2 * p + 2 {
            return Err(BandError::TooSmall { n, p });
        }
        // Collect the wrap-around entries: rows 0..p reach the last
        // columns, rows n-p..n reach the first columns.
        let mut corrections: Vec<(usize, Vec<(usize, f64)>)> = Vec::with_capacity(2 * p);
        for r in 0..p {
            let mut entries = Vec::new();
            for offset in -(p as isize)..=-(r as isize + 1) {
                let v = self.entry(r, offset);
                if v != 0.0 {
                    entries.push((self.column(r, offset), v));
                }
            }
            corrections.push((r, entries));
        }
        for t in 0..p {
            let r = n - p + t;
            let mut entries = Vec::new();
            for offset in (p - t) as isize..=p as isize {
                let v = self.entry(r, offset);
                if v != 0.0 {
                    entries.push((self.column(r, offset), v));
                }
            }
            corrections.push((r, entries));
        }
        corrections.retain(|(_, e)| !e.is_empty());
        let m = corrections.len();

        // B = A with the corner entries removed.
        let mut band = BandMatrix::zeros(n, p, p);
        for i in 0..n {
            for offset in -(p as isize)..=(p as isize) {
                let j = self.column(i, offset);
                let within_band = (j as isize - i as isize).unsigned_abs() as usize <= p;
                if within_band {
                    band.set(i, j, self.entry(i, offset));
                }
            }
        }
        let lu = band.lu()?;

        // Solve B Z = U where U's columns are unit vectors at the corner
        // rows, then form the capacity matrix C = I + W^T Z.
        let mut z_cols: Vec<Vec<f64>> = Vec::with_capacity(m);
        for (row, _) in &corrections {
            let mut col = vec![0.0; n];
            col[*row] = 1.0;
            lu.solve_in_place(&mut col);
            z_cols.push(col);
        }
        let mut capacity = nalgebra::DMatrix::<f64>::identity(m, m);
        for (k, (_, entries)) in corrections.iter().enumerate() {
            for l in 0..m {
                let mut dot = 0.0;
                for &(j, w) in entries {
                    dot += w * z_cols[l][j];
                }
                capacity[(k, l)] += dot;
            }
        }
        let capacity_lu = capacity.lu();
        if capacity_lu.determinant() == 0.0 {
            return Err(BandError::Singular(n));
        }
        Ok(CyclicBandLu {
            lu,
            corrections,
            z_cols,
            capacity_lu,
        })
    }
}

pub struct CyclicBandLu {
    lu: BandLu,
    corrections: Vec<(usize, Vec<(usize, f64)>)>,
    z_cols: Vec<Vec<f64>>,
    capacity_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl CyclicBandLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.lu.solve_in_place(b);
        let m = self.corrections.len();
        if m == 0 {
            return;
        }
        let mut t = nalgebra::DVector::<f64>::zeros(m);
        for (k, (_, entries)) in self.corrections.iter().enumerate() {
            t[k] = entries.iter().map(|&(j, w)| w * b[j]).sum();
        }
        let s = self
            .capacity_lu
            .solve(&t)
            .expect("capacity matrix checked nonsingular at factorization");
        for (l, z) in self.z_cols.iter().enumerate() {
            let c = s[l];
            if c != 0.0 {
                for (bi, zi) in b.iter_mut().zip(z) {
                    *bi -= c * zi;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_cyclic(n: usize, p: usize, rng: &mut ChaCha12Rng) -> (CyclicBandMatrix, DMatrix<f64>) {
        let mut cyc = CyclicBandMatrix::zeros(n, p);
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for offset in -(p as isize)..=(p as isize) {
                let j = ((i as isize + offset).rem_euclid(n as isize)) as usize;
                let v: f64 = if offset == 0 {
                    rng.random_range(4.0..6.0)
                } else {
                    rng.random_range(-1.0..1.0)
                };
                cyc.add(i, offset, v);
                dense[(i, j)] += v;
            }
        }
        (cyc, dense)
    }

    #[test]
    fn matches_dense_lu() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for &(n, p) in &[(8usize, 1usize), (8, 2), (13, 1), (16, 2), (40, 2), (64, 1)] {
            let (cyc, dense) = random_cyclic(n, p, &mut rng);
            let factored = cyc.factor().unwrap();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut x = b.clone();
            factored.solve_in_place(&mut x);
            let x_ref = dense
                .clone()
                .lu()
                .solve(&DVector::from_vec(b.clone()))
                .unwrap();
            for i in 0..n {
                assert!(
                    (x[i] - x_ref[i]).abs() < 1e-10,
                    "n={n} p={p} i={i}: {} vs {}",
                    x[i],
                    x_ref[i]
                );
            }
        }
    }

    #[test]
    fn solves_pure_diagonal() {
        let n = 10;
        let mut cyc = CyclicBandMatrix::zeros(n, 2);
        for i in 0..n {
            cyc.add(i, 0, 2.0);
        }
        let f = cyc.factor().unwrap();
        let mut b = vec![4.0; n];
        f.solve_in_place(&mut b);
        assert!(b.iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn rejects_singular() {
        let mut cyc = CyclicBandMatrix::zeros(8, 1);
        // Row of zeros.
        for i in 1..8 {
            cyc.add(i, 0, 1.0);
        }
        assert!(cyc.factor().is_err());
    }

    #[test]
    fn rejects_too_small() {
        let cyc = CyclicBandMatrix::zeros(4, 2);
        assert!(matches!(cyc.factor(), Err(BandError::TooSmall { .. })));
    }

    #[test]
    fn band_lu_needs_pivoting_case() {
        // Small diagonal forces a pivot swap.
        let mut m = BandMatrix::zeros(4, 1, 1);
        m.set(0, 0, 1e-14);
        m.set(0, 1, 1.0);
        m.set(1, 0, 1.0);
        m.set(1, 1, 1.0);
        m.set(1, 2, 1.0);
        m.set(2, 1, 1.0);
        m.set(2, 2, 3.0);
        m.set(2, 3, 1.0);
        m.set(3, 2, 1.0);
        m.set(3, 3, 2.0);
        let dense = DMatrix::from_row_slice(
            4,
            4,
            &[
                1e-14, 1.0, 0.0, 0.0, //
                1.0, 1.0, 1.0, 0.0, //
                0.0, 1.0, 3.0, 1.0, //
                0.0, 0.0, 1.0, 2.0,
            ],
        );
        let lu = m.lu().unwrap();
        let b = vec![1.0, -2.0, 0.5, 3.0];
        let mut x = b.clone();
        lu.solve_in_place(&mut x);
        let x_ref = dense.lu().solve(&DVector::from_vec(b)).unwrap();
        for i in 0..4 {
            assert!((x[i] - x_ref[i]).abs() < 1e-10);
        }
    }
}
