//! Minimal sparse-matrix kit: CSR assembly/products and a banded Cholesky
//! factorization.
//!
//! The velocity solve leads to a symmetric positive definite system whose
//! graph is a fixed stencil on a structured grid, so its bandwidth is a few
//! multiples of the row length.  A dense-band Cholesky factorization is
//! simple, deterministic, and fast enough to factor once per run and reuse
//! for every time step and every adjoint step.  CSR is used only to build
//! the system (transpose and triple products of difference operators); the
//! band array is extracted at the end.

use crate::error::{ChbError, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    /// Builds from (row, col, value) triplets; duplicate entries are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Csr {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut rows: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut indices: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut data: Vec<f64> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in &triplets {
            debug_assert!(r < n_rows && c < n_cols);
            if rows.last() == Some(&r) && indices.last() == Some(&c) {
                *data.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                indices.push(c);
                data.push(v);
            }
        }
        let mut indptr = vec![0usize; n_rows + 1];
        for &r in &rows {
            indptr[r + 1] += 1;
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        Csr { n_rows, n_cols, indptr, indices, data }
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for r in 0..self.n_rows {
            let mut s = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                s += self.data[k] * x[self.indices[k]];
            }
            y[r] = s;
        }
    }

    /// Exact transpose.
    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.n_cols];
        for &c in &self.indices {
            counts[c] += 1;
        }
        let mut indptr = vec![0usize; self.n_cols + 1];
        for c in 0..self.n_cols {
            indptr[c + 1] = indptr[c] + counts[c];
        }
        let mut indices = vec![0usize; self.indices.len()];
        let mut data = vec![0.0; self.data.len()];
        let mut next = indptr.clone();
        for r in 0..self.n_rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[k];
                let slot = next[c];
                indices[slot] = r;
                data[slot] = self.data[k];
                next[c] += 1;
            }
        }
        Csr { n_rows: self.n_cols, n_cols: self.n_rows, indptr, indices, data }
    }

    /// Sparse product `A B` with a dense accumulator per row.
    pub fn matmul(&self, other: &Csr) -> Csr {
        assert_eq!(self.n_cols, other.n_rows, "matmul shape mismatch");
        let n_cols = other.n_cols;
        let mut acc = vec![0.0_f64; n_cols];
        let mut touched: Vec<usize> = Vec::new();
        let mut indptr = vec![0usize; self.n_rows + 1];
        let mut indices = Vec::new();
        let mut data = Vec::new();
        for r in 0..self.n_rows {
            touched.clear();
            for k in self.indptr[r]..self.indptr[r + 1] {
                let mid = self.indices[k];
                let v = self.data[k];
                for k2 in other.indptr[mid]..other.indptr[mid + 1] {
                    let c = other.indices[k2];
                    if acc[c] == 0.0 && !touched.contains(&c) {
                        touched.push(c);
                    }
                    acc[c] += v * other.data[k2];
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                indices.push(c);
                data.push(acc[c]);
                acc[c] = 0.0;
            }
            indptr[r + 1] = indices.len();
        }
        Csr { n_rows: self.n_rows, n_cols, indptr, indices, data }
    }

    /// Adds `s * other` entrywise (shapes must match).
    pub fn add_scaled(&self, s: f64, other: &Csr) -> Csr {
        assert_eq!((self.n_rows, self.n_cols), (other.n_rows, other.n_cols));
        let mut triplets = Vec::with_capacity(self.data.len() + other.data.len());
        for r in 0..self.n_rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                triplets.push((r, self.indices[k], self.data[k]));
            }
            for k in other.indptr[r]..other.indptr[r + 1] {
                triplets.push((r, other.indices[k], s * other.data[k]));
            }
        }
        Csr::from_triplets(self.n_rows, self.n_cols, triplets)
    }

    /// Half bandwidth `max |i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0usize;
        for r in 0..self.n_rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                bw = bw.max(r.abs_diff(self.indices[k]));
            }
        }
        bw
    }

    /// Largest symmetry defect `max |A_ij - A_ji|`; assembly sanity check.
    pub fn symmetry_defect(&self) -> f64 {
        let t = self.transpose();
        let mut worst = 0.0_f64;
        for r in 0..self.n_rows {
            let a = &self.indices[self.indptr[r]..self.indptr[r + 1]];
            let av = &self.data[self.indptr[r]..self.indptr[r + 1]];
            let b = &t.indices[t.indptr[r]..t.indptr[r + 1]];
            let bv = &t.data[t.indptr[r]..t.indptr[r + 1]];
            // Rows are sorted; walk both.
            let (mut i, mut j) = (0usize, 0usize);
            while i < a.len() || j < b.len() {
                match (a.get(i), b.get(j)) {
                    (Some(&ca), Some(&cb)) if ca == cb => {
                        worst = worst.max((av[i] - bv[j]).abs());
                        i += 1;
                        j += 1;
                    }
                    (Some(&ca), Some(&cb)) if ca < cb => {
                        worst = worst.max(av[i].abs());
                        i += 1;
                    }
                    (Some(_), Some(_)) => {
                        worst = worst.max(bv[j].abs());
                        j += 1;
                    }
                    (Some(_), None) => {
                        worst = worst.max(av[i].abs());
                        i += 1;
                    }
                    (None, Some(_)) => {
                        worst = worst.max(bv[j].abs());
                        j += 1;
                    }
                    (None, None) => break,
                }
            }
        }
        worst
    }
}

/// Cholesky factor of a symmetric positive definite banded matrix, stored
/// as a dense lower band: `L[i, j]` lives at `band[(i - j) + j * (bw + 1)]`.
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Factors a square CSR matrix assumed symmetric (only the lower
    /// triangle is read).  Fails if a pivot is not strictly positive.
    pub fn factor(a: &Csr) -> Result<BandedCholesky> {
        assert_eq!(a.n_rows, a.n_cols, "banded Cholesky needs a square matrix");
        let n = a.n_rows;
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut band = vec![0.0_f64; n * w];
        for r in 0..n {
            for k in a.indptr[r]..a.indptr[r + 1] {
                let c = a.indices[k];
                if c <= r {
                    band[(r - c) + c * w] = a.data[k];
                }
            }
        }
        // In-place banded Cholesky (column order).
        for j in 0..n {
            let mut diag = band[j * w];
            let kmin = j.saturating_sub(bw);
            for k in kmin..j {
                let l = band[(j - k) + k * w];
                diag -= l * l;
            }
            if !(diag > 0.0) {
                return Err(ChbError::numerical(format!(
                    "matrix is not positive definite (pivot {diag:e} at column {j})"
                )));
            }
            let dj = diag.sqrt();
            band[j * w] = dj;
            let imax = (j + bw).min(n - 1);
            for i in j + 1..=imax {
                let mut s = band[(i - j) + j * w];
                let kmin = i.saturating_sub(bw).max(kmin);
                for k in kmin..j {
                    s -= band[(i - k) + k * w] * band[(j - k) + k * w];
                }
                band[(i - j) + j * w] = s / dj;
            }
        }
        Ok(BandedCholesky { n, bw, band })
    }

    /// Solves `A x = b` by forward/back substitution.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let w = self.bw + 1;
        let mut x = b.to_vec();
        // L y = b
        for i in 0..self.n {
            let kmin = i.saturating_sub(self.bw);
            let mut s = x[i];
            for k in kmin..i {
                s -= self.band[(i - k) + k * w] * x[k];
            }
            x[i] = s / self.band[i * w];
        }
        // L^T x = y
        for i in (0..self.n).rev() {
            let imax = (i + self.bw).min(self.n - 1);
            let mut s = x[i];
            for k in i + 1..=imax {
                s -= self.band[(k - i) + i * w] * x[k];
            }
            x[i] = s / self.band[i * w];
        }
        x
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense Gaussian-elimination oracle (partial pivoting).
    fn dense_solve(a: &Csr, b: &[f64]) -> Vec<f64> {
        let n = a.n_rows;
        let mut m = vec![0.0_f64; n * n];
        for r in 0..n {
            for k in a.indptr[r]..a.indptr[r + 1] {
                m[r * n + a.indices[k]] = a.data[k];
            }
        }
        let mut x = b.to_vec();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| m[i * n + col].abs().partial_cmp(&m[j * n + col].abs()).unwrap())
                .unwrap();
            for c in 0..n {
                m.swap(col * n + c, piv * n + c);
            }
            x.swap(col, piv);
            let d = m[col * n + col];
            for r in col + 1..n {
                let f = m[r * n + col] / d;
                if f == 0.0 {
                    continue;
                }
                for c in col..n {
                    m[r * n + c] -= f * m[col * n + c];
                }
                x[r] -= f * x[col];
            }
        }
        for r in (0..n).rev() {
            let mut s = x[r];
            for c in r + 1..n {
                s -= m[r * n + c] * x[c];
            }
            x[r] = s / m[r * n + r];
        }
        x
    }

    /// A small SPD matrix shaped like the systems we factor: a five-point
    /// Laplacian on a 6x5 grid plus a mass term.
    fn test_matrix() -> Csr {
        let (nx, ny) = (6usize, 5usize);
        let n = nx * ny;
        let mut t = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let r = j * nx + i;
                let mut diag = 1.0 + (r as f64 * 0.3).sin().abs(); // mass term
                for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if ii >= 0 && ii < nx as i64 && jj >= 0 && jj < ny as i64 {
                        let c = jj as usize * nx + ii as usize;
                        t.push((r, c, -1.0));
                        diag += 1.0;
                    }
                }
                t.push((r, r, diag));
            }
        }
        Csr::from_triplets(n, n, t)
    }

    #[test]
    fn csr_roundtrip_and_products() {
        let a = test_matrix();
        assert!(a.symmetry_defect() == 0.0);
        assert_eq!(a.bandwidth(), 6);
        let at = a.transpose();
        // Symmetric matrix: transpose equals original entrywise.
        assert_eq!(a.indices, at.indices);
        for (x, y) in a.data.iter().zip(&at.data) {
            assert_eq!(x, y);
        }
        // (A A) x == A (A x).
        let x: Vec<f64> = (0..a.n_cols).map(|k| ((k * 7 % 13) as f64) - 6.0).collect();
        let aa = a.matmul(&a);
        let mut y1 = vec![0.0; a.n_rows];
        let mut y2 = vec![0.0; a.n_rows];
        let mut tmp = vec![0.0; a.n_rows];
        aa.mul_vec(&x, &mut y1);
        a.mul_vec(&x, &mut tmp);
        a.mul_vec(&tmp, &mut y2);
        for (p, q) in y1.iter().zip(&y2) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn banded_cholesky_matches_dense_oracle() {
        let a = test_matrix();
        let chol = BandedCholesky::factor(&a).unwrap();
        let b: Vec<f64> = (0..a.n_rows).map(|k| (k as f64 * 0.7).cos()).collect();
        let x = chol.solve(&b);
        let y = dense_solve(&a, &b);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-11, "{p} vs {q}");
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let t = vec![(0, 0, 1.0), (1, 1, -2.0), (0, 1, 0.0), (1, 0, 0.0)];
        let a = Csr::from_triplets(2, 2, t);
        assert!(BandedCholesky::factor(&a).is_err());
    }
}
