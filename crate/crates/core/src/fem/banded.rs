//! Symmetric banded matrices with Cholesky factorization and multi-column
//! solve/multiply kernels. Sized for structured-grid shell models: a few
//! thousand degrees of freedom with a half-bandwidth of a few hundred.

use crate::error::{CoreError, Result};

/// Symmetric matrix stored by its lower band, row by row.
///
/// Entry (i, j) with d = i - j in 0..=hb lives at data[i*(hb+1) + hb - d],
/// so each row's in-band entries are contiguous and end at the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricBanded {
    n: usize,
    hb: usize,
    data: Vec<f64>,
}

impl SymmetricBanded {
    pub fn zeros(n: usize, half_bandwidth: usize) -> Self {
        let hb = half_bandwidth.min(n.saturating_sub(1));
        SymmetricBanded {
            n,
            hb,
            data: vec![0.0; n * (hb + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.hb
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.hb);
        i * (self.hb + 1) + self.hb - (i - j)
    }

    /// Accumulates v into entry (i, j); the mirror entry is implied.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(r, c);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.hb {
            0.0
        } else {
            self.data[self.idx(r, c)]
        }
    }

    /// self += s * other. Both operands must share dimensions and bandwidth.
    pub fn add_scaled(&mut self, other: &SymmetricBanded, s: f64) {
        assert_eq!(self.n, other.n);
        assert_eq!(self.hb, other.hb);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * *b;
        }
    }

    /// y = A x for a block of p column vectors stored row-major (x[i*p + c]).
    ///
    /// The row-major layout keeps the innermost loop over columns contiguous,
    /// which is what makes subspace iteration affordable at this scale.
    pub fn mul_multi(&self, x: &[f64], p: usize, y: &mut [f64]) {
        assert_eq!(x.len(), self.n * p);
        assert_eq!(y.len(), self.n * p);
        y.fill(0.0);
        let hb = self.hb;
        for i in 0..self.n {
            let jlo = i.saturating_sub(hb);
            let base = i * (hb + 1) + hb - i;
            // Off-diagonal entries touch both row i and the mirrored row j.
            for j in jlo..i {
                let a = self.data[base + j];
                if a != 0.0 {
                    let xi = &x[i * p..i * p + p];
                    let xj = &x[j * p..j * p + p];
                    let (head, tail) = y.split_at_mut(i * p);
                    let yj = &mut head[j * p..j * p + p];
                    let yi = &mut tail[..p];
                    for c in 0..p {
                        yj[c] += a * xi[c];
                        yi[c] += a * xj[c];
                    }
                }
            }
            let d = self.data[base + i];
            let xi = &x[i * p..i * p + p];
            let yi = &mut y[i * p..i * p + p];
            for c in 0..p {
                yi[c] += d * xi[c];
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        self.mul_multi(x, 1, y);
    }

    /// Dense copy for small validation cases.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in i.saturating_sub(self.hb)..=i {
                let v = self.get(i, j);
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        d
    }

    /// Cholesky factorization A = L Lᵀ; L shares the band layout.
    pub fn cholesky(&self, context: &str) -> Result<BandedCholesky> {
        let n = self.n;
        let hb = self.hb;
        let mut l = self.data.clone();
        for i in 0..n {
            let jlo = i.saturating_sub(hb);
            // base_i + k addresses L[i, k] for k in jlo..=i.
            let base_i = i * (hb + 1) + hb - i;
            for j in jlo..=i {
                let base_j = j * (hb + 1) + hb - j;
                let mut sum = l[base_i + j];
                let mut dot = 0.0;
                for k in jlo..j {
                    dot += l[base_i + k] * l[base_j + k];
                }
                sum -= dot;
                if j < i {
                    l[base_i + j] = sum / l[base_j + j];
                } else {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(CoreError::NotPositiveDefinite {
                            context: context.to_string(),
                            pivot: sum,
                            index: i,
                        });
                    }
                    l[base_i + j] = sum.sqrt();
                }
            }
        }
        Ok(BandedCholesky { n, hb, l })
    }
}

/// Lower-triangular banded Cholesky factor.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    hb: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    /// Solves A X = B in place for p right-hand sides stored row-major.
    pub fn solve_multi_in_place(&self, x: &mut [f64], p: usize) {
        assert_eq!(x.len(), self.n * p);
        let hb = self.hb;
        // Forward substitution L y = b.
        for i in 0..self.n {
            let jlo = i.saturating_sub(hb);
            let base_i = i * (hb + 1) + hb - i;
            for j in jlo..i {
                let a = self.l[base_i + j];
                if a != 0.0 {
                    let (head, tail) = x.split_at_mut(i * p);
                    let xj = &head[j * p..j * p + p];
                    let xi = &mut tail[..p];
                    for c in 0..p {
                        xi[c] -= a * xj[c];
                    }
                }
            }
            let d = self.l[base_i + i];
            for c in 0..p {
                x[i * p + c] /= d;
            }
        }
        // Back substitution Lᵀ x = y.
        for i in (0..self.n).rev() {
            let jlo = i.saturating_sub(hb);
            let base_i = i * (hb + 1) + hb - i;
            let d = self.l[base_i + i];
            for c in 0..p {
                x[i * p + c] /= d;
            }
            for j in jlo..i {
                let a = self.l[base_i + j];
                if a != 0.0 {
                    let (head, tail) = x.split_at_mut(i * p);
                    let xi = &tail[..p];
                    let xj = &mut head[j * p..j * p + p];
                    for c in 0..p {
                        xj[c] -= a * xi[c];
                    }
                }
            }
        }
    }

    pub fn solve_vec_in_place(&self, x: &mut [f64]) {
        self.solve_multi_in_place(x, 1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Deterministic pseudo-random SPD band matrix: diagonally dominant.
    fn sample(n: usize, hb: usize) -> SymmetricBanded {
        let mut a = SymmetricBanded::zeros(n, hb);
        let mut state = 0x2545f4914f6cdd1du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for i in 0..n {
            for j in i.saturating_sub(hb)..i {
                a.add(i, j, next());
            }
            a.add(i, i, 2.0 * hb as f64 + 1.0 + next().abs());
        }
        a
    }

    #[test]
    fn mul_matches_dense() {
        let a = sample(37, 6);
        let d = a.to_dense();
        let p = 3;
        let x: Vec<f64> = (0..37 * p).map(|k| (k as f64 * 0.37).sin()).collect();
        let mut y = vec![0.0; 37 * p];
        a.mul_multi(&x, p, &mut y);
        for c in 0..p {
            let xc = nalgebra::DVector::from_iterator(37, (0..37).map(|i| x[i * p + c]));
            let yc = &d * xc;
            for i in 0..37 {
                assert_relative_eq!(y[i * p + c], yc[i], max_relative = 1e-12, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_solve_roundtrip() {
        let a = sample(50, 9);
        let chol = a.cholesky("test").unwrap();
        let p = 4;
        let x_true: Vec<f64> = (0..50 * p).map(|k| ((k * 7 % 13) as f64) - 6.0).collect();
        let mut b = vec![0.0; 50 * p];
        a.mul_multi(&x_true, p, &mut b);
        chol.solve_multi_in_place(&mut b, p);
        for (got, want) in b.iter().zip(x_true.iter()) {
            assert_relative_eq!(got, want, max_relative = 1e-9, epsilon = 1e-9);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = SymmetricBanded::zeros(4, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, -2.0);
        a.add(2, 2, 1.0);
        a.add(3, 3, 1.0);
        match a.cholesky("indefinite test") {
            Err(CoreError::NotPositiveDefinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected pivot failure, got {other:?}"),
        }
    }

    #[test]
    fn add_scaled_shifts_spectrum() {
        let a = sample(20, 4);
        let mut m = SymmetricBanded::zeros(20, 4);
        for i in 0..20 {
            m.add(i, i, 1.0);
        }
        let mut shifted = a.clone();
        shifted.add_scaled(&m, 3.5);
        for i in 0..20 {
            assert_relative_eq!(shifted.get(i, i), a.get(i, i) + 3.5, epsilon = 1e-14);
        }
    }
}
