//! Packed lower-triangular Cholesky factor with one-row extension.
//!
//! Row `i` of `L` occupies `data[i(i+1)/2 .. i(i+1)/2 + i + 1]`, so both the
//! forward solve and the row append touch contiguous memory.

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CholeskyFactor {
    n: usize,
    data: Vec<f64>,
    /// Total jitter added to pivots that came out non-positive.
    jitter_added: f64,
}

#[inline]
fn offset(i: usize) -> usize {
    i * (i + 1) / 2
}

impl CholeskyFactor {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[offset(i)..offset(i) + i + 1]
    }

    #[inline]
    pub fn pivot(&self, i: usize) -> f64 {
        self.data[offset(i) + i]
    }

    pub fn jitter_added(&self) -> f64 {
        self.jitter_added
    }

    /// Factor a symmetric positive-definite matrix given by `entry(i, j)` for `j ≤ i`.
    ///
    /// Returns the index and value of the first non-positive pivot on failure.
    pub fn factorize(n: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self, (usize, f64)> {
        let mut data = vec![0.0; offset(n)];
        for i in 0..n {
            let oi = offset(i);
            for j in 0..i {
                let oj = offset(j);
                let dot = dot(&data[oi..oi + j], &data[oj..oj + j]);
                data[oi + j] = (entry(i, j) - dot) / data[oj + j];
            }
            let dot = dot(&data[oi..oi + i], &data[oi..oi + i]);
            let d2 = entry(i, i) - dot;
            if !(d2 > 0.0) || !d2.is_finite() {
                return Err((i, d2));
            }
            data[oi + i] = d2.sqrt();
        }
        Ok(CholeskyFactor {
            n,
            data,
            jitter_added: 0.0,
        })
    }

    /// Factor with escalating diagonal jitter when a pivot fails.
    pub fn factorize_with_jitter(
        n: usize,
        entry: impl Fn(usize, usize) -> f64,
        base_jitter: f64,
    ) -> Result<Self> {
        let mut jitter = 0.0;
        let mut last = (0usize, 0.0f64);
        for attempt in 0..5 {
            if attempt > 0 {
                jitter = base_jitter * 100f64.powi(attempt - 1);
            }
            let result = Self::factorize(n, |i, j| {
                if i == j {
                    entry(i, j) + jitter
                } else {
                    entry(i, j)
                }
            });
            match result {
                Ok(mut f) => {
                    f.jitter_added = jitter * n as f64;
                    return Ok(f);
                }
                Err(fail) => last = fail,
            }
        }
        Err(Error::numerical(
            "Cholesky factorization failed after jitter",
            format!(
                "n={n}, first non-positive pivot {:.3e} at row {}, final jitter {:.3e}",
                last.1, last.0, jitter
            ),
        ))
    }

    /// Solve `L v = b` in place.
    pub fn forward_solve_in_place(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        for i in 0..self.n {
            let row = self.row(i);
            let s = dot(&row[..i], &b[..i]);
            b[i] = (b[i] - s) / row[i];
        }
    }

    /// Solve `Lᵀ x = b` in place.
    pub fn backward_solve_in_place(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        for j in (0..self.n).rev() {
            let row = self.row(j);
            let xj = b[j] / row[j];
            b[j] = xj;
            for (bi, lji) in b[..j].iter_mut().zip(&row[..j]) {
                *bi -= lji * xj;
            }
        }
    }

    /// Forward solve for several right-hand sides at once (`rhs[c]` has length n).
    ///
    /// Columns are processed in interleaved groups of `LANES`, so each entry
    /// of `L` is loaded once per group and the inner loop vectorizes.
    pub fn forward_solve_batch(&self, rhs: &mut [Vec<f64>]) {
        const LANES: usize = 8;
        let mut buf: Vec<[f64; LANES]> = vec![[0.0; LANES]; self.n];
        for group in rhs.chunks_mut(LANES) {
            for (j, slot) in buf.iter_mut().enumerate() {
                for (c, b) in group.iter().enumerate() {
                    slot[c] = b[j];
                }
            }
            for i in 0..self.n {
                let row = self.row(i);
                let mut acc = [0.0f64; LANES];
                for (l, bj) in row[..i].iter().zip(&buf[..i]) {
                    for c in 0..LANES {
                        acc[c] += l * bj[c];
                    }
                }
                let pivot = row[i];
                for c in 0..LANES {
                    buf[i][c] = (buf[i][c] - acc[c]) / pivot;
                }
            }
            for (c, b) in group.iter_mut().enumerate() {
                for (j, slot) in buf.iter().enumerate() {
                    b[j] = slot[c];
                }
            }
        }
    }

    /// Append a row `[c, d]` where `c = L⁻¹ k_new` and `d² = k_nn + noise − ‖c‖²`.
    ///
    /// A non-positive `d²` is lifted to `jitter` (and recorded).
    pub fn push_row(&mut self, c: &[f64], d2: f64, jitter: f64) -> Result<f64> {
        debug_assert_eq!(c.len(), self.n);
        let d2 = if d2 > 0.0 && d2.is_finite() {
            d2
        } else if d2.is_finite() && jitter > 0.0 {
            self.jitter_added += jitter - d2.min(0.0);
            jitter
        } else {
            return Err(Error::numerical(
                "factor extension produced a non-positive pivot",
                format!("n={}, pivot^2={d2:.3e}", self.n),
            ));
        };
        self.data.extend_from_slice(c);
        self.data.push(d2.sqrt());
        self.n += 1;
        Ok(d2)
    }

    /// Σ log L_ii², i.e. log det(L Lᵀ).
    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| 2.0 * self.pivot(i).ln()).sum()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize without reassociation flags
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let d = i as f64 - j as f64;
                        (-0.1 * d * d).exp() + if i == j { 0.5 } else { 0.0 }
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn reconstructs_matrix() {
        let a = spd(7);
        let f = CholeskyFactor::factorize(7, |i, j| a[i][j]).unwrap();
        for i in 0..7 {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| f.row(i)[k] * f.row(j)[k]).sum();
                assert!((s - a[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn push_row_equals_batch_factorization() {
        let a = spd(6);
        let full = CholeskyFactor::factorize(6, |i, j| a[i][j]).unwrap();
        let mut f = CholeskyFactor::factorize(5, |i, j| a[i][j]).unwrap();
        let mut c: Vec<f64> = (0..5).map(|j| a[5][j]).collect();
        f.forward_solve_in_place(&mut c);
        let d2 = a[5][5] - dot(&c, &c);
        f.push_row(&c, d2, 0.0).unwrap();
        for (x, y) in f.data.iter().zip(&full.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn solves_round_trip() {
        let a = spd(9);
        let f = CholeskyFactor::factorize(9, |i, j| a[i][j]).unwrap();
        let b: Vec<f64> = (0..9).map(|i| (i as f64).sin()).collect();
        let mut x = b.clone();
        f.forward_solve_in_place(&mut x);
        f.backward_solve_in_place(&mut x);
        for i in 0..9 {
            let ax: f64 = (0..9).map(|j| a[i][j] * x[j]).sum();
            assert!((ax - b[i]).abs() < 1e-10);
        }
        let mut batch = vec![b.clone(), b.iter().map(|v| 2.0 * v).collect()];
        f.forward_solve_batch(&mut batch);
        let mut single = b.clone();
        f.forward_solve_in_place(&mut single);
        for i in 0..9 {
            assert_eq!(batch[0][i], single[i]);
            assert!((batch[1][i] - 2.0 * single[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_needs_jitter() {
        // rank-1: two identical points, no noise
        assert!(CholeskyFactor::factorize(2, |_, _| 1.0).is_err());
        let f = CholeskyFactor::factorize_with_jitter(2, |_, _| 1.0, 1e-10).unwrap();
        assert!(f.jitter_added() > 0.0);
    }

    #[test]
    fn hopeless_matrix_is_numerical_error() {
        let err = CholeskyFactor::factorize_with_jitter(2, |i, j| if i == j { -1.0 } else { 0.0 }, 1e-10)
            .unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }));
    }
}
