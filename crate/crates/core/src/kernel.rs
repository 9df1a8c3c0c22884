//! Covariance kernels, Gram matrices and cross-covariance vectors.
//!
//! Three families are supported:
//!
//! | family     | k(s, s')                                                  |
//! |------------|-----------------------------------------------------------|
//! | `Rbf`      | v · exp(−r² / 2ℓ²)                                        |
//! | `Matern52` | v · (1 + √5 r/ℓ + 5r²/3ℓ²) · exp(−√5 r/ℓ)                 |
//! | `Linear`   | v · ⟨s, s'⟩                                               |
//!
//! with `r = ‖s − s'‖₂`, `ℓ` the lengthscale and `v` the signal variance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal jitter, relative to the signal variance, used when a factorization
/// of `K + σ²I` hits a non-positive pivot.
pub const JITTER: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Rbf,
    #[serde(alias = "matern2_5", alias = "matern")]
    Matern52,
    Linear,
}

impl KernelFamily {
    /// Smoothness ν of the Matérn family; `None` for the others.
    pub fn nu(self) -> Option<f64> {
        match self {
            KernelFamily::Matern52 => Some(2.5),
            _ => None,
        }
    }

    pub fn is_stationary(self) -> bool {
        !matches!(self, KernelFamily::Linear)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscale: f64,
    pub signal_variance: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lengthscale: f64, signal_variance: f64) -> Result<Self> {
        let spec = KernelSpec {
            family,
            lengthscale,
            signal_variance,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rbf(lengthscale: f64, signal_variance: f64) -> Result<Self> {
        Self::new(KernelFamily::Rbf, lengthscale, signal_variance)
    }

    pub fn matern52(lengthscale: f64, signal_variance: f64) -> Result<Self> {
        Self::new(KernelFamily::Matern52, lengthscale, signal_variance)
    }

    pub fn linear(signal_variance: f64) -> Result<Self> {
        Self::new(KernelFamily::Linear, 1.0, signal_variance)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::input(format!(
                "kernel lengthscale must be positive and finite, got {}",
                self.lengthscale
            )));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::input(format!(
                "kernel signal_variance must be positive and finite, got {}",
                self.signal_variance
            )));
        }
        Ok(())
    }

    /// k(s, s2), checking dimensions.
    pub fn eval(&self, s: &[f64], s2: &[f64]) -> Result<f64> {
        check_dims(s.len(), s2.len())?;
        Ok(self.eval_unchecked(s, s2))
    }

    #[inline]
    pub fn eval_unchecked(&self, s: &[f64], s2: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Linear => {
                let dot: f64 = s.iter().zip(s2).map(|(a, b)| a * b).sum();
                self.signal_variance * dot
            }
            _ => self.of_sq_distance(sq_distance(s, s2)),
        }
    }

    /// Stationary profile as a function of the squared distance.
    #[inline]
    fn of_sq_distance(&self, d2: f64) -> f64 {
        let l = self.lengthscale;
        match self.family {
            KernelFamily::Rbf => self.signal_variance * (-0.5 * d2 / (l * l)).exp(),
            KernelFamily::Matern52 => {
                let r = d2.sqrt();
                let z = 5f64.sqrt() * r / l;
                self.signal_variance * (1.0 + z + z * z / 3.0) * (-z).exp()
            }
            KernelFamily::Linear => unreachable!("linear kernel is not stationary"),
        }
    }

    /// Prior variance k(s, s).
    #[inline]
    pub fn diag(&self, s: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Linear => self.signal_variance * s.iter().map(|x| x * x).sum::<f64>(),
            _ => self.signal_variance,
        }
    }

    /// Gram matrix `K[i][j] = k(points[i], points[j])`.
    pub fn gram<P: AsRef<[f64]>>(&self, points: &[P]) -> Result<SymMatrix> {
        uniform_dim(points)?;
        let n = points.len();
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            let pi = points[i].as_ref();
            for j in 0..=i {
                let v = if i == j {
                    self.diag(pi)
                } else {
                    self.eval_unchecked(pi, points[j].as_ref())
                };
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        Ok(m)
    }

    /// Cross-covariance vector `k_t(test)` with i-th entry `k(test, points[i])`.
    pub fn cross<P: AsRef<[f64]>>(&self, points: &[P], test: &[f64]) -> Result<Vec<f64>> {
        points
            .iter()
            .map(|p| self.eval(test, p.as_ref()))
            .collect()
    }

    /// Cross-covariance against points stored contiguously with stride `dim`.
    pub(crate) fn cross_flat(&self, flat: &[f64], dim: usize, test: &[f64], out: &mut Vec<f64>) {
        out.clear();
        if dim == 0 {
            return;
        }
        out.extend(flat.chunks_exact(dim).map(|p| self.eval_unchecked(test, p)));
    }
}

/// Dense symmetric matrix in row-major storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += v;
        }
    }
}

#[inline]
pub(crate) fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::input(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

fn uniform_dim<P: AsRef<[f64]>>(points: &[P]) -> Result<usize> {
    let first = points
        .first()
        .ok_or_else(|| Error::input("gram matrix of an empty point list"))?
        .as_ref()
        .len();
    for p in points {
        check_dims(first, p.as_ref().len())?;
    }
    Ok(first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn specs() -> Vec<KernelSpec> {
        vec![
            KernelSpec::rbf(0.7, 1.3).unwrap(),
            KernelSpec::matern52(0.4, 0.9).unwrap(),
            KernelSpec::linear(1.1).unwrap(),
        ]
    }

    #[test]
    fn rbf_identity_and_unit_distance() {
        let k = KernelSpec::rbf(1.0, 1.0).unwrap();
        assert_eq!(k.eval(&[0.3, -0.2], &[0.3, -0.2]).unwrap(), 1.0);
        let v = k.eval(&[0.0, 0.0], &[0.6, 0.8]).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.606531).abs() < 1e-6);
    }

    #[test]
    fn matern_at_zero_distance_is_signal_variance() {
        for l in [0.01, 0.5, 3.0] {
            let k = KernelSpec::matern52(l, 2.5).unwrap();
            assert_eq!(k.eval(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 2.5);
        }
    }

    #[test]
    fn matern_closed_form() {
        let k = KernelSpec::matern52(2.0, 1.0).unwrap();
        let r: f64 = 1.5;
        let z = 5f64.sqrt() * r / 2.0;
        let expected = (1.0 + z + 5.0 * r * r / (3.0 * 4.0)) * (-z).exp();
        assert!((k.eval(&[0.0], &[r]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn linear_diag_is_scaled_norm() {
        let k = KernelSpec::linear(2.0).unwrap();
        assert_eq!(k.eval(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 10.0);
        assert_eq!(k.diag(&[1.0, 2.0]), 10.0);
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        assert!(KernelSpec::rbf(0.0, 1.0).is_err());
        assert!(KernelSpec::rbf(1.0, -1.0).is_err());
        assert!(KernelSpec::matern52(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        let k = KernelSpec::rbf(1.0, 1.0).unwrap();
        assert!(matches!(k.eval(&[0.0], &[0.0, 1.0]), Err(Error::Input(_))));
        assert!(matches!(
            k.cross(&[vec![0.0, 1.0]], &[0.0]),
            Err(Error::Input(_))
        ));
        assert!(k.gram(&[vec![0.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn gram_edge_cases() {
        let k = KernelSpec::rbf(1.0, 1.0).unwrap();
        let g = k.gram(&[vec![0.5, 0.5]]).unwrap();
        assert_eq!(g.as_slice(), &[1.0]);
        let k = KernelSpec::rbf(0.3, 1.7).unwrap();
        let g = k.gram(&[vec![0.2], vec![0.2]]).unwrap();
        assert_eq!(g.as_slice(), &[1.7, 1.7, 1.7, 1.7]);
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(matches!(k.gram(&empty), Err(Error::Input(_))));
    }

    #[test]
    fn gram_and_cross_match_eval_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let points: Vec<Vec<f64>> = (0..5)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        for spec in specs() {
            let g = spec.gram(&points).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    assert_eq!(g.get(i, j), spec.eval(&points[i], &points[j]).unwrap());
                }
            }
            let test = vec![rng.random::<f64>(), rng.random::<f64>()];
            let c = spec.cross(&points, &test).unwrap();
            for i in 0..5 {
                assert_eq!(c[i], spec.eval(&test, &points[i]).unwrap());
            }
        }
    }

    #[test]
    fn cross_entries() {
        let k = KernelSpec::rbf(0.1, 1.0).unwrap();
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, -1.0]];
        assert_eq!(k.cross(&pts, &[0.0, 0.0]).unwrap()[0], 1.0);
        let far = k.cross(&pts, &[50.0, 50.0]).unwrap();
        assert!(far.iter().all(|&v| v < 1e-6));
    }

    #[test]
    fn symmetry_on_many_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for spec in specs() {
            for _ in 0..1000 {
                let a: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let b: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                assert_eq!(spec.eval(&a, &b).unwrap(), spec.eval(&b, &a).unwrap());
            }
        }
    }

    proptest! {
        #[test]
        fn stationary_kernels_translation_invariant(
            a in prop::collection::vec(-3.0f64..3.0, 2),
            b in prop::collection::vec(-3.0f64..3.0, 2),
            shift in prop::collection::vec(-5.0f64..5.0, 2),
        ) {
            for spec in &specs()[..2] {
                let a2: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
                let b2: Vec<f64> = b.iter().zip(&shift).map(|(x, s)| x + s).collect();
                let d = (spec.eval(&a, &b).unwrap() - spec.eval(&a2, &b2).unwrap()).abs();
                prop_assert!(d < 1e-12);
            }
        }

        #[test]
        fn stationary_kernels_decay_monotonically(r1 in 0.0f64..5.0, r2 in 0.0f64..5.0) {
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            for spec in &specs()[..2] {
                let near = spec.eval(&[0.0], &[lo]).unwrap();
                let far = spec.eval(&[0.0], &[hi]).unwrap();
                prop_assert!(far <= near);
            }
        }
    }
}
