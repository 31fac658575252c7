//! Dense row-major `f64` matrices, row-wise softmax/argmax and seeded randomness.
//!
//! Every random draw in the crate goes through [`SeededRng`]: ChaCha8 keyed by a
//! 64-bit seed (expanded with `SeedableRng::seed_from_u64`) with the ChaCha stream
//! id selecting an independent sub-stream. The generator is portable, so a seed
//! reproduces the same stream on every platform.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    /// Gathers the given rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape("Matrix::vstack", self.cols, other.cols));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::shape("matmul", self.cols, rhs.rows));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs`.
    pub fn t_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::shape("t_matmul", self.rows, rhs.rows));
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let b_row = rhs.row(r);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · rhsᵀ`.
    pub fn matmul_t(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(Error::shape("matmul_t", self.cols, rhs.cols));
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..rhs.rows {
                let b_row = rhs.row(j);
                out.data[i * rhs.rows + j] = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// Column means; an empty matrix yields zeros.
    pub fn column_means(&self) -> Vec<f64> {
        let mut out = self.column_sums();
        if self.rows > 0 {
            let n = self.rows as f64;
            out.iter_mut().for_each(|o| *o /= n);
        }
        out
    }
}

/// Stable softmax of a single logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log Σ exp(z_k)` via max subtraction.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Result<Matrix> {
    if !logits.is_finite() {
        return Err(Error::NonFiniteLogits);
    }
    let mut out = Matrix::zeros(logits.rows, logits.cols);
    for r in 0..logits.rows {
        out.row_mut(r).copy_from_slice(&softmax(logits.row(r)));
    }
    Ok(out)
}

/// Index of the largest entry; ties go to the smallest index. `None` for an empty slice.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

/// Row-wise [`argmax`].
pub fn argmax_rows(m: &Matrix) -> Result<Vec<usize>> {
    if m.cols == 0 {
        return Err(Error::InvalidArgument("argmax of an empty row".into()));
    }
    Ok(m.iter_rows().map(|r| argmax(r).unwrap_or(0)).collect())
}

/// Sub-stream ids. Each consumer of randomness owns one so that adding draws to
/// one stage never perturbs another.
pub mod stream {
    pub const CENTROIDS: u64 = 1;
    pub const SAMPLES: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const INIT: u64 = 4;
    pub const AUGMENT: u64 = 5;
    pub const LOADER: u64 = 6;
    pub const TEST_SAMPLES: u64 = 7;
    pub const LABELED_POOL: u64 = 8;
    pub const SOURCE_SAMPLES: u64 = 9;
    pub const TEACHER: u64 = 10;
    pub const UNLABELED_LOADER: u64 = 11;
    pub const UNLABELED_AUGMENT: u64 = 12;
}

/// ChaCha8 generator bound to a `(seed, stream)` pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Draws `mean + scale · N(0, I)`. A zero scale returns `mean` exactly.
pub fn gaussian_sample(rng: &mut SeededRng, mean: &[f64], scale: f64) -> Result<Vec<f64>> {
    if !(scale >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gaussian scale must be >= 0, got {scale}"
        )));
    }
    if scale == 0.0 {
        return Ok(mean.to_vec());
    }
    Ok(mean.iter().map(|&m| m + scale * rng.standard_normal()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};

    #[test]
    fn softmax_uniform_for_equal_logits() {
        let p = softmax_rows(&Matrix::zeros(1, 3)).unwrap();
        for &v in p.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_shift_invariant() {
        let a = softmax(&[1.0, 2.0, 3.0]);
        let b = softmax(&[101.0, 102.0, 103.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_two_entries() {
        // e^1/(e^1+e^2) = 1/(1+e)
        let expected0 = 1.0 / (1.0 + std::f64::consts::E);
        let p = softmax(&[1.0, 2.0]);
        assert!((p[0] - expected0).abs() < 1e-15);
        assert!((p[0] - 0.268941).abs() < 1e-6);
        assert!((p[1] - 0.731059).abs() < 1e-6);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let m = Matrix::from_vec(1, 2, vec![f64::NAN, 0.0]).unwrap();
        let err = softmax_rows(&m).unwrap_err();
        assert_eq!(err.to_string(), "non-finite logits");
        let m = Matrix::from_vec(1, 2, vec![f64::INFINITY, 0.0]).unwrap();
        assert!(softmax_rows(&m).is_err());
    }

    #[test]
    fn argmax_tie_breaks_to_smallest_index() {
        let m = Matrix::from_rows(&[[0.1, 0.9], [0.5, 0.5]]).unwrap();
        assert_eq!(argmax_rows(&m).unwrap(), vec![1, 0]);
        let m = Matrix::from_rows(&[[3.0, 1.0, 3.0]]).unwrap();
        assert_eq!(argmax_rows(&m).unwrap(), vec![0]);
        assert!(argmax_rows(&Matrix::zeros(2, 0)).is_err());
    }

    #[test]
    fn gaussian_zero_scale_is_mean() {
        let mut rng = SeededRng::new(0, 0);
        assert_eq!(gaussian_sample(&mut rng, &[1.0, 2.0], 0.0).unwrap(), vec![1.0, 2.0]);
        assert!(gaussian_sample(&mut rng, &[1.0], -1.0).is_err());
    }

    #[test]
    fn gaussian_is_deterministic() {
        let a = gaussian_sample(&mut SeededRng::new(42, 0), &[0.0; 5], 1.0).unwrap();
        let b = gaussian_sample(&mut SeededRng::new(42, 0), &[0.0; 5], 1.0).unwrap();
        assert_eq!(a, b);
        let c = gaussian_sample(&mut SeededRng::new(42, 1), &[0.0; 5], 1.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_sample_mean_converges() {
        let mut rng = SeededRng::new(7, 0);
        let n = 100_000;
        let sum: f64 = (0..n).map(|_| gaussian_sample(&mut rng, &[0.0], 1.0).unwrap()[0]).sum();
        assert!((sum / n as f64).abs() < 0.02);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.as_slice(), &[4.0, 5.0, 10.0, 11.0]);
        let bt = Matrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]).unwrap();
        assert_eq!(a.matmul_t(&bt).unwrap(), ab);
        let at = Matrix::from_rows(&[[1.0, 4.0], [2.0, 5.0], [3.0, 6.0]]).unwrap();
        assert_eq!(at.t_matmul(&b).unwrap(), ab);
        assert!(a.matmul(&a).is_err());
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(v in prop::collection::vec(-700.0f64..700.0, 1..12)) {
            let m = Matrix::from_vec(1, v.len(), v.clone()).unwrap();
            let p = softmax_rows(&m).unwrap();
            let s: f64 = p.as_slice().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.as_slice().iter().all(|&x| (0.0..=1.0).contains(&x)));
            // exp underflows only when the spread exceeds ~745
            let spread = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - v.iter().cloned().fold(f64::INFINITY, f64::min);
            if spread < 700.0 {
                prop_assert!(p.as_slice().iter().all(|&x| x > 0.0));
            }
        }

        #[test]
        fn argmax_preserved_by_softmax(v in prop::collection::vec(-50.0f64..50.0, 1..12)) {
            let m = Matrix::from_vec(1, v.len(), v).unwrap();
            let p = softmax_rows(&m).unwrap();
            prop_assert_eq!(argmax_rows(&p).unwrap(), argmax_rows(&m).unwrap());
        }

        #[test]
        fn rng_streams_reproducible(seed in any::<u64>(), stream in 0u64..16) {
            let mut a = SeededRng::new(seed, stream);
            let mut b = SeededRng::new(seed, stream);
            for _ in 0..8 {
                prop_assert_eq!(RngCore::next_u64(&mut a), RngCore::next_u64(&mut b));
            }
        }
    }
}
