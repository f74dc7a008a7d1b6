//! Seeded randomness and numerically stable primitives shared by every
//! other module.
//!
//! All floating-point work in this crate is `f64`: gradient checks need
//! around 1e-6 relative accuracy and the problem sizes are small enough
//! that precision is cheap.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Dense 64-bit float vector. Logit vectors and probability vectors are
/// plain `Vec64`s; the simplex invariant is enforced by the producing
/// functions, not the type.
pub type Vec64 = Vec<f64>;

/// Deterministic, splittable random stream.
///
/// Backed by ChaCha8 keyed from a SHA-256 digest of the seed. Labeled
/// substreams re-key with the label, so `noise`, `init`, and `shuffle`
/// draws never interleave and results do not depend on evaluation order.
/// Two `Rng`s built from the same seed produce bitwise-equal streams;
/// distinct labels give cryptographically independent streams.
#[derive(Debug, Clone)]
pub struct Rng {
    key: [u8; 32],
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"logitlab.rng.v1");
        hasher.update(seed.to_le_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        Rng {
            key,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    /// Derive an independent labeled substream. Splitting does not
    /// advance this stream, so the set of substreams a caller takes is
    /// all that matters, not the order it takes them in.
    pub fn substream(&self, label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(self.key);
        hasher.update(b"/");
        hasher.update(label.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        Rng {
            key,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        rand::Rng::random::<f64>(self)
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is undefined");
        rand::Rng::random_range(self, 0..n)
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        rand::Rng::sample(self, rand_distr::StandardNormal)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        rand::seq::SliceRandom::shuffle(items, self);
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

/// Dense row-major matrix of 64-bit floats with fixed dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat64 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat64 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat64 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows_data: Vec<Vec64>) -> Result<Self> {
        let rows = rows_data.len();
        let cols = rows_data.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows * cols);
        for r in &rows_data {
            if r.len() != cols {
                return Err(Error::dimension("ragged rows in matrix construction"));
            }
            data.extend_from_slice(r);
        }
        Ok(Mat64 { rows, cols, data })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dimension(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Mat64 { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `out = self * x`. Panics on shape mismatch.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec input length");
        assert_eq!(out.len(), self.rows, "matvec output length");
        for i in 0..self.rows {
            out[i] = dot(self.row(i), x);
        }
    }

    /// `out = self^T * x`. Panics on shape mismatch.
    pub fn transpose_matvec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.rows, "matvec^T input length");
        assert_eq!(out.len(), self.cols, "matvec^T output length");
        out.fill(0.0);
        for i in 0..self.rows {
            let xi = x[i];
            let row = self.row(i);
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * xi;
            }
        }
    }
}

/// Dot product with four-way accumulator splitting. Fixed association
/// order keeps results deterministic run to run.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Norm order for the p-norm family used by the clipping transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormOrder {
    #[serde(rename = "1")]
    L1,
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    LInf,
}

impl std::fmt::Display for NormOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NormOrder::L1 => write!(f, "1"),
            NormOrder::L2 => write!(f, "2"),
            NormOrder::LInf => write!(f, "inf"),
        }
    }
}

/// log Σ exp(v_i) with max-subtraction; exact (up to `ln`) for constant
/// vectors and immune to overflow for any finite input.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::dimension("log_sum_exp of empty vector"));
    }
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + sum.ln())
}

/// Softmax with max-subtraction. Output sums to 1 within 1e-12 and is
/// invariant under adding a constant to every entry.
pub fn stable_softmax(z: &[f64]) -> Result<Vec64> {
    if z.is_empty() {
        return Err(Error::dimension("softmax of empty vector"));
    }
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec64 = z.iter().map(|&x| (x - m).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o /= sum;
    }
    Ok(out)
}

/// p-norm for p in {1, 2, inf}. Zero iff `z` is the zero vector.
pub fn pnorm(z: &[f64], p: NormOrder) -> f64 {
    match p {
        NormOrder::L1 => z.iter().map(|x| x.abs()).sum(),
        NormOrder::L2 => dot(z, z).sqrt(),
        NormOrder::LInf => z.iter().map(|x| x.abs()).fold(0.0, f64::max),
    }
}

/// Jacobian of softmax at a simplex point: J_ij = p_i (δ_ij − p_j).
/// Symmetric with zero row sums.
pub fn softmax_jacobian(p: &[f64]) -> Mat64 {
    let k = p.len();
    let mut j = Mat64::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            let delta = if a == b { 1.0 } else { 0.0 };
            j.set(a, b, p[a] * (delta - p[b]));
        }
    }
    j
}
