//! Dense f32 kernels shared by the model, the selection pass and the cache
//! compressors.
//!
//! All reductions accumulate in ascending index order into a single
//! accumulator. Parallel variants split work across independent output rows
//! only, so every kernel is bit-reproducible regardless of thread count.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::par;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(contract(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(contract("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f32) {
        self.data[i * self.cols + j] = value;
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Copies columns `[start, start + width)` into a new matrix.
    pub fn column_block(&self, start: usize, width: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(i)[start..start + width]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn byte_len(&self) -> u64 {
        (self.data.len() * std::mem::size_of::<f32>()) as u64
    }
}

/// A 1-D vector of scores (attention row, pooled selection scores, logits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector(Vec<f32>);

impl ScoreVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(contract("score vector must be non-empty"));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl AsRef<[f32]> for ScoreVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// Sequential dot product, ascending index, one accumulator.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// FLOPs charged for an `m x k` by `k x n` product.
#[inline]
pub fn matmul_flops(m: usize, k: usize, n: usize) -> u64 {
    2 * (m as u64) * (k as u64) * (n as u64)
}

/// `a * b`, charging `2 * rows * inner * cols` to `flops`.
pub fn matmul(a: &Matrix, b: &Matrix, flops: &mut u64) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(contract(format!(
            "matmul shape mismatch: {}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (inner, cols) = (a.cols, b.cols);
    let mut out = Matrix::zeros(a.rows, cols);
    par::for_each_row_mut(&mut out.data, cols, |i, out_row| {
        let a_row = &a.data[i * inner..(i + 1) * inner];
        // out[i][j] accumulates a[i][p] * b[p][j] for p ascending, exactly
        // the sequence `dot` would produce.
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b.data[p * cols..(p + 1) * cols];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    });
    *flops += matmul_flops(a.rows, inner, cols);
    Ok(out)
}

/// In-place softmax of one row with max subtraction.
pub fn softmax_in_place(row: &mut [f32]) {
    if row.is_empty() {
        return;
    }
    let mut max = f32::NEG_INFINITY;
    for &v in row.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    let cols = out.cols;
    par::for_each_row_mut(&mut out.data, cols, |_, row| softmax_in_place(row));
    out
}

/// `x_i * gain_i / sqrt(mean(x^2) + eps)`.
pub fn rms_norm(x: &[f32], gain: &[f32], eps: f32) -> Result<Vec<f32>> {
    if x.len() != gain.len() {
        return Err(contract(format!(
            "rms_norm length mismatch: {} vs {}",
            x.len(),
            gain.len()
        )));
    }
    let mut out = vec![0.0; x.len()];
    rms_norm_into(x, gain, eps, &mut out);
    Ok(out)
}

pub(crate) fn rms_norm_into(x: &[f32], gain: &[f32], eps: f32, out: &mut [f32]) {
    let mut sum_sq = 0.0f32;
    for v in x {
        sum_sq += v * v;
    }
    let denom = (sum_sq / x.len() as f32 + eps).sqrt();
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = v * g / denom;
    }
}

/// Row-wise RMS norm of a matrix.
pub fn rms_norm_rows(m: &Matrix, gain: &[f32], eps: f32) -> Result<Matrix> {
    if m.cols != gain.len() {
        return Err(contract(format!(
            "rms_norm length mismatch: {} vs {}",
            m.cols,
            gain.len()
        )));
    }
    let mut out = Matrix::zeros(m.rows, m.cols);
    let cols = m.cols;
    par::for_each_row_mut(&mut out.data, cols, |i, row| {
        rms_norm_into(&m.data[i * cols..(i + 1) * cols], gain, eps, row)
    });
    Ok(out)
}

/// Smoothing mode applied to 1-D score vectors before top-k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    /// Zero padding, kernel size in the denominator (count-include-pad).
    #[default]
    Average,
    /// Padding never wins the maximum.
    Max,
}

/// Stride-1 pooling with `kernel / 2` padding on both sides.
pub fn pool_1d(v: &[f32], kernel: usize, mode: PoolMode) -> Result<Vec<f32>> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(contract(format!(
            "pooling kernel must be odd and positive, got {kernel}"
        )));
    }
    let half = kernel / 2;
    let n = v.len();
    let out = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n.saturating_sub(1));
            match mode {
                PoolMode::Average => {
                    let mut acc = 0.0f32;
                    for &x in &v[lo..=hi] {
                        acc += x;
                    }
                    acc / kernel as f32
                }
                PoolMode::Max => v[lo..=hi]
                    .iter()
                    .copied()
                    .fold(f32::NEG_INFINITY, f32::max),
            }
        })
        .collect();
    Ok(out)
}

/// Average pooling over a score vector; length is preserved for odd kernels.
pub fn avg_pool_1d(v: &ScoreVector, kernel: usize) -> Result<ScoreVector> {
    pool_1d(v.values(), kernel, PoolMode::Average).map(ScoreVector)
}

/// Indices of the `k` largest values in descending-score order; ties go to
/// the lower index.
pub fn topk_indices(v: &[f32], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > v.len() {
        return Err(contract(format!(
            "top-k requires 1 <= k <= {}, got {k}",
            v.len()
        )));
    }
    let order = |a: &usize, b: &usize| v[*b].total_cmp(&v[*a]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..v.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_unstable_by(order);
    Ok(idx)
}

/// Index of the maximum value, lowest index on ties.
pub fn argmax(v: &[f32]) -> Result<usize> {
    if v.is_empty() {
        return Err(contract("argmax of an empty vector"));
    }
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    Ok(best)
}
