//! Rotary positional embedding over consecutive dimension pairs.

use crate::error::{config, contract, Result};
use crate::tensor::Matrix;

/// Rotates every `(2i, 2i+1)` pair of each head by `pos * theta^(-2i/head_dim)`.
#[derive(Debug, Clone)]
pub struct Rope {
    head_dim: usize,
    inv_freq: Vec<f64>,
}

impl Rope {
    pub fn new(head_dim: usize, theta: f64) -> Result<Self> {
        if !head_dim.is_multiple_of(2) {
            return Err(config(format!(
                "rotary embedding needs an even head_dim, got {head_dim}"
            )));
        }
        let inv_freq = (0..head_dim / 2)
            .map(|i| theta.powf(-((2 * i) as f64) / head_dim as f64))
            .collect();
        Ok(Self { head_dim, inv_freq })
    }

    /// Rotates one row holding `row.len() / head_dim` heads in place.
    pub fn rotate_row(&self, row: &mut [f32], position: i64) {
        let (sin, cos) = self.sin_cos(position);
        for head in row.chunks_exact_mut(self.head_dim) {
            for (i, pair) in head.chunks_exact_mut(2).enumerate() {
                let (a, b) = (pair[0], pair[1]);
                pair[0] = a * cos[i] - b * sin[i];
                pair[1] = a * sin[i] + b * cos[i];
            }
        }
    }

    fn sin_cos(&self, position: i64) -> (Vec<f32>, Vec<f32>) {
        self.inv_freq
            .iter()
            .map(|f| {
                let angle = position as f64 * f;
                (angle.sin() as f32, angle.cos() as f32)
            })
            .unzip()
    }
}

/// Applies the rotary embedding to every row of `x` (each row holds whole
/// heads of `head_dim` values) at the matching entry of `positions`.
pub fn apply_rope(x: &Matrix, positions: &[i64], head_dim: usize, theta: f64) -> Result<Matrix> {
    if positions.len() != x.rows() {
        return Err(contract(format!(
            "{} positions for {} rows",
            positions.len(),
            x.rows()
        )));
    }
    if head_dim == 0 || !x.cols().is_multiple_of(head_dim) {
        return Err(contract(format!(
            "row width {} is not a multiple of head_dim {head_dim}",
            x.cols()
        )));
    }
    let rope = Rope::new(head_dim, theta)?;
    let mut out = x.clone();
    for (i, &pos) in positions.iter().enumerate() {
        rope.rotate_row(out.row_mut(i), pos);
    }
    Ok(out)
}
