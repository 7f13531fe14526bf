use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Result};

pub const STD_FLOOR: f32 = 1e-6;

/// Per-dimension mean and standard deviation over all rows of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormStats {
    pub fn identity(width: usize) -> Self {
        NormStats { mean: vec![0.0; width], std: vec![1.0; width] }
    }

    /// Population statistics over `values` viewed as rows of `width`, in f64.
    pub fn compute(values: &[f32], width: usize) -> Result<Self> {
        ensure_shape!(
            width > 0 && !values.is_empty() && values.len().is_multiple_of(width),
            "{} values do not form rows of width {width}",
            values.len()
        );
        let n = (values.len() / width) as f64;
        let mut sum = vec![0.0f64; width];
        for row in values.chunks_exact(width) {
            for (s, &v) in sum.iter_mut().zip(row) {
                *s += v as f64;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut sq = vec![0.0f64; width];
        for row in values.chunks_exact(width) {
            for ((s, &v), m) in sq.iter_mut().zip(row).zip(&mean) {
                let d = v as f64 - m;
                *s += d * d;
            }
        }
        Ok(NormStats {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: sq.iter().map(|s| ((s / n).sqrt() as f32).max(STD_FLOOR)).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Normalizes `values` in place; `offset` selects the first dimension
    /// (0 for full rows or state blocks, `d_s` for action blocks). The slice
    /// is treated as repeated rows of `width - offset` dims when shorter.
    pub fn normalize_block(&self, values: &mut [f32], offset: usize) {
        let w = self.width();
        for (i, v) in values.iter_mut().enumerate() {
            let k = (offset + i) % w;
            *v = (*v - self.mean[k]) / self.std[k];
        }
    }

    pub fn denormalize_block(&self, values: &mut [f32], offset: usize) {
        let w = self.width();
        for (i, v) in values.iter_mut().enumerate() {
            let k = (offset + i) % w;
            *v = *v * self.std[k] + self.mean[k];
        }
    }

    /// Normalizes a whole flat window or batch of windows (rows of `width`).
    pub fn normalize(&self, values: &mut [f32]) {
        self.normalize_block(values, 0);
    }

    pub fn denormalize(&self, values: &mut [f32]) {
        self.denormalize_block(values, 0);
    }

    /// Normalized copy of a state vector (dims `0..s.len()`).
    pub fn normalize_state(&self, s: &[f32]) -> Vec<f32> {
        s.iter().enumerate().map(|(k, &v)| (v - self.mean[k]) / self.std[k]).collect()
    }

    /// Raw copy of a normalized action vector starting at dim `offset`.
    pub fn denormalize_action(&self, a: &[f32], offset: usize) -> Vec<f32> {
        a.iter()
            .enumerate()
            .map(|(k, &v)| v * self.std[offset + k] + self.mean[offset + k])
            .collect()
    }
}
