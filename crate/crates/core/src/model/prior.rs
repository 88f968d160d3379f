//! Class-conditional prior means for w, anchored at per-class means of z.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-class means of latent samples for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorMeans {
    /// `[n_classes, d]`.
    pub means: Tensor,
    pub counts: Vec<usize>,
}

/// Exponential running average of per-class means across batches. Classes
/// that have never been observed report the average over observed classes.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningMeans {
    /// `[n_classes, d]`.
    pub means: Tensor,
    pub seen: Vec<bool>,
    pub momentum: f32,
}

pub const DEFAULT_MOMENTUM: f32 = 0.9;

impl RunningMeans {
    pub fn new(n_classes: usize, d: usize) -> Self {
        Self {
            means: Tensor::zeros(&[n_classes, d]),
            seen: vec![false; n_classes],
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.seen.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// Folds in a batch estimate. Classes absent from the batch are left alone;
    /// a class seen for the first time takes the batch value directly.
    pub fn update(&mut self, batch: &PriorMeans) {
        let d = self.dim();
        let m = self.momentum;
        for k in 0..self.n_classes() {
            if batch.counts[k] == 0 {
                continue;
            }
            let src = batch.means.row(k).to_vec();
            let dst = &mut self.means.data_mut()[k * d..(k + 1) * d];
            if self.seen[k] {
                for (a, b) in dst.iter_mut().zip(&src) {
                    *a = m * *a + (1.0 - m) * b;
                }
            } else {
                dst.copy_from_slice(&src);
            }
            self.seen[k] = true;
        }
    }

    /// Current per-class means, with unseen classes filled by the mean of the
    /// seen ones (zero if none has been seen).
    pub fn resolved(&self) -> Tensor {
        let d = self.dim();
        let n_seen = self.seen.iter().filter(|&&s| s).count();
        let mut fill = vec![0.0f32; d];
        if n_seen > 0 {
            for k in (0..self.n_classes()).filter(|&k| self.seen[k]) {
                for (f, v) in fill.iter_mut().zip(self.means.row(k)) {
                    *f += v / n_seen as f32;
                }
            }
        }
        let mut out = self.means.clone();
        for k in (0..self.n_classes()).filter(|&k| !self.seen[k]) {
            out.data_mut()[k * d..(k + 1) * d].copy_from_slice(&fill);
        }
        out
    }
}

/// `μ̂_k = mean of z_i over rows with y_i = k`.
///
/// A class with no rows takes its value from `fallback` when that class has
/// been seen before, and otherwise the mean of all rows in the batch.
pub fn estimate_class_means(
    z: &Tensor,
    y: &[usize],
    n_classes: usize,
    fallback: Option<&RunningMeans>,
) -> Result<PriorMeans> {
    if z.rank() != 2 || z.rows() != y.len() {
        return Err(Error::Shape {
            op: "estimate_class_means",
            lhs: z.shape().to_vec(),
            rhs: vec![y.len()],
        });
    }
    if y.is_empty() {
        return Err(Error::Input("cannot estimate class means from an empty batch".into()));
    }
    let d = z.cols();
    let mut sums = vec![0.0f64; n_classes * d];
    let mut counts = vec![0usize; n_classes];
    let mut global = vec![0.0f64; d];
    for (i, &k) in y.iter().enumerate() {
        if k >= n_classes {
            return Err(Error::Input(format!("label {k} is out of range for {n_classes} classes")));
        }
        counts[k] += 1;
        for (j, &v) in z.row(i).iter().enumerate() {
            sums[k * d + j] += v as f64;
            global[j] += v as f64;
        }
    }
    let mut means = vec![0.0f32; n_classes * d];
    for k in 0..n_classes {
        let row = &mut means[k * d..(k + 1) * d];
        if counts[k] > 0 {
            for j in 0..d {
                row[j] = (sums[k * d + j] / counts[k] as f64) as f32;
            }
        } else if let Some(fb) = fallback.filter(|fb| fb.seen.get(k).copied().unwrap_or(false)) {
            row.copy_from_slice(fb.means.row(k));
        } else {
            for j in 0..d {
                row[j] = (global[j] / y.len() as f64) as f32;
            }
        }
    }
    Ok(PriorMeans {
        means: Tensor::matrix(n_classes, d, means)?,
        counts,
    })
}
