//! Labeled datasets, synthetic generators and batching.

mod colored;
mod glyphs;
pub mod idx;
mod parametric;
mod swiss_roll;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bundle;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use colored::{colored_digits, colorize, colorize_and_flip, downsample, true_marginal};
pub use glyphs::{render_digits, GlyphConfig};
pub use parametric::{gen_parametric, parametric_bayes_accuracy, ParametricSample};
pub use swiss_roll::{gen_swiss_roll, swiss_roll_bayes_accuracy, SwissRollConfig};

pub const DATASET_KIND: &str = "dataset";

/// Feature matrix, class labels and optional per-row side columns (true
/// latents, clean labels, ground-truth images).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[n, d]`.
    pub x: Tensor,
    pub y: Vec<usize>,
    pub n_classes: usize,
    /// Each entry is `[n, k]`.
    pub extras: BTreeMap<String, Tensor>,
}

/// One minibatch: row indices into the parent dataset plus the gathered rows.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    pub indices: Vec<usize>,
    pub x: Tensor,
    pub y: Vec<usize>,
}

impl Dataset {
    pub fn new(x: Tensor, y: Vec<usize>, n_classes: usize) -> Result<Self> {
        if x.rank() != 2 || x.rows() != y.len() {
            return Err(Error::Shape {
                op: "Dataset::new",
                lhs: x.shape().to_vec(),
                rhs: vec![y.len()],
            });
        }
        if let Some(&bad) = y.iter().find(|&&v| v >= n_classes) {
            return Err(Error::Input(format!("label {bad} out of range for {n_classes} classes")));
        }
        Ok(Self {
            x,
            y,
            n_classes,
            extras: BTreeMap::new(),
        })
    }

    pub fn with_extra(mut self, name: &str, column: Tensor) -> Result<Self> {
        if column.rank() != 2 || column.rows() != self.len() {
            return Err(Error::Shape {
                op: "Dataset::with_extra",
                lhs: column.shape().to_vec(),
                rhs: vec![self.len()],
            });
        }
        self.extras.insert(name.to_string(), column);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn extra(&self, name: &str) -> Result<&Tensor> {
        self.extras
            .get(name)
            .ok_or_else(|| Error::Input(format!("dataset has no `{name}` column")))
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            n_classes: self.n_classes,
            extras: self
                .extras
                .iter()
                .map(|(k, v)| (k.clone(), v.select_rows(idx)))
                .collect(),
        }
    }

    /// Random disjoint `(first, rest)` split with `round(frac·n)` rows in
    /// `first`.
    pub fn split(&self, frac: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..=1.0).contains(&frac) {
            return Err(Error::Input(format!("split fraction must be in [0, 1], got {frac}")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = (frac * self.len() as f64).round() as usize;
        Ok((self.subset(&idx[..cut]), self.subset(&idx[cut..])))
    }

    pub fn batch(&self, indices: Vec<usize>) -> LabeledBatch {
        LabeledBatch {
            x: self.x.select_rows(&indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            indices,
        }
    }

    /// One epoch of batches; the last may be short.
    pub fn batches(&self, batch_size: usize, seed: u64, shuffle: bool) -> Result<impl Iterator<Item = LabeledBatch> + '_> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups = batch_indices(self.len(), batch_size, shuffle.then_some(&mut rng))?;
        Ok(groups.into_iter().map(move |g| self.batch(g)))
    }

    pub fn save(&self, stem: &Path, meta: serde_json::Value) -> Result<bundle::Manifest> {
        let y = Tensor::vector(self.y.iter().map(|&v| v as f32).collect());
        let mut tensors: Vec<(&str, &Tensor)> = vec![("x", &self.x), ("y", &y)];
        let extra_names: Vec<String> = self.extras.keys().map(|k| format!("extra.{k}")).collect();
        for (name, t) in extra_names.iter().zip(self.extras.values()) {
            tensors.push((name, t));
        }
        let meta = serde_json::json!({ "n_classes": self.n_classes, "spec": meta });
        bundle::write(stem, DATASET_KIND, meta, &tensors)
    }

    /// Returns the dataset and the `meta` it was saved with.
    pub fn load(stem: &Path) -> Result<(Self, serde_json::Value)> {
        let (manifest, mut tensors) = bundle::read(stem, DATASET_KIND)?;
        let n_classes = manifest.meta["n_classes"]
            .as_u64()
            .ok_or_else(|| Error::Integrity("dataset manifest lacks n_classes".into()))? as usize;
        let x = bundle::take(&mut tensors, "x")?;
        let y = bundle::take(&mut tensors, "y")?
            .data()
            .iter()
            .map(|&v| v as usize)
            .collect();
        let mut ds = Self::new(x, y, n_classes).map_err(|e| Error::Integrity(format!("stored dataset is invalid: {e}")))?;
        for (name, t) in tensors {
            let key = name
                .strip_prefix("extra.")
                .ok_or_else(|| Error::Integrity(format!("unexpected tensor `{name}` in dataset")))?;
            ds = ds.with_extra(key, t)?;
        }
        Ok((ds, manifest.meta["spec"].clone()))
    }
}

/// Partitions `0..n` into consecutive groups of `batch_size`, after an
/// optional shuffle.
pub fn batch_indices<R: Rng>(n: usize, batch_size: usize, shuffle: Option<&mut R>) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Input("batch size must be at least 1".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if let Some(rng) = shuffle {
        idx.shuffle(rng);
    }
    Ok(idx.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// Flips each label of a binary problem independently with probability
/// `rate`.
pub fn flip_labels<R: Rng>(y: &[usize], rate: f64, rng: &mut R) -> Vec<usize> {
    y.iter().map(|&v| if rng.gen_bool(rate) { 1 - v } else { v }).collect()
}

pub(crate) fn check_noise_rate(rate: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&rate) {
        return Err(Error::Config(format!("noise_rate must be in [0, 0.5], got {rate}")));
    }
    Ok(())
}
