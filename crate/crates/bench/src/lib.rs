//! Benchmark fixtures shared by the bench targets.

use dual_latent::datasets::Dataset;
use dual_latent::experiment::{build_dataset, model_spec};
use dual_latent::config::ExperimentConfig;
use dual_latent::model::ModelSpec;

/// Preset data shrunk to `n` rows (or sources) with the preset's model spec.
pub fn fixture(preset: &str, n: usize) -> (ExperimentConfig, Dataset, ModelSpec) {
    let key = if preset.starts_with("colored") { "dataset.n_sources" } else { "dataset.n" };
    let cfg = ExperimentConfig::preset(preset)
        .and_then(|c| c.with_overrides(&[format!("{key}={n}")]))
        .expect("preset with size override");
    let data = build_dataset(&cfg.dataset, 0).expect("dataset");
    let spec = model_spec(&cfg, &data);
    (cfg, data, spec)
}
