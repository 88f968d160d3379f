//! Multi-seed table runs and their mean ± SD summaries.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Context;
use dual_latent::config::ExperimentConfig;
use dual_latent::experiment::{run_eval, run_train};
use dual_latent::metrics::EvalReport;
use dual_latent::model::ModelKind;

use crate::default_run_dir;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Table {
    Parametric,
    SwissRoll,
    ColoredDigits,
}

impl Table {
    pub fn dir_name(self) -> &'static str {
        match self {
            Table::Parametric => "table1",
            Table::SwissRoll => "table2",
            Table::ColoredDigits => "cmnist",
        }
    }

    fn bases(self) -> anyhow::Result<Vec<ExperimentConfig>> {
        Ok(match self {
            Table::Parametric => vec![ExperimentConfig::preset("parametric")?],
            Table::SwissRoll => vec![ExperimentConfig::preset("swiss_roll_0.3")?],
            Table::ColoredDigits => vec![
                ExperimentConfig::preset("colored_digits_0.1")?,
                ExperimentConfig::preset("colored_digits_0.3")?,
            ],
        })
    }

    fn kinds(self) -> &'static [ModelKind] {
        match self {
            Table::ColoredDigits => &[ModelKind::Dual, ModelKind::ConditionalVae],
            _ => &[ModelKind::Dual, ModelKind::PlainVae, ModelKind::ConditionalVae],
        }
    }
}

/// Every (experiment, model, seed) config of a table. Overrides apply
/// before the baselines are derived, so baselines keep their plain
/// objective but share data and training settings.
pub fn plan(table: Table, n_seeds: u64, overrides: &[String]) -> anyhow::Result<Vec<ExperimentConfig>> {
    let mut out = vec![];
    for base in table.bases()? {
        let base = base.with_overrides(overrides)?;
        for &kind in table.kinds() {
            for seed in 0..n_seeds {
                let mut c = if kind == ModelKind::Dual {
                    base.clone()
                } else {
                    base.as_baseline(kind)
                };
                c.seed = seed;
                out.push(c);
            }
        }
    }
    Ok(out)
}

/// Trains and evaluates each config under `root`, on up to `jobs` threads.
/// Reports come back in plan order.
pub fn run_plan(configs: &[ExperimentConfig], root: &Path, jobs: usize) -> anyhow::Result<Vec<EvalReport>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<anyhow::Result<EvalReport>>>> = Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, configs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cfg) = configs.get(i) else { break };
                let dir = default_run_dir(root, cfg);
                log::info!("run {}/{}: {}", i + 1, configs.len(), dir.display());
                let r = run_train(cfg, &dir)
                    .and_then(|_| run_eval(&dir, &[]))
                    .with_context(|| format!("run in {}", dir.display()));
                results.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("threads joined")
        .into_iter()
        .map(|r| r.expect("every index visited"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub model_kind: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub sd: f64,
    pub n: usize,
}

type Extractor = fn(&EvalReport) -> Option<f64>;

pub const SUMMARY_METRICS: &[(&str, Extractor)] = &[
    ("nll", |r| r.nll.map(|e| e.value)),
    ("nll_iw", |r| r.nll_iw.map(|e| e.value)),
    ("kl_z_x100", |r| r.kl_z_x100),
    ("kl_w_x100", |r| r.kl_w_x100),
    ("delta_bayes", |r| r.delta_bayes.map(|d| d.delta)),
    ("delta_bayes_latent", |r| r.delta_bayes_latent.map(|d| d.delta)),
    ("mi_zw", |r| r.mi_zw.map(|m| m.clamped)),
    ("marginal_rmse", |r| r.marginal_rmse),
    ("marginal_proxy_rmse", |r| r.marginal_proxy_rmse),
    ("class_average_rmse", |r| r.class_average_rmse),
];

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean ± SD of every metric per (experiment, model), in first-seen order.
pub fn summarize(reports: &[EvalReport]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String)> = vec![];
    let mut groups: BTreeMap<(String, String), Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        let key = (r.experiment.clone(), r.model_kind.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    let mut rows = vec![];
    for key in order {
        let group = &groups[&key];
        for (metric, f) in SUMMARY_METRICS {
            let vals: Vec<f64> = group.iter().filter_map(|r| f(r)).collect();
            if vals.is_empty() {
                continue;
            }
            let (mean, sd) = mean_sd(&vals);
            rows.push(SummaryRow {
                experiment: key.0.clone(),
                model_kind: key.1.clone(),
                metric: metric.to_string(),
                mean,
                sd,
                n: vals.len(),
            });
        }
    }
    rows
}

/// Markdown table with one row per (experiment, model) and one column per
/// metric that any row reports.
pub fn markdown(rows: &[SummaryRow]) -> String {
    let metrics: Vec<&str> = SUMMARY_METRICS
        .iter()
        .map(|(m, _)| *m)
        .filter(|m| rows.iter().any(|r| r.metric == *m))
        .collect();
    let mut keys: Vec<(&str, &str)> = vec![];
    for r in rows {
        let k = (r.experiment.as_str(), r.model_kind.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut s = format!("| experiment | model | {} |\n", metrics.join(" | "));
    s += &format!("|---|---|{}\n", "---|".repeat(metrics.len()));
    for (e, k) in keys {
        let cells: Vec<String> = metrics
            .iter()
            .map(|m| {
                rows.iter()
                    .find(|r| r.experiment == e && r.model_kind == k && r.metric == *m)
                    .map(|r| format!("{:.3} ± {:.3}", r.mean, r.sd))
                    .unwrap_or_else(|| "n/a".into())
            })
            .collect();
        s += &format!("| {e} | {k} | {} |\n", cells.join(" | "));
    }
    s
}

/// Writes `summary.csv` and `summary.md` into `dir`.
pub fn write_summary(rows: &[SummaryRow], dir: &Path) -> anyhow::Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv_path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let md_path = dir.join("summary.md");
    std::fs::write(&md_path, markdown(rows)).with_context(|| format!("writing {}", md_path.display()))?;
    Ok((csv_path, md_path))
}
