//! Raw plot data for a finished run: latent embeddings, posterior curves,
//! reconstruction grids and training curves.

use std::path::{Path, PathBuf};

use anyhow::Context;
use dual_latent::config::DatasetSpec;
use dual_latent::distributions::TruncGaussian1D;
use dual_latent::experiment::{load_run_config, load_run_model, load_splits, EPOCHS_FILE};
use dual_latent::metrics::{encode, full_reconstruction, marginal_reconstruction};
use dual_latent::model::ModelKind;
use dual_latent::{Error, Tensor};

pub const EXPORT_DIR: &str = "export";
/// Features wider than this are left out of the embedding table.
pub const MAX_INLINE_FEATURES: usize = 16;
pub const GRID_IMAGES: usize = 16;

fn writer(path: &Path) -> anyhow::Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn cols(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn row_strings(t: &Tensor, i: usize) -> impl Iterator<Item = String> + '_ {
    t.row(i).iter().map(|v| v.to_string())
}

/// Writes every file this run supports into `<run_dir>/export` and returns
/// their paths.
pub fn export_plotdata(run_dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if !run_dir.is_dir() {
        return Err(Error::MissingArtifact(run_dir.to_path_buf()).into());
    }
    let cfg = load_run_config(run_dir)?;
    let splits = load_splits(&cfg)?;
    let state = load_run_model(run_dir, &cfg, &splits)?;
    let test = &splits.test;
    let out = run_dir.join(EXPORT_DIR);
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = vec![];

    let enc = encode(&state, test)?;
    let path = out.join("embeddings.csv");
    let mut w = writer(&path)?;
    let inline = test.dim() <= MAX_INLINE_FEATURES;
    let mut header = if inline { cols("x", test.dim()) } else { vec![] };
    header.push("y".into());
    header.extend(cols("z", enc.mu_z.cols()));
    if let Some(mw) = &enc.mu_w {
        header.extend(cols("w", mw.cols()));
    }
    w.write_record(&header)?;
    for i in 0..test.len() {
        let mut rec: Vec<String> = if inline { row_strings(&test.x, i).collect() } else { vec![] };
        rec.push(test.y[i].to_string());
        rec.extend(row_strings(&enc.mu_z, i));
        if let Some(mw) = &enc.mu_w {
            rec.extend(row_strings(mw, i));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    written.push(path);

    if matches!(cfg.dataset, DatasetSpec::Parametric { .. }) && state.spec.x_dim == 1 && state.spec.d_latent == 1 {
        written.push(posterior_curves(&state, &out)?);
    }

    if test.extra("marginal").is_ok() {
        let n = test.len().min(GRID_IMAGES);
        let idx: Vec<usize> = (0..n).collect();
        let sub = test.subset(&idx);
        let sub_enc = encode(&state, &sub)?;
        let mut rows: Vec<(&str, Tensor)> = vec![("x", sub.x.clone()), ("marginal", sub.extra("marginal")?.clone())];
        rows.push(("x_tilde", full_reconstruction(&state, &sub, &sub_enc)?));
        if state.spec.kind != ModelKind::ConditionalVae {
            rows.push(("x_hat", marginal_reconstruction(&state, &sub_enc)?));
        }
        let path = out.join("reconstructions.csv");
        let mut w = writer(&path)?;
        let mut header = vec!["index".to_string(), "kind".to_string(), "y".to_string()];
        header.extend(cols("p", sub.dim()));
        w.write_record(&header)?;
        for i in 0..n {
            for (kind, t) in &rows {
                let mut rec = vec![i.to_string(), kind.to_string(), sub.y[i].to_string()];
                rec.extend(row_strings(t, i));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        written.push(path);
    }

    let curves = run_dir.join(EPOCHS_FILE);
    if curves.exists() {
        let dest = out.join("curves.csv");
        std::fs::copy(&curves, &dest).with_context(|| format!("copying {}", curves.display()))?;
        written.push(dest);
    }
    Ok(written)
}

/// Encoder outputs on a grid of x next to the known posteriors: z given x is
/// N(x/2, 1/2); w given (x, y) is that Gaussian truncated to the sign of y.
fn posterior_curves(state: &dual_latent::model::ModelState, out: &Path) -> anyhow::Result<PathBuf> {
    let grid: Vec<f32> = (0..=60).map(|i| -3.0 + 0.1 * i as f32).collect();
    let x = Tensor::matrix(grid.len(), 1, grid.clone())?;
    let (mz, vz) = state.encode_z(&x, None)?;
    let dual = state.enc_w.is_some();
    let path = out.join("posterior_curves.csv");
    let mut w = writer(&path)?;
    let mut header: Vec<String> = ["x", "mu_z", "var_z", "true_mu_z", "true_var_z"].map(String::from).to_vec();
    for y in 0..2 {
        header.extend([format!("mu_w_y{y}"), format!("var_w_y{y}"), format!("true_mu_w_y{y}"), format!("true_var_w_y{y}")]);
    }
    w.write_record(&header)?;
    let ws: Vec<Option<(Tensor, Tensor)>> = (0..2)
        .map(|y| dual.then(|| state.encode_w(&x, &vec![y; grid.len()])).transpose())
        .collect::<dual_latent::Result<_>>()?;
    for (i, &xv) in grid.iter().enumerate() {
        let mut rec = vec![xv.to_string(), mz.data()[i].to_string(), vz.data()[i].to_string()];
        rec.push((xv as f64 / 2.0).to_string());
        rec.push("0.5".into());
        for (y, enc_w) in ws.iter().enumerate() {
            let t = TruncGaussian1D::sign_posterior(xv as f64, y);
            match enc_w {
                Some((m, v)) => rec.extend([m.data()[i].to_string(), v.data()[i].to_string()]),
                None => rec.extend([String::new(), String::new()]),
            }
            rec.extend([t.mean().to_string(), t.variance().to_string()]);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(path)
}
