use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use dual_latent::config::ExperimentConfig;
use dual_latent::experiment::{build_dataset, run_eval, run_train};
use dual_latent::{bundle, seeds, Error};
use dual_latent_cli::repro::{plan, run_plan, summarize, write_summary, Table};
use dual_latent_cli::{default_run_dir, exit_code, out_root, resolve_config, split_overrides, OUT_ENV};

/// Dual-latent VAE experiments. Any `--a.b value` flag overrides the config
/// field at that dotted path.
#[derive(Parser, Debug)]
#[command(name = "dual-latent", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shipped preset, e.g. parametric, swiss_roll_0.3, colored_digits_0.1.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ReproArgs {
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Output root; defaults to $DUAL_LATENT_OUT, then ./runs.
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Runs trained concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model and write its run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory; defaults to <root>/<name>/<model>/seed-<seed>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a finished run on its regenerated test split.
    Eval {
        run_dir: PathBuf,
        /// Comma-separated metric switches to force on: nll_iw, kl_analytic,
        /// delta_bayes, mi, mi_sampled, marginal_rmse.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
    },
    /// Write a dataset bundle and print its checksum.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Bundle stem; `.json` and `.bin` are appended.
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump embeddings, posterior curves and reconstructions as CSV.
    Export { run_dir: PathBuf },
    /// Parametric model: dual model and baselines over seeds.
    ReproTable1(ReproArgs),
    /// Swiss roll at label-flip rate 0.3: dual model and baselines over seeds.
    ReproTable2(ReproArgs),
    /// Colored digits at flip rates 0.1 and 0.3: dual model and conditional VAE.
    ReproCmnist(ReproArgs),
}

fn metric_overrides(names: &[String]) -> anyhow::Result<Vec<String>> {
    names
        .iter()
        .map(|m| match m.as_str() {
            "nll_iw" => Ok("metrics.nll_importance=64".to_string()),
            "kl_analytic" | "delta_bayes" | "mi" | "mi_sampled" | "marginal_rmse" => Ok(format!("metrics.{m}=true")),
            other => Err(Error::Config(format!("unknown metric `{other}`")).into()),
        })
        .collect()
}

fn repro(table: Table, args: ReproArgs, overrides: &[String]) -> anyhow::Result<()> {
    let root = out_root(args.out.as_deref()).join(table.dir_name());
    let configs = plan(table, args.seeds, overrides)?;
    let reports = run_plan(&configs, &root, args.jobs)?;
    let rows = summarize(&reports);
    let (csv, md) = write_summary(&rows, &root)?;
    print!("{}", std::fs::read_to_string(&md)?);
    eprintln!("wrote {} and {}", csv.display(), md.display());
    Ok(())
}

fn run(cli: Cli, overrides: Vec<String>) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { cfg, out } => {
            let c = resolve_config(cfg.config.as_deref(), cfg.preset.as_deref(), cfg.seed, &overrides)?;
            let dir = out
                .or_else(|| c.output_dir.clone())
                .unwrap_or_else(|| default_run_dir(&out_root(None), &c));
            let summary = run_train(&c, &dir)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Eval { run_dir, metrics } => {
            let mut o = metric_overrides(&metrics)?;
            o.extend(overrides);
            let report = run_eval(&run_dir, &o)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::GenData { cfg, out } => {
            let c: ExperimentConfig = resolve_config(cfg.config.as_deref(), cfg.preset.as_deref(), cfg.seed, &overrides)?;
            let data = build_dataset(&c.dataset, seeds::stream_seed(c.seed, seeds::Stream::Data))?;
            let meta = serde_json::json!({ "dataset": c.dataset, "seed": c.seed });
            let manifest = data.save(&out, meta)?;
            println!("{}  {}", manifest.blob_sha256, bundle::blob_path(&out).display());
        }
        Command::Export { run_dir } => {
            for p in dual_latent_cli::export::export_plotdata(&run_dir)? {
                println!("{}", p.display());
            }
        }
        Command::ReproTable1(a) => repro(Table::Parametric, a, &overrides)?,
        Command::ReproTable2(a) => repro(Table::SwissRoll, a, &overrides)?,
        Command::ReproCmnist(a) => repro(Table::ColoredDigits, a, &overrides)?,
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { dual_latent_cli::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli, overrides).context("dual-latent failed") {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}
