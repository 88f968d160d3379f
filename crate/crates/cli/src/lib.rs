//! Pieces of the `dual-latent` command line that are worth testing without
//! spawning the binary.

pub mod export;
pub mod repro;

use std::path::{Path, PathBuf};

use dual_latent::config::ExperimentConfig;
use dual_latent::Error;

/// Default output root when neither `--out` nor this variable is set.
pub const OUT_ENV: &str = "DUAL_LATENT_OUT";
pub const DEFAULT_OUT: &str = "runs";

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_INTEGRITY: i32 = 4;

pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => EXIT_CONFIG,
        Some(Error::Divergence(_)) => EXIT_DIVERGENCE,
        Some(Error::Integrity(_) | Error::MissingArtifact(_)) => EXIT_INTEGRITY,
        _ => match err.downcast_ref::<clap::Error>() {
            Some(_) => EXIT_CONFIG,
            None => EXIT_FAILURE,
        },
    }
}

/// Pulls dotted-path flags (`--weights.adv 0`, `--train.lr_main=1e-3`) out
/// of `args`, returning the remaining arguments and the overrides as
/// `key=value` strings.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = vec![];
    let mut it = args.into_iter().peekable();
    while let Some(a) = it.next() {
        let dotted = a
            .strip_prefix("--")
            .filter(|k| k.split('=').next().is_some_and(|key| key.contains('.')));
        match dotted {
            Some(kv) if kv.contains('=') => overrides.push(kv.to_string()),
            Some(k) => match it.next() {
                Some(v) => overrides.push(format!("{k}={v}")),
                None => overrides.push(k.to_string()),
            },
            None => rest.push(a),
        }
    }
    (rest, overrides)
}

/// Resolves the base config from `--config` or `--preset`, then applies
/// `--seed` and the dotted overrides.
pub fn resolve_config(
    config: Option<&Path>,
    preset: Option<&str>,
    seed: Option<u64>,
    overrides: &[String],
) -> anyhow::Result<ExperimentConfig> {
    let base = match (config, preset) {
        (Some(_), Some(_)) => return Err(Error::Config("give either --config or --preset, not both".into()).into()),
        (Some(p), None) => ExperimentConfig::load(p)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => return Err(Error::Config("one of --config or --preset is required".into()).into()),
    };
    let mut all = overrides.to_vec();
    if let Some(s) = seed {
        all.push(format!("seed={s}"));
    }
    Ok(base.with_overrides(&all)?)
}

pub fn out_root(out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// `<root>/<name>/<model kind>/seed-<seed>`.
pub fn default_run_dir(root: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let kind = serde_json::to_value(cfg.model.kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    root.join(&cfg.name).join(kind).join(format!("seed-{}", cfg.seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn dotted_flags_become_overrides() {
        let (rest, o) = split_overrides(s(&["train", "--preset", "parametric", "--weights.adv", "0", "--train.lr_main=1e-2", "--seed", "3"]));
        assert_eq!(rest, s(&["train", "--preset", "parametric", "--seed", "3"]));
        assert_eq!(o, s(&["weights.adv=0", "train.lr_main=1e-2"]));
    }

    #[test]
    fn dangling_override_is_kept_for_the_config_error() {
        let (_, o) = split_overrides(s(&["--weights.adv"]));
        assert_eq!(o, s(&["weights.adv"]));
        let err = resolve_config(None, Some("parametric"), None, &o).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_CONFIG);
    }

    #[test]
    fn seed_flag_wins_over_preset() {
        let c = resolve_config(None, Some("parametric"), Some(9), &[]).unwrap();
        assert_eq!(c.seed, 9);
        assert!(resolve_config(None, None, None, &[]).is_err());
    }

    #[test]
    fn exit_codes_follow_error_kinds() {
        assert_eq!(exit_code(&Error::Config("x".into()).into()), 2);
        assert_eq!(exit_code(&Error::Divergence("x".into()).into()), 3);
        assert_eq!(exit_code(&Error::Integrity("x".into()).into()), 4);
        assert_eq!(exit_code(&Error::MissingArtifact("p".into()).into()), 4);
        assert_eq!(exit_code(&Error::Input("x".into()).into()), 1);
    }

    #[test]
    fn run_dirs_are_keyed_by_name_kind_and_seed() {
        let c = resolve_config(None, Some("swiss_roll_0.1"), Some(4), &s(&["model.kind=plain_vae"])).unwrap();
        assert_eq!(default_run_dir(Path::new("r"), &c), Path::new("r/swiss_roll_0.1/plain_vae/seed-4"));
    }
}
