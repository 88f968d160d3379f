use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_dual-latent");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("DUAL_LATENT_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let o = run(args);
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stderr).into_owned())
}

const SMALL_PARAMETRIC: &[&str] = &["--preset", "parametric", "--dataset.n", "800", "--train.max_epochs", "4"];
const SMALL_SWISS: &[&str] = &[
    "--preset",
    "swiss_roll_0.3",
    "--dataset.n",
    "600",
    "--train.max_epochs",
    "2",
    "--model.d_hidden",
    "16",
    "--metrics.mine.epochs",
    "2",
];

fn train(dir: &Path, base: &[&str], extra: &[&str]) {
    let mut args = vec!["train", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(base);
    args.extend_from_slice(extra);
    ok(&args);
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn same_seed_gives_identical_checkpoints_and_reports() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        train(d, SMALL_PARAMETRIC, &["--seed", "7"]);
        ok(&["eval", d.to_str().unwrap()]);
    }
    for f in ["model.bin", "model.json", "epochs.csv", "train_report.json", "eval.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f} differs");
    }
    // a second eval of the same checkpoint reproduces the first
    let first = read(a.join("eval.json"));
    ok(&["eval", a.to_str().unwrap()]);
    assert_eq!(first, read(a.join("eval.json")));
    let rows = String::from_utf8(read(a.join("eval.csv"))).unwrap();
    assert_eq!(rows.lines().count(), 3);
}

#[test]
fn different_seeds_give_different_checkpoints() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    train(&a, SMALL_PARAMETRIC, &["--seed", "1"]);
    train(&b, SMALL_PARAMETRIC, &["--seed", "2"]);
    assert_ne!(read(a.join("model.bin")), read(b.join("model.bin")));
}

#[test]
fn dotted_flag_disables_the_adversary_but_ce_is_still_logged() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("r");
    train(&d, SMALL_PARAMETRIC, &["--weights.adv", "0"]);
    let cfg: serde_json::Value = serde_json::from_slice(&read(d.join("config.json"))).unwrap();
    assert_eq!(cfg["weights"]["adv"], 0.0);
    let mut r = csv::Reader::from_path(d.join("epochs.csv")).unwrap();
    let ce_col = r.headers().unwrap().iter().position(|h| h == "ce").unwrap();
    for rec in r.records() {
        let ce: f64 = rec.unwrap()[ce_col].parse().unwrap();
        assert!(ce > 0.1, "ce {ce}");
    }
}

#[test]
fn unsupported_metric_is_an_explicit_error() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("s");
    train(&d, SMALL_SWISS, &[]);
    let (c, err) = code(&["eval", d.to_str().unwrap(), "--metrics", "kl_analytic"]);
    assert_eq!(c, 1);
    assert!(err.contains("kl_analytic") && err.contains("not supported"), "{err}");
    let (c, err) = code(&["eval", d.to_str().unwrap(), "--metrics", "bogus"]);
    assert_eq!(c, 2, "{err}");
}

#[test]
fn gen_data_is_reproducible_and_records_its_spec() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let args = |p: &Path| {
        vec![
            "gen-data".to_string(),
            "--preset".into(),
            "parametric".into(),
            "--seed".into(),
            "1".into(),
            "--out".into(),
            p.to_str().unwrap().into(),
        ]
    };
    let sa = ok(&args(&a).iter().map(String::as_str).collect::<Vec<_>>());
    let sb = ok(&args(&b).iter().map(String::as_str).collect::<Vec<_>>());
    let sum = |s: &str| s.split_whitespace().next().unwrap().to_string();
    assert_eq!(sum(&sa), sum(&sb));
    assert_eq!(read(a.with_extension("bin")), read(b.with_extension("bin")));
    let m: serde_json::Value = serde_json::from_slice(&read(a.with_extension("json"))).unwrap();
    assert_eq!(m["meta"]["spec"]["dataset"], serde_json::json!({"kind": "parametric", "n": 20000}));
    assert_eq!(m["blob_sha256"], sum(&sa));
}

#[test]
fn invalid_configs_exit_with_code_2() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("d");
    let (c, err) = code(&["gen-data", "--preset", "swiss_roll", "--dataset.noise_rate", "0.6", "--out", out.to_str().unwrap()]);
    assert_eq!(c, 2);
    assert!(err.contains("noise_rate"), "{err}");

    let cfg = t.path().join("c.json");
    let mut v: serde_json::Value = serde_json::from_str(&dual_latent::config::ExperimentConfig::parametric().to_json()).unwrap();
    v["train"]["patiense"] = 3.into();
    std::fs::write(&cfg, v.to_string()).unwrap();
    let (c, err) = code(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(c, 2);
    assert!(err.contains("patiense"), "{err}");

    assert_eq!(code(&["train", "--preset", "nope"]).0, 2);
    assert_eq!(code(&["frobnicate"]).0, 2);
}

#[test]
fn divergence_exits_with_code_3_and_keeps_the_partial_report() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("r");
    let (c, err) = code(&[
        "train",
        "--out",
        d.to_str().unwrap(),
        "--preset",
        "parametric",
        "--dataset.n",
        "300",
        "--train.divergence_loss",
        "1e-9",
        "--train.divergence_epochs",
        "2",
    ]);
    assert_eq!(c, 3, "{err}");
    let report: serde_json::Value = serde_json::from_slice(&read(d.join("train_report.json"))).unwrap();
    assert_eq!(report["stop_reason"], "diverged");
    assert_eq!(report["epochs_run"], 2);
}

#[test]
fn tampered_checkpoint_exits_with_code_4() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("r");
    train(&d, SMALL_PARAMETRIC, &[]);
    let blob = d.join("model.bin");
    let mut bytes = read(&blob);
    bytes[0] ^= 1;
    std::fs::write(&blob, bytes).unwrap();
    let (c, err) = code(&["eval", d.to_str().unwrap()]);
    assert_eq!(c, 4, "{err}");

    // a checkpoint from a different architecture than the stored config
    let other = t.path().join("o");
    train(&other, SMALL_PARAMETRIC, &["--model.d_hidden", "4"]);
    std::fs::copy(other.join("model.json"), d.join("model.json")).unwrap();
    std::fs::copy(other.join("model.bin"), d.join("model.bin")).unwrap();
    let (c, err) = code(&["eval", d.to_str().unwrap()]);
    assert_eq!(c, 4, "{err}");
    assert!(err.contains("does not match"), "{err}");
}

#[test]
fn export_writes_the_expected_tables() {
    let t = tempfile::tempdir().unwrap();
    let s = t.path().join("s");
    train(&s, SMALL_SWISS, &[]);
    ok(&["export", s.to_str().unwrap()]);
    let emb = String::from_utf8(read(s.join("export/embeddings.csv"))).unwrap();
    assert_eq!(emb.lines().next().unwrap(), "x1,x2,x3,y,z1,z2,w1,w2");
    assert_eq!(emb.lines().count(), 121);
    assert!(s.join("export/curves.csv").exists());

    let p = t.path().join("p");
    train(&p, SMALL_PARAMETRIC, &[]);
    ok(&["export", p.to_str().unwrap()]);
    let curves = String::from_utf8(read(p.join("export/posterior_curves.csv"))).unwrap();
    let header = curves.lines().next().unwrap();
    assert!(header.starts_with("x,mu_z,var_z,true_mu_z,true_var_z,mu_w_y0"), "{header}");
    // true z posterior at x = 0 is N(0, 1/2)
    let mid: Vec<&str> = curves.lines().nth(31).unwrap().split(',').collect();
    assert_eq!((mid[0], mid[3], mid[4]), ("0", "0", "0.5"));

    let empty = t.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let (c, err) = code(&["export", empty.to_str().unwrap()]);
    assert_eq!(c, 4);
    assert!(err.contains("missing artifact"), "{err}");
}

#[test]
fn colored_digit_runs_export_reconstruction_grids() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("c");
    train(
        &d,
        &[
            "--preset",
            "colored_digits_0.1",
            "--dataset.n_sources",
            "60",
            "--train.max_epochs",
            "1",
            "--model.d_hidden",
            "16",
        ],
        &[],
    );
    let report: serde_json::Value = serde_json::from_str(&ok(&["eval", d.to_str().unwrap()])).unwrap();
    assert!(report["marginal_rmse"].as_f64().unwrap() > 0.0);
    assert!(report["class_average_rmse"].as_f64().unwrap() > 0.0);
    ok(&["export", d.to_str().unwrap()]);
    let grid = String::from_utf8(read(d.join("export/reconstructions.csv"))).unwrap();
    // 16 test images, four rows each, plus the header
    assert_eq!(grid.lines().count(), 1 + 16 * 4);
    assert_eq!(grid.lines().next().unwrap().split(',').count(), 3 + 3 * 14 * 14);
}

#[test]
fn output_root_comes_from_the_environment() {
    let t = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .args(["train", "--preset", "parametric", "--seed", "5", "--dataset.n", "200", "--train.max_epochs", "1"])
        .env("DUAL_LATENT_OUT", t.path())
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(t.path().join("parametric/dual/seed-5/model.bin").exists());
}

#[test]
fn repro_aggregates_mean_and_sd_over_seeds() {
    let t = tempfile::tempdir().unwrap();
    let out = ok(&[
        "repro-table1",
        "--seeds",
        "2",
        "--out",
        t.path().to_str().unwrap(),
        "--dataset.n",
        "300",
        "--train.max_epochs",
        "2",
        "--metrics.nll_importance",
        "2",
    ]);
    assert!(out.starts_with("| experiment | model | nll |"), "{out}");
    for kind in ["dual", "plain_vae", "conditional_vae"] {
        assert!(out.contains(&format!("| parametric | {kind} |")), "{out}");
        for s in 0..2 {
            assert!(t.path().join(format!("table1/parametric/{kind}/seed-{s}/eval.json")).exists());
        }
    }
    let mut r = csv::Reader::from_path(t.path().join("table1/summary.csv")).unwrap();
    let n_col = r.headers().unwrap().iter().position(|h| h == "n").unwrap();
    for rec in r.records() {
        assert_eq!(&rec.unwrap()[n_col], "2");
    }
}
