//! Acceptance run: one PASS/FAIL line per criterion, with the measured
//! numbers. Experimental criteria (1, 2, 3, 5) are reported but do not fail
//! the target; the numerical and determinism criteria (4, 6, 7, 8) do.
//!
//! `DUAL_LATENT_ACCEPTANCE=quick` shrinks the experiments for a smoke run and
//! says so in every affected line.

use std::path::Path;
use std::time::Instant;

use dual_latent::config::ExperimentConfig;
use dual_latent::distributions::{kl_diag_gaussians, DiagGaussian};
use dual_latent::elbo_gap::{verify_elbo_gap, LinearGaussianProblem, Normal1};
use dual_latent::experiment::{evaluate, load_splits, run_eval, run_train, train, Splits};
use dual_latent::metrics::{mine_mi, EvalReport, MineConfig};
use dual_latent::model::{Likelihood, ModelKind, ModelSpec, ModelState};
use dual_latent::nn::Activation;
use dual_latent::objective::{adversarial_ce, forward, total_objective, ComponentVars, LossWeights, StepNoise};
use dual_latent::tensor::{grad_check, grad_check_global};
use dual_latent::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    id: u32,
    pass: bool,
    blocking: bool,
    detail: String,
}

fn quick() -> bool {
    std::env::var("DUAL_LATENT_ACCEPTANCE").is_ok_and(|v| v == "quick")
}

fn scale_note() -> &'static str {
    if quick() {
        " [quick scale]"
    } else {
        ""
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

fn run(cfg: &ExperimentConfig) -> (EvalReport, f64) {
    let t = Instant::now();
    let splits = load_splits(cfg).expect("splits");
    let (state, _) = train(cfg, &splits, None).expect("training");
    let r = evaluate(cfg, &state, &splits).expect("evaluation");
    (r, t.elapsed().as_secs_f64())
}

fn preset(name: &str, quick_overrides: &[&str]) -> ExperimentConfig {
    let c = ExperimentConfig::preset(name).unwrap();
    if quick() {
        c.with_overrides(quick_overrides).unwrap()
    } else {
        c
    }
}

fn parametric(seeds: u64) -> (Outcome, Vec<(f64, f64)>) {
    let mut nll = vec![];
    let mut kl = vec![];
    let mut db = vec![];
    let mut secs: f64 = 0.0;
    for seed in 0..seeds {
        let mut c = preset("parametric", &["dataset.n=4000", "train.max_epochs=30"]);
        c.seed = seed;
        let (r, t) = run(&c);
        nll.push(r.nll.unwrap().value);
        kl.push(r.kl_z_x100.unwrap());
        db.push(r.delta_bayes.unwrap().delta);
        secs = secs.max(t);
    }
    let (m_nll, s_nll) = mean_sd(&nll);
    let (m_kl, s_kl) = mean_sd(&kl);
    let (m_db, _) = mean_sd(&db);
    let pass = m_nll <= 1.80 && m_kl <= 0.5 && m_db <= 1.5 && secs <= 300.0;
    let detail = format!(
        "parametric, {seeds} seeds: NLL {m_nll:.3} ± {s_nll:.3} (≤ 1.80), KL_z×100 {m_kl:.2} ± {s_kl:.2} (≤ 0.5), \
         Δ-Bayes {m_db:.2} (≤ 1.5), slowest seed {secs:.0}s (≤ 300){}",
        scale_note()
    );
    let bands = vec![(m_nll, s_nll), (m_kl, s_kl)];
    (Outcome { id: 1, pass, blocking: false, detail }, bands)
}

fn swiss_roll() -> Outcome {
    let q = ["dataset.n=3000", "train.max_epochs=20", "metrics.mine.epochs=50"];
    let dual = preset("swiss_roll_0.3", &q);
    let plain = dual.as_baseline(ModelKind::PlainVae);
    let (rd, td) = run(&dual);
    let (rp, tp) = run(&plain);
    let db = rd.delta_bayes.unwrap().delta;
    let mi = rd.mi_zw.unwrap().clamped;
    let gap = (rd.nll.unwrap().value - rp.nll.unwrap().value).abs();
    let secs = td.max(tp);
    Outcome {
        id: 2,
        pass: db <= 3.0 && mi <= 0.05 && gap <= 0.05 && secs <= 900.0,
        blocking: false,
        detail: format!(
            "swiss roll ρ=0.3: Δ-Bayes {db:.2} (≤ 3.0), I(z;w) {mi:.3} nats (≤ 0.05), NLL {:.3} vs plain VAE {:.3}, \
             gap {gap:.3} (≤ 0.05), slowest run {secs:.0}s (≤ 900){}",
            rd.nll.unwrap().value,
            rp.nll.unwrap().value,
            scale_note()
        ),
    }
}

fn colored_digits() -> Outcome {
    let q = ["dataset.n_sources=1000", "train.max_epochs=10"];
    let mut pass = true;
    let mut parts = vec![];
    let mut secs: f64 = 0.0;
    for rate in ["0.1", "0.3"] {
        let dual = preset(&format!("colored_digits_{rate}"), &q);
        let cvae = dual.as_baseline(ModelKind::ConditionalVae);
        let (rd, td) = run(&dual);
        let (rc, tc) = run(&cvae);
        secs = secs.max(td).max(tc);
        let ours = rd.marginal_rmse.unwrap();
        let class_avg = rd.class_average_rmse.unwrap();
        let proxy = rc.marginal_proxy_rmse.unwrap();
        let gain = 1.0 - ours / class_avg;
        pass &= gain >= 0.2 && ours < proxy;
        parts.push(format!(
            "ρ={rate}: RMSE {ours:.4}, class average {class_avg:.4} (gain {:.1}%, need ≥ 20%), CVAE proxy {proxy:.4}",
            100.0 * gain
        ));
    }
    Outcome {
        id: 3,
        pass: pass && secs <= 1800.0,
        blocking: false,
        detail: format!("colored digits: {}, slowest run {secs:.0}s (≤ 1800){}", parts.join("; "), scale_note()),
    }
}

fn elbo_gap_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let problem = LinearGaussianProblem {
            class_means: vec![rng.gen_range(-2.0..0.0), rng.gen_range(0.0..2.0)],
            var_w: rng.gen_range(0.2..2.0),
            noise_var: rng.gen_range(0.1..1.0),
            x: rng.gen_range(-2.0..2.0),
            y: rng.gen_range(0..2),
        };
        let q_z = Normal1::new(rng.gen_range(-1.5..1.5), rng.gen_range(0.05..1.5)).unwrap();
        let q_w = Normal1::new(rng.gen_range(-1.5..1.5), rng.gen_range(0.05..1.5)).unwrap();
        let g = verify_elbo_gap(&problem, q_z, q_w, 100_000, 1000 + i).unwrap();
        worst = worst.max(g.z_score());
    }
    Outcome {
        id: 4,
        pass: worst < 3.0,
        blocking: true,
        detail: format!("ELBO gap identity, 20 draws × 1e5 samples: worst |lhs − rhs| = {worst:.2} SE (< 3)"),
    }
}

fn init_stability(bands: &[(f64, f64)]) -> Outcome {
    let n_inits = 5;
    let base = preset("parametric", &["dataset.n=4000", "train.max_epochs=30"]);
    let splits: Splits = load_splits(&base).unwrap();
    let mut nll = vec![];
    let mut kl = vec![];
    for i in 0..n_inits {
        // same data, fresh initialization and minibatch order
        let mut c = base.clone();
        c.seed = 1000 + i;
        let (state, _) = train(&c, &splits, None).unwrap();
        let r = evaluate(&base, &state, &splits).unwrap();
        nll.push(r.nll.unwrap().value);
        kl.push(r.kl_z_x100.unwrap());
    }
    let spread = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
    let (s_nll, s_kl) = (spread(&nll), spread(&kl));
    let (b_nll, b_kl) = (3.0 * bands[0].1, 3.0 * bands[1].1);
    Outcome {
        id: 5,
        pass: s_nll <= b_nll && s_kl <= b_kl,
        blocking: false,
        detail: format!(
            "5 inits on one dataset: NLL range {s_nll:.3} (≤ {b_nll:.3}), KL_z×100 range {s_kl:.2} (≤ {b_kl:.2}); \
             band = 3 × seed-to-seed SD from criterion 1{}",
            scale_note()
        ),
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn numerical_core() -> Outcome {
    type Build = fn(&mut Tape, &[Var]) -> dual_latent::Result<Var>;
    let cases: Vec<(&str, Vec<Vec<usize>>, (f32, f32), Build)> = vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], (0.2, 1.0), |t, p| t.matmul(p[0], p[1])),
        ("add", vec![vec![3, 2], vec![2]], (-1.0, 1.0), |t, p| t.add(p[0], p[1])),
        ("sub", vec![vec![3, 2], vec![3, 2]], (-1.0, 1.0), |t, p| t.sub(p[0], p[1])),
        ("mul", vec![vec![3, 2], vec![2]], (0.2, 1.5), |t, p| t.mul(p[0], p[1])),
        ("div", vec![vec![3, 2], vec![3, 2]], (0.5, 2.0), |t, p| t.div(p[0], p[1])),
        ("exp", vec![vec![4]], (-1.0, 1.0), |t, p| Ok(t.exp(p[0]))),
        ("log", vec![vec![4]], (0.5, 3.0), |t, p| t.log(p[0])),
        ("softplus", vec![vec![4]], (-3.0, 3.0), |t, p| Ok(t.softplus(p[0]))),
        ("sigmoid", vec![vec![4]], (-3.0, 3.0), |t, p| Ok(t.sigmoid(p[0]))),
        ("relu", vec![vec![4]], (0.1, 1.0), |t, p| Ok(t.relu(p[0]))),
        ("tanh", vec![vec![4]], (-2.0, 2.0), |t, p| Ok(t.tanh(p[0]))),
        ("square", vec![vec![4]], (0.2, 1.0), |t, p| Ok(t.square(p[0]))),
        ("sqrt", vec![vec![4]], (0.5, 3.0), |t, p| t.sqrt(p[0])),
        ("sum_axis0", vec![vec![3, 2]], (-1.0, 1.0), |t, p| t.sum(p[0], Some(0))),
        ("mean_axis1", vec![vec![3, 2]], (-1.0, 1.0), |t, p| t.mean(p[0], Some(1))),
        ("concat_cols", vec![vec![3, 1], vec![3, 2]], (-1.0, 1.0), |t, p| t.concat_cols(p[0], p[1])),
        ("log_softmax", vec![vec![3, 3]], (-1.0, 1.0), |t, p| {
            let l = t.log_softmax(p[0])?;
            t.pick_cols(l, &[2, 0, 1])
        }),
        ("gather_rows", vec![vec![2, 2]], (-1.0, 1.0), |t, p| t.gather_rows(p[0], &[1, 0, 1])),
        ("segment_mean", vec![vec![4, 2]], (-1.0, 1.0), |t, p| t.segment_mean(p[0], &[1, 0, 1, 1], 3)),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut worst_op = ("", 0.0f32);
    for (name, shapes, (lo, hi), op) in &cases {
        for _ in 0..20 {
            let inputs: Vec<Tensor> = shapes.iter().map(|s| random_tensor(&mut rng, s, *lo, *hi)).collect();
            let mut probe = Tape::new();
            let pv: Vec<Var> = inputs.iter().map(|x| probe.constant(x.clone())).collect();
            let out = op(&mut probe, &pv).unwrap();
            let weights = random_tensor(&mut rng, probe.shape(out), 0.5, 1.5);
            let err = grad_check(
                |t, p| {
                    let y = op(t, p)?;
                    let r = t.constant(weights.clone());
                    let yr = t.mul(y, r)?;
                    t.sum(yr, None)
                },
                &inputs,
                1e-2,
            )
            .unwrap();
            if !(err <= worst_op.1) {
                worst_op = (name, err);
            }
        }
    }

    let spec = ModelSpec {
        kind: ModelKind::Dual,
        x_dim: 2,
        n_classes: 2,
        d_latent: 2,
        n_hidden: 1,
        d_hidden: 4,
        activation: Activation::Tanh,
        likelihood: Likelihood::Gaussian,
    };
    let m = ModelState::init(spec, &mut rng).unwrap();
    let normal = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()).unwrap()
    };
    let x = normal(&mut rng, 5, 2);
    let y = [0, 1, 0, 1, 1];
    let noise = StepNoise {
        eps_z: normal(&mut rng, 5, 2),
        eps_w: Some(normal(&mut rng, 5, 2)),
    };
    let weights = LossWeights {
        rec: 0.7,
        rec_z: 0.3,
        kl_z: 0.7,
        kl_w: 0.2,
        adv: 0.8,
    };
    let params: Vec<Tensor> = m.named_params().into_iter().map(|(_, _, t)| t.clone()).collect();
    let full = grad_check_global(
        |tape, vars| {
            let b = m.bind_vars(vars)?;
            let fp = forward(tape, &b, &x, &y, &noise, false)?;
            let ce = adversarial_ce(tape, &b, b.adversary.unwrap(), fp.xhat, &y)?;
            let parts = ComponentVars { ce, ..fp.parts };
            let obj = total_objective(tape, &parts, &weights)?;
            Ok(tape.neg(obj))
        },
        &params,
        1e-2,
    )
    .unwrap();

    // 1-D KL by trapezoid integration of q·ln(q/p), in log space
    let log_pdf = |x: f64, m: f64, v: f64| -(x - m).powi(2) / (2.0 * v) - 0.5 * (2.0 * std::f64::consts::PI * v).ln();
    let mut worst_kl: f64 = 0.0;
    for _ in 0..1000 {
        let (mq, mp): (f64, f64) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let (vq, vp): (f64, f64) = (rng.gen_range(0.2..3.0), rng.gen_range(0.2..3.0));
        let (a, b, n) = (mq - 14.0 * vq.sqrt(), mq + 14.0 * vq.sqrt(), 20_000);
        let h = (b - a) / n as f64;
        let f = |x: f64| {
            let lq = log_pdf(x, mq, vq);
            lq.exp() * (lq - log_pdf(x, mp, vp))
        };
        let quad = h * (0.5 * (f(a) + f(b)) + (1..n).map(|i| f(a + i as f64 * h)).sum::<f64>());
        let q = DiagGaussian::new(vec![mq], vec![vq]).unwrap();
        let p = DiagGaussian::new(vec![mp], vec![vp]).unwrap();
        worst_kl = worst_kl.max((kl_diag_gaussians(&q, &p).unwrap() - quad).abs());
    }
    Outcome {
        id: 6,
        pass: worst_op.1 < 1e-3 && full < 1e-3 && worst_kl < 1e-4,
        blocking: true,
        detail: format!(
            "gradient checks: worst op {} at {:.1e}, full loss {full:.1e} (< 1e-3); Gaussian KL vs quadrature, 1000 pairs: {worst_kl:.1e} (< 1e-4)",
            worst_op.0, worst_op.1
        ),
    }
}

fn mine_calibration() -> Outcome {
    let n = 5000;
    let rho = 0.5f32;
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let (mut z, mut w) = (vec![], vec![]);
    for _ in 0..n {
        let a: f32 = rng.sample(StandardNormal);
        let b: f32 = rng.sample(StandardNormal);
        z.push(a);
        w.push(rho * a + (1.0 - rho * rho).sqrt() * b);
    }
    let (z, w) = (Tensor::matrix(n, 1, z).unwrap(), Tensor::matrix(n, 1, w).unwrap());
    let cfg = MineConfig::default();
    let est = mine_mi(&z, &w, &cfg, 72).unwrap();
    let oracle = -0.5 * (1.0 - (rho as f64).powi(2)).ln();
    let mut perm: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
    let null = mine_mi(&z, &w.select_rows(&perm), &cfg, 73).unwrap();
    let err = (est.raw - oracle).abs();
    Outcome {
        id: 7,
        pass: err <= 0.03 && null.clamped <= 0.02,
        blocking: true,
        detail: format!(
            "MINE: ρ=0.5 estimate {:.4} vs {oracle:.4} (error {err:.4} ≤ 0.03); independence null {:.4} (≤ 0.02)",
            est.raw, null.clamped
        ),
    }
}

fn determinism(root: &Path) -> Outcome {
    let files = ["model.bin", "model.json", "epochs.csv", "train_report.json", "eval.json"];
    let mut mismatched = vec![];
    for name in ["parametric", "swiss_roll_0.3", "colored_digits_0.3"] {
        let key = if name.starts_with("colored") { "dataset.n_sources=100" } else { "dataset.n=600" };
        let c = ExperimentConfig::preset(name)
            .unwrap()
            .with_overrides(&[key, "train.max_epochs=3", "metrics.mine.epochs=5", "seed=5"])
            .unwrap();
        let dirs = [root.join(name).join("a"), root.join(name).join("b")];
        for d in &dirs {
            run_train(&c, d).unwrap();
            run_eval(d, &[]).unwrap();
        }
        for f in files {
            if std::fs::read(dirs[0].join(f)).unwrap() != std::fs::read(dirs[1].join(f)).unwrap() {
                mismatched.push(format!("{name}/{f}"));
            }
        }
    }
    Outcome {
        id: 8,
        pass: mismatched.is_empty(),
        blocking: true,
        detail: if mismatched.is_empty() {
            "train+eval twice per preset family: checkpoints, logs and reports byte-identical".into()
        } else {
            format!("differing artifacts: {}", mismatched.join(", "))
        },
    }
}

fn report(o: &Outcome) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("criterion {}: {tag}  {}", o.id, o.detail);
}

fn main() {
    // cargo passes harness flags such as --nocapture or a filter; a filter
    // that does not name this target skips the run
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let t0 = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut outcomes = vec![];
    let mut step = |o: Outcome| {
        report(&o);
        outcomes.push(o);
    };

    step(elbo_gap_identity());
    step(numerical_core());
    step(mine_calibration());
    step(determinism(tmp.path()));
    let (o, bands) = parametric(if quick() { 3 } else { 10 });
    step(o);
    step(init_stability(&bands));
    step(swiss_roll());
    step(colored_digits());

    outcomes.sort_by_key(|o| o.id);
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!("acceptance finished in {:.0}s; failing criteria: {failed:?}", t0.elapsed().as_secs_f64());
    if outcomes.iter().any(|o| o.blocking && !o.pass) {
        std::process::exit(1);
    }
}
