use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec(kind: ModelKind, x_dim: usize, d: usize, h: usize) -> ModelSpec {
    ModelSpec {
        kind,
        x_dim,
        n_classes: 2,
        d_latent: d,
        n_hidden: 2,
        d_hidden: h,
        activation: Activation::Relu,
        likelihood: Likelihood::Gaussian,
    }
}

fn model(kind: ModelKind, seed: u64) -> ModelState {
    ModelState::init(spec(kind, 1, 1, 8), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn parameter_count_audit() {
    // 1-D problem, 2×8 MLPs, counted layer by layer:
    // enc_z 16+72+2·9, dec_z 16+72+9, enc_w 32+72+2·9, dec_zw 24+72+9, adversary 2+2
    let m = model(ModelKind::Dual, 0);
    assert_eq!(m.group_param_count(ParamGroup::EncoderZ), 106);
    assert_eq!(m.group_param_count(ParamGroup::DecoderZ), 97);
    assert_eq!(m.group_param_count(ParamGroup::EncoderW), 122);
    assert_eq!(m.group_param_count(ParamGroup::DecoderJoint), 105);
    assert_eq!(m.group_param_count(ParamGroup::Adversary), 4);
    assert_eq!(m.param_count(), 434);
    assert_eq!(m.spec.expected_param_count(), 434);

    // 3-D inputs, 2-D latents, 2×128 MLPs:
    // enc_z 512+16512+2·258, dec_z 384+16512+387, enc_w 768+16512+2·258,
    // dec_zw 640+16512+387, adversary 6+2
    let s = spec(ModelKind::Dual, 3, 2, 128);
    let m = ModelState::init(s.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(m.param_count(), 17540 + 17283 + 17796 + 17539 + 8);
    assert_eq!(s.expected_param_count(), m.param_count());

    for kind in [ModelKind::PlainVae, ModelKind::ConditionalVae] {
        let s = spec(kind, 3, 2, 16);
        let m = ModelState::init(s.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m.param_count(), s.expected_param_count());
    }
}

#[test]
fn groups_are_disjoint() {
    let mut m = model(ModelKind::Dual, 1);
    let main: Vec<String> = m.params_mut(false).into_iter().map(|(n, _)| n).collect();
    let adv: Vec<String> = m.params_mut(true).into_iter().map(|(n, _)| n).collect();
    assert_eq!(adv, ["adversary.weight", "adversary.bias"]);
    assert!(main.iter().all(|n| !adv.contains(n)));
    assert_eq!(main.len() + adv.len(), m.named_params().len());
    let mut t = Tape::new();
    let b = m.bind(&mut t);
    assert_eq!(b.main_vars().len(), main.len());
    assert_eq!(b.adversary_vars().len(), 2);
}

#[test]
fn fresh_encoder_on_zero_input() {
    let m = model(ModelKind::Dual, 2);
    let (mu, var) = m.encode_z(&Tensor::zeros(&[4, 1]), None).unwrap();
    assert!(mu.all_finite() && var.all_finite());
    assert!(var.data().iter().all(|&v| v > 0.0));
    // ReLU trunk on x = 0 only sees biases, so every row is identical
    assert!(var.data().windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn encoders_are_batch_equivariant() {
    let m = model(ModelKind::Dual, 3);
    let x = Tensor::matrix(4, 1, vec![-1.5, 0.2, 0.9, 2.4]).unwrap();
    let y = [0, 1, 1, 0];
    let (mu, var) = m.encode_z(&x, None).unwrap();
    let (mw, vw) = m.encode_w(&x, &y).unwrap();
    let perm = [2, 0, 3, 1];
    let xp = x.select_rows(&perm);
    let yp: Vec<usize> = perm.iter().map(|&i| y[i]).collect();
    let (mu_p, var_p) = m.encode_z(&xp, None).unwrap();
    let (mw_p, vw_p) = m.encode_w(&xp, &yp).unwrap();
    assert_eq!(mu_p, mu.select_rows(&perm));
    assert_eq!(var_p, var.select_rows(&perm));
    assert_eq!(mw_p, mw.select_rows(&perm));
    assert_eq!(vw_p, vw.select_rows(&perm));
    // batch of one equals the corresponding row
    let (m1, _) = m.encode_w(&x.select_rows(&[2]), &[1]).unwrap();
    assert_eq!(m1.data(), mw.row(2));
}

#[test]
fn encode_w_depends_on_label() {
    let m = model(ModelKind::Dual, 4);
    let x = Tensor::matrix(2, 1, vec![0.3, 0.3]).unwrap();
    let (mw, _) = m.encode_w(&x, &[0, 1]).unwrap();
    assert_ne!(mw.row(0), mw.row(1));
}

#[test]
fn invalid_inputs_are_rejected() {
    let m = model(ModelKind::Dual, 5);
    let bad = Tensor::matrix(2, 1, vec![0.0, f32::NAN]).unwrap();
    assert!(matches!(m.encode_z(&bad, None), Err(Error::Input(_))));
    let x = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
    assert!(matches!(m.encode_w(&x, &[0, 2]), Err(Error::Input(_))));
    assert!(matches!(m.encode_z(&Tensor::zeros(&[2, 3]), None), Err(Error::Input(_))));
    let cvae = model(ModelKind::ConditionalVae, 5);
    assert!(matches!(cvae.encode_z(&x, None), Err(Error::Contract(_))));
    assert!(cvae.encode_z(&x, Some(&[0, 1])).is_ok());
    assert!(matches!(cvae.encode_w(&x, &[0, 1]), Err(Error::Contract(_))));
}

#[test]
fn zeroed_decoder_outputs_zero() {
    let mut m = model(ModelKind::Dual, 6);
    for t in m.dec_z.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let out = m.decode_z(&Tensor::matrix(3, 1, vec![1.0, -2.0, 5.0]).unwrap(), None).unwrap();
    assert_eq!(out.shape(), &[3, 1]);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn joint_decoder_input_order_matters() {
    let m = model(ModelKind::Dual, 7);
    let a = Tensor::matrix(1, 1, vec![0.8]).unwrap();
    let b = Tensor::matrix(1, 1, vec![-0.4]).unwrap();
    assert_ne!(m.decode_zw(&a, &b).unwrap(), m.decode_zw(&b, &a).unwrap());
}

#[test]
fn bernoulli_reconstructions_lie_in_unit_interval() {
    let mut s = spec(ModelKind::Dual, 5, 2, 8);
    s.likelihood = Likelihood::Bernoulli;
    let m = ModelState::init(s, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let z = Tensor::matrix(2, 2, vec![30.0, -30.0, 0.0, 1.0]).unwrap();
    let out = m.decode_z(&z, None).unwrap();
    assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn zero_adversary_is_uniform() {
    let mut m = model(ModelKind::Dual, 9);
    let a = m.adversary.as_mut().unwrap();
    *a = Linear::zeros(1, 2);
    let lp = m
        .classify_reconstruction(&Tensor::matrix(3, 1, vec![-4.0, 0.0, 7.0]).unwrap())
        .unwrap();
    assert!(lp.data().iter().all(|&v| (v + 2f32.ln()).abs() < 1e-7));
}

#[test]
fn adversary_probabilities_normalize() {
    let mut s = spec(ModelKind::Dual, 3, 1, 4);
    s.n_classes = 5;
    let m = ModelState::init(s, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    let x = Tensor::matrix(2, 3, vec![1.0, -3.0, 0.5, 9.0, 2.0, -7.0]).unwrap();
    let lp = m.classify_reconstruction(&x).unwrap();
    for r in 0..2 {
        let s: f64 = lp.row(r).iter().map(|&v| (v as f64).exp()).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("ckpt");
    let mut m = model(ModelKind::Dual, 11);
    m.prior.update(&PriorMeans {
        means: Tensor::matrix(2, 1, vec![0.25, -1.0 / 3.0]).unwrap(),
        counts: vec![3, 0],
    });
    m.save(&stem).unwrap();
    let back = ModelState::load(&stem).unwrap();
    assert_eq!(back.spec, m.spec);
    assert_eq!(back.prior, m.prior);
    for ((n0, _, t0), (n1, _, t1)) in m.named_params().iter().zip(back.named_params().iter()) {
        assert_eq!(n0, n1);
        let b0: Vec<u32> = t0.data().iter().map(|v| v.to_bits()).collect();
        let b1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(b0, b1, "{n0}");
    }
    // re-saving produces identical bytes
    let stem2 = dir.path().join("ckpt2");
    back.save(&stem2).unwrap();
    assert_eq!(
        std::fs::read(stem.with_extension("bin")).unwrap(),
        std::fs::read(stem2.with_extension("bin")).unwrap()
    );
}

#[test]
fn checkpoint_architecture_mismatch_is_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("ckpt");
    model(ModelKind::Dual, 12).save(&stem).unwrap();
    let mp = stem.with_extension("json");
    let text = std::fs::read_to_string(&mp).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["meta"]["spec"]["d_hidden"] = serde_json::json!(9);
    std::fs::write(&mp, serde_json::to_string(&v).unwrap()).unwrap();
    assert!(matches!(ModelState::load(&stem), Err(Error::Integrity(_))));
}

#[test]
fn class_means_examples() {
    let z = Tensor::matrix(4, 2, vec![1.5, -2.0, 1.5, -2.0, 1.5, -2.0, 1.5, -2.0]).unwrap();
    let p = estimate_class_means(&z, &[0, 1, 1, 0], 2, None).unwrap();
    assert_eq!(p.means.data(), &[1.5, -2.0, 1.5, -2.0]);
    assert_eq!(p.counts, [2, 2]);

    let y = [0, 1, 2, 0, 1, 2];
    let z = crate::nn::one_hot(&y, 3).unwrap();
    let p = estimate_class_means(&z, &y, 3, None).unwrap();
    assert_eq!(p.means.data(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn class_means_fallbacks() {
    let z = Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap();
    // no history: empty class takes the batch mean
    let p = estimate_class_means(&z, &[0, 0], 2, None).unwrap();
    assert_eq!(p.means.data(), &[2.0, 2.0]);
    assert_eq!(p.counts, [2, 0]);

    let mut running = RunningMeans::new(2, 1);
    running.update(&PriorMeans {
        means: Tensor::matrix(2, 1, vec![0.0, -5.0]).unwrap(),
        counts: vec![1, 1],
    });
    let p = estimate_class_means(&z, &[0, 0], 2, Some(&running)).unwrap();
    assert_eq!(p.means.data(), &[2.0, -5.0]);
}

#[test]
fn running_means_follow_momentum() {
    let mut r = RunningMeans::new(2, 1);
    assert_eq!(r.resolved().data(), &[0.0, 0.0]);
    let batch = |a: f32, b: f32, counts: Vec<usize>| PriorMeans {
        means: Tensor::matrix(2, 1, vec![a, b]).unwrap(),
        counts,
    };
    r.update(&batch(1.0, 9.0, vec![4, 0]));
    // class 1 unseen: resolved from the seen classes
    assert_eq!(r.resolved().data(), &[1.0, 1.0]);
    r.update(&batch(2.0, 4.0, vec![1, 1]));
    assert!((r.means.data()[0] - (0.9 * 1.0 + 0.1 * 2.0)).abs() < 1e-7);
    assert_eq!(r.means.data()[1], 4.0);
}

/// Welch two-sample t statistic.
fn welch_t(a: &[f64], b: &[f64]) -> f64 {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    let (ma, mb) = (mean(a), mean(b));
    (ma - mb) / (var(a, ma) / a.len() as f64 + var(b, mb) / b.len() as f64).sqrt()
}

#[test]
fn label_blind_class_means_are_indistinguishable() {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut gaps = vec![];
    for n in [1_000usize, 100_000] {
        let z: Vec<f32> = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let zt = Tensor::matrix(n, 1, z.clone()).unwrap();
        let p = estimate_class_means(&zt, &y, 2, None).unwrap();
        gaps.push((p.means.data()[0] - p.means.data()[1]).abs());
        let a: Vec<f64> = z.iter().zip(&y).filter(|(_, &k)| k == 0).map(|(&v, _)| v as f64).collect();
        let b: Vec<f64> = z.iter().zip(&y).filter(|(_, &k)| k == 1).map(|(&v, _)| v as f64).collect();
        // two-sided 1% critical value of the normal approximation
        assert!(welch_t(&a, &b).abs() < 2.576, "n={n}");
    }
    assert!(gaps[1] < gaps[0].max(0.02));
    assert!(gaps[1] < 0.02);
}
