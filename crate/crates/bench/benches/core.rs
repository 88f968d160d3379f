use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dual_latent::datasets::{batch_indices, colored_digits, gen_parametric, gen_swiss_roll, SwissRollConfig};
use dual_latent::metrics::{eval_nll, mine_mi, MineConfig};
use dual_latent::model::ModelState;
use dual_latent::trainer::{sample_noise, TrainOptions, Trainer};
use dual_latent::{Tape, Tensor};
use dual_latent_bench::fixture;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul_fwd_bwd");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for n in [32usize, 128, 256] {
        let (a, b) = (random(128, n, &mut rng), random(n, n, &mut rng));
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut t = Tape::new();
                let av = t.param(a.clone());
                let bv = t.param(b.clone());
                let p = t.matmul(av, bv).unwrap();
                let s = t.sum(p, None).unwrap();
                black_box(t.backward(s).unwrap());
            })
        });
    }
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("train_step");
    for preset in ["parametric", "swiss_roll_0.3", "colored_digits_0.3"] {
        let (cfg, data, spec) = fixture(preset, 512);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut state = ModelState::init(spec, &mut rng).unwrap();
        let mut opts = TrainOptions::new(1e-4);
        opts.batch_size = 128;
        let mut trainer = Trainer::new(&mut state, cfg.weights, opts).unwrap();
        let idx = batch_indices(data.len(), 128, None::<&mut ChaCha8Rng>).unwrap();
        let b = data.batch(idx[0].clone());
        g.bench_function(preset, |bench| {
            bench.iter(|| {
                let noise = sample_noise(&mut rng, b.y.len(), state.spec.d_latent, true);
                black_box(trainer.step(&mut state, &b.x, &b.y, &noise).unwrap());
            })
        });
    }
    g.finish();
}

fn evaluation(c: &mut Criterion) {
    let (_, data, spec) = fixture("swiss_roll_0.3", 1000);
    let state = ModelState::init(spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    c.bench_function("eval_nll_swiss_1000x8", |b| b.iter(|| black_box(eval_nll(&state, &data, 8, 0).unwrap())));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (z, w) = (random(1000, 2, &mut rng), random(1000, 2, &mut rng));
    let cfg = MineConfig {
        epochs: 5,
        ..MineConfig::default()
    };
    c.bench_function("mine_5_epochs_1000", |b| b.iter(|| black_box(mine_mi(&z, &w, &cfg, 0).unwrap())));
}

fn generators(c: &mut Criterion) {
    let mut g = c.benchmark_group("generate");
    g.sample_size(20);
    g.bench_function("parametric_20k", |b| b.iter(|| black_box(gen_parametric(20_000, 0).unwrap())));
    g.bench_function("swiss_roll_20k", |b| {
        b.iter(|| black_box(gen_swiss_roll(&SwissRollConfig::new(20_000, 0.3), 0).unwrap()))
    });
    g.bench_function("colored_digits_500_sources", |b| {
        b.iter(|| black_box(colored_digits(500, 0.3, 0, Some(14)).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, matmul, train_step, evaluation, generators);
criterion_main!(benches);
