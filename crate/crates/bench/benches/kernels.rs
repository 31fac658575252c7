use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use debiaspl_core::debias::{debias_logits, marginal_loss, DebiasState, Margins};
use debiaspl_core::numkit::{softmax_rows, stream};
use debiaspl_core::train::{train_step, MethodContext, RunState};
use debiaspl_core::{Matrix, Method, MlpParams, SeededRng, TrainConfig};
use std::hint::black_box;

fn random(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.standard_normal()).collect()).unwrap()
}

fn mlp(c: &mut Criterion) {
    let mut rng = SeededRng::new(1, stream::INIT);
    let params = MlpParams::init(&[8, 64, 64, 10], &mut rng).unwrap();
    let x = random(112, 8, &mut rng);
    let upstream = random(112, 10, &mut rng);
    c.bench_function("mlp forward 112x8", |b| {
        b.iter(|| params.forward(black_box(&x)).unwrap())
    });
    c.bench_function("mlp backward 112x8", |b| {
        b.iter(|| params.backward(black_box(&x), black_box(&upstream)).unwrap())
    });
    let logits = random(112, 10, &mut rng);
    c.bench_function("softmax rows 112x10", |b| {
        b.iter(|| softmax_rows(black_box(&logits)).unwrap())
    });
}

fn debias(c: &mut Criterion) {
    let mut rng = SeededRng::new(2, 0);
    let probs = softmax_rows(&random(112, 10, &mut rng)).unwrap();
    let mut state = DebiasState::new(10, 0.999, 0.5, 0.5).unwrap();
    c.bench_function("p_hat update 112x10", |b| {
        b.iter(|| state.update(black_box(&probs)).unwrap())
    });
    let z: Vec<f64> = (0..10).map(|_| rng.standard_normal()).collect();
    let margins = Margins(vec![0.3; 10]);
    c.bench_function("marginal loss C=10", |b| {
        b.iter(|| marginal_loss(black_box(&z), 3, &margins))
    });
    c.bench_function("debias logits C=10", |b| {
        b.iter(|| debias_logits(black_box(&z), &state).unwrap())
    });
}

fn step(c: &mut Criterion) {
    let mut rng = SeededRng::new(3, 0);
    for method in [Method::FixMatch, Method::DebiasPl] {
        let cfg = TrainConfig {
            method,
            total_steps: 1_000_000,
            ..TrainConfig::default()
        };
        let ctx = MethodContext::new(&cfg, &[16; 10]);
        let state = RunState::new(&cfg, 8, 10).unwrap();
        let x = random(cfg.batch_size, 8, &mut rng);
        let y: Vec<usize> = (0..cfg.batch_size).map(|i| i % 10).collect();
        let u = random(cfg.unlabeled_batch(), 8, &mut rng);
        c.bench_function(&format!("train step {method}"), |b| {
            b.iter_batched(
                || state.clone(),
                |mut s| train_step(&mut s, &cfg, &ctx, &x, &y, &u, None).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
}

criterion_group!(benches, mlp, debias, step);
criterion_main!(benches);
