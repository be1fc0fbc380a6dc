use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use reconboost_core::netcore::Mlp;
use reconboost_core::numkit::{Matrix, RandomStream};
use reconboost_core::objective::{one_hot, stage_grad_logits};

fn batch(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut s = RandomStream::new(seed);
    Matrix::from_vec(rows, cols, s.gaussian(rows * cols, 0.0, 1.0).unwrap()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let a = batch(64, 64, 1);
    let b = batch(64, 64, 2);
    c.bench_function("matmul 64x64x64", |bench| bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap()));
}

fn mlp(c: &mut Criterion) {
    let mut s = RandomStream::new(3);
    let net = Mlp::init(&[16, 64, 64, 6], &mut s).unwrap();
    let x = batch(64, 16, 4);
    c.bench_function("mlp forward 64x[16,64,64,6]", |bench| bench.iter(|| net.forward(black_box(&x)).unwrap()));
    let (logits, cache) = net.forward(&x).unwrap();
    c.bench_function("mlp backward 64x[16,64,64,6]", |bench| {
        bench.iter(|| net.backward(black_box(&cache), black_box(&logits)).unwrap())
    });
}

fn stage_gradient(c: &mut Criterion) {
    let phi = batch(1, 6, 5);
    let rest = batch(1, 6, 6);
    let prev = vec![1.0 / 6.0; 6];
    let y = one_hot(2, 6);
    c.bench_function("stage gradient per row", |bench| {
        bench.iter(|| {
            stage_grad_logits(
                black_box(phi.row(0)),
                black_box(rest.row(0)),
                Some(&prev),
                black_box(&y),
                1.0 / 3.0,
                0.1,
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, matmul, mlp, stage_gradient);
criterion_main!(benches);
