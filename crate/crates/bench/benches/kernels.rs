use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use esgcn::tensor::{Graph, Tensor};

fn input(shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |i| ((i as f32) * 0.013).sin())
}

fn conv(c: &mut Criterion) {
    let x = input(&[64, 64, 10, 12]);
    let k = input(&[64, 64, 1, 3]);
    let b = input(&[64]);
    let mut group = c.benchmark_group("conv_nodewise");
    for stride in [1, 2] {
        group.bench_function(format!("forward/stride{stride}"), |bench| {
            bench.iter(|| {
                let mut g = Graph::new();
                let (x, k, b) = (g.constant(x.clone()), g.constant(k.clone()), g.constant(b.clone()));
                black_box(g.conv_nodewise(x, k, b, stride, 1).unwrap());
            })
        });
        group.bench_function(format!("forward+backward/stride{stride}"), |bench| {
            bench.iter(|| {
                let mut g = Graph::new();
                let (x, k, b) = (g.param(x.clone()), g.param(k.clone()), g.param(b.clone()));
                let y = g.conv_nodewise(x, k, b, stride, 1).unwrap();
                let loss = g.sum(y).unwrap();
                black_box(g.backward(loss).unwrap());
            })
        });
    }
    group.finish();
}

fn relational(c: &mut Criterion) {
    let n = 307;
    let s = input(&[8, n, n, 2]);
    let f = input(&[8, 64, n, 2]);
    c.bench_function("relational_features/n307", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (s, f) = (g.constant(s.clone()), g.constant(f.clone()));
            black_box(g.relational_features(s, f).unwrap());
        })
    });
}

criterion_group!(benches, conv, relational);
criterion_main!(benches);
