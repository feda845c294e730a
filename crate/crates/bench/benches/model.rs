use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use esgcn::data::synthetic::{sinusoids, SinusoidSpec};
use esgcn::data::{PreparedData, WindowSpec, Windowing};
use esgcn::model::{Esgcn, ModelConfig};
use esgcn::train::{TrainConfig, Trainer};

fn train_step(c: &mut Criterion) {
    let ds = sinusoids(SinusoidSpec::default());
    let data = PreparedData::prepare(&ds, WindowSpec::default(), Windowing::default(), None).unwrap();
    let batch = data.batch::<f32>(&data.splits.train[..64]);
    let model = Esgcn::<f32>::new(ModelConfig::default(), 0).unwrap();

    let mut group = c.benchmark_group("default_model/n10_b64");
    group.sample_size(10);
    group.bench_function("predict", |b| b.iter(|| black_box(model.predict(&batch.inputs).unwrap())));
    let mut trainer = Trainer::new(model.clone(), TrainConfig::default()).unwrap();
    group.bench_function("train_step", |b| b.iter(|| black_box(trainer.step(&batch, 3e-4).unwrap())));
    group.finish();
}

criterion_group!(benches, train_step);
criterion_main!(benches);
