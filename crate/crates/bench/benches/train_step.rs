use criterion::{criterion_group, criterion_main, Criterion};
use oafa_bench::desk_setup;
use oafa_core::networks::generate;
use oafa_core::trainer::{train_step, TrainState};

fn step(c: &mut Criterion) {
    let (config, _data, batch) = desk_setup();
    let mut group = c.benchmark_group("desk scale");
    group.sample_size(10);
    group.bench_function("train_step", |bench| {
        let mut state = TrainState::new(config.clone()).unwrap();
        bench.iter(|| train_step(&mut state, &batch, 1).unwrap())
    });
    let state = TrainState::new(config.clone()).unwrap();
    group.bench_function("generate", |bench| {
        bench.iter(|| generate(&state.params.generator, &batch.young, 1).unwrap())
    });
    group.finish();
}

criterion_group!(benches, step);
criterion_main!(benches);
