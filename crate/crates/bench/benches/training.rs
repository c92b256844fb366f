use arrowrl_core::grpo::surrogate_gradient;
use arrowrl_core::io::{generate_synthetic, SynthConfig};
use arrowrl_core::policysim::{
    sample_rollouts, score_rollouts, PolicyParams, PolicySet, SpanGrid, TrainConfig, Trainer,
};
use arrowrl_core::GrpoConfig;
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn bench_training(c: &mut Criterion) {
    let data = generate_synthetic(&SynthConfig::default()).unwrap();
    let config = TrainConfig::default();
    let batch: Vec<usize> = (0..config.batch_size).collect();

    c.bench_function("trainer_step_batch16", |bench| {
        bench.iter_batched(
            || Trainer::new(&data, &config, 0.0, 7).unwrap(),
            |mut t| t.step(&batch).unwrap(),
            BatchSize::SmallInput,
        )
    });

    let grid = SpanGrid::new(8).unwrap();
    let policy = PolicyParams::uniform(&grid, 3.0).unwrap();
    let mut rollouts = sample_rollouts(&PolicySet::single(&policy), &data[0], &grid, 8, 0.0, 1).unwrap();
    score_rollouts(&mut rollouts, &data[0], 0.5).unwrap();
    let grpo = GrpoConfig::default();
    c.bench_function("surrogate_gradient_g8", |bench| {
        bench.iter(|| surrogate_gradient(&rollouts.forward, 1.2, &policy, &grpo).unwrap())
    });

    c.bench_function("desk_epoch", |bench| {
        bench.iter_batched(
            || Trainer::new(&data, &config, 0.0, 7).unwrap(),
            |mut t| t.train_epoch().unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_training);
criterion_main!(benches);
