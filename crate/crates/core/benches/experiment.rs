use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use peloton::dilemma::{run_experiment, ExperimentConfig, Scenario, SimConfig};
use peloton::parallel::Execution;

fn experiment(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_experiment");
    group.sample_size(10);
    for n_races in [3usize, 9] {
        let sim = Scenario::StrategyDominant.apply(SimConfig {
            n_skaters: 20,
            seed: 1,
            ..SimConfig::default()
        });
        let cfg = ExperimentConfig::new(sim, n_races);
        for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, n_races), &cfg, |b, cfg| {
                b.iter(|| run_experiment(cfg, exec).expect("experiment runs"))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, experiment);
criterion_main!(benches);
