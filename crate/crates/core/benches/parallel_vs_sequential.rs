use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use daovfl::envsim::Environment;
use daovfl::exp::{self, ExperimentConfig};
use daovfl::par::Exec;
use daovfl::rng::{self, Purpose};
use daovfl::streams::make_stream;
use daovfl::vflcore::{Engine, NoiseMode, RoundInputs};
use std::hint::black_box;

const STRATEGIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

/// Ten global rounds from a fresh engine.
fn rounds(cfg: &ExperimentConfig, exec: Exec) {
    let mut engine_cfg = cfg.engine.clone();
    engine_cfg.exec = exec;
    let mut engine = Engine::new(&engine_cfg, &cfg.stream, 0).unwrap();
    let mut stream = make_stream(&cfg.stream).unwrap();
    let mut env = Environment::new(&cfg.env, cfg.sensors(), rng::stream(0, Purpose::Environment)).unwrap();
    let schedule = vec![2; cfg.sensors()];
    for t in 0..10 {
        let batch = stream.next_round();
        let test = stream.test_batch(t);
        let cond = env.draw_round().unwrap();
        let m = engine
            .run_global_round(RoundInputs {
                batch: &batch,
                test: &test,
                conditions: &cond,
                env: &cfg.env,
                weights: &cfg.weights,
                schedule: &schedule,
            })
            .unwrap();
        black_box(m);
    }
}

fn global_rounds(c: &mut Criterion) {
    let mut group = c.benchmark_group("global_rounds");
    group.sample_size(10);
    for mode in [NoiseMode::NoiseExcluded, NoiseMode::Denoised] {
        let mut cfg = ExperimentConfig::default();
        cfg.engine.noise_mode = mode;
        for (name, exec) in STRATEGIES {
            group.bench_with_input(BenchmarkId::new(name, mode.label()), &cfg, |b, cfg| {
                b.iter(|| rounds(cfg, exec))
            });
        }
    }
    group.finish();
}

fn seed_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("seed_sweep");
    group.sample_size(10);
    let mut cfg = ExperimentConfig {
        horizon: 10,
        regret: false,
        ..ExperimentConfig::default()
    };
    cfg.engine.learning_period = 0;
    let seeds: Vec<u64> = (0..4).collect();
    for (name, exec) in STRATEGIES {
        group.bench_function(name, |b| {
            b.iter(|| {
                let dir = tempfile::tempdir().unwrap();
                black_box(exp::sweep(&cfg, &seeds, dir.path(), exec).unwrap());
            })
        });
    }
    group.finish();
}

criterion_group!(benches, global_rounds, seed_sweep);
criterion_main!(benches);
