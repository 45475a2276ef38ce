use std::hint::black_box;

use concept_coref::eval::evaluate_model;
use concept_coref::toolkit::{self, LoadedRun, SyntheticSpec};
use concept_coref::training::{compute_gradients, RunConfig};
use concept_coref::Execution;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn setup() -> (tempfile::TempDir, LoadedRun) {
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = SyntheticSpec {
        seed: 1,
        train_docs: 16,
        test_docs: 16,
        ..SyntheticSpec::default()
    };
    let files = toolkit::synth(&spec, dir.path()).expect("synthetic corpus");
    let run = toolkit::load_run(RunConfig::load(&files.config).expect("config")).expect("run");
    (dir, run)
}

fn gradients(c: &mut Criterion) {
    let (_dir, run) = setup();
    let model = run.init_model().expect("model");
    let docs: Vec<_> = run.corpus("train").expect("train").iter().map(|d| model.prepare(d)).collect();
    let objective = run.objective(run.reference_weights()).expect("objective");
    let mut group = c.benchmark_group("compute_gradients");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(compute_gradients(&model, &docs, &objective, exec).expect("gradients")))
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let (_dir, run) = setup();
    let model = run.init_model().expect("model");
    let docs = run.corpus("test").expect("test");
    let mut group = c.benchmark_group("evaluate_model");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(evaluate_model(&model, docs, exec)))
        });
    }
    group.finish();
}

criterion_group!(benches, gradients, evaluation);
criterion_main!(benches);
