use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use countreg::engine::{fit_count_sgl, FitControls};
use countreg::models::ModelKind;
use countreg::penalty::{EpsilonPolicy, GroupStructure, PenaltyConfig};
use countreg::sim::{gen_dataset, ScenarioConfig};
use countreg::tuning::{lambda_max_estimate, tune, SearchSpec};
use countreg::Execution;
use std::hint::black_box;

fn controls(execution: Execution) -> FitControls {
    FitControls {
        execution,
        ..FitControls::default()
    }
}

fn bench_fit(c: &mut Criterion) {
    let config = ScenarioConfig {
        n: 300,
        p: 25,
        replicates: 1,
        ..ScenarioConfig::default()
    };
    let (data, _) = gen_dataset(&config, 0).unwrap();
    let kind = ModelKind::DirichletMultinomial;
    let lmax = lambda_max_estimate(kind, &data, 0.5, &FitControls::default()).unwrap();
    let penalty = PenaltyConfig::new(0.2 * lmax, 0.5, GroupStructure::row_groups(data.p(), kind.d_e(data.taxa())), EpsilonPolicy::default()).unwrap();
    let mut group = c.benchmark_group("fit_dm");
    group.sample_size(10);
    for execution in [Execution::Sequential, Execution::Parallel] {
        let ctl = controls(execution);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{execution:?}")), &ctl, |b, ctl| {
            b.iter(|| fit_count_sgl(kind, black_box(&data), &penalty, ctl).unwrap())
        });
    }
    group.finish();
}

fn bench_tune(c: &mut Criterion) {
    let config = ScenarioConfig {
        n: 100,
        p: 25,
        replicates: 1,
        ..ScenarioConfig::default()
    };
    let (data, _) = gen_dataset(&config, 0).unwrap();
    let spec = SearchSpec {
        n_lambda: 8,
        alpha_values: vec![0.3, 0.6, 0.9],
        ..SearchSpec::default()
    };
    let mut group = c.benchmark_group("tune_dm");
    group.sample_size(10);
    for execution in [Execution::Sequential, Execution::Parallel] {
        let ctl = controls(execution);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{execution:?}")), &ctl, |b, ctl| {
            b.iter(|| tune(ModelKind::DirichletMultinomial, black_box(&data), &spec, ctl).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_fit, bench_tune);
criterion_main!(benches);
