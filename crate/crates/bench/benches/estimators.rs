use std::hint::black_box;

use aipcw_bench::scenario_one;
use aipcw_core::nuisance::SurvivalForest;
use aipcw_core::{cox_mple, cross_fit, solve_aipcw, Design, ForestParams, NuisanceSpec, Target};
use criterion::{criterion_group, criterion_main, Criterion};

fn cox(c: &mut Criterion) {
    let data = scenario_one(1000, 1);
    c.bench_function("cox_mple n=1000 group+covariates", |b| {
        b.iter(|| cox_mple(black_box(&data), &Design::GroupAndCovariates).unwrap())
    });
}

fn aipcw(c: &mut Criterion) {
    let data = scenario_one(1000, 1);
    let bundle = cross_fit(&data, 5, &NuisanceSpec::Cox, &NuisanceSpec::Cox, 1).unwrap();
    c.bench_function("cross_fit cox-cox n=1000 k=5", |b| {
        b.iter(|| cross_fit(black_box(&data), 5, &NuisanceSpec::Cox, &NuisanceSpec::Cox, 1).unwrap())
    });
    c.bench_function("solve_aipcw n=1000", |b| b.iter(|| solve_aipcw(black_box(&data), &bundle).unwrap()));
}

fn forest(c: &mut Criterion) {
    let data = scenario_one(1000, 1);
    let params = ForestParams {
        n_trees: 50,
        ..ForestParams::default()
    };
    let mut group = c.benchmark_group("forest");
    group.sample_size(10);
    group.bench_function("fit 50 trees n=1000", |b| {
        b.iter(|| SurvivalForest::fit(black_box(&data), Target::Failure, &params, 1).unwrap())
    });
    group.finish();
}

criterion_group!(benches, cox, aipcw, forest);
criterion_main!(benches);
