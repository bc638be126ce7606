use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use prio_market_core::equilibrium::masses_multi;
use prio_market_core::optimizer::{
    capacity_reallocation, menu_grid_defaults, optimal_delay, optimize_single_purchase,
    uniform_menu_optimize, CapacityPolicy, CostModel,
};
use prio_market_core::oracle::simulate_users;
use prio_market_core::welfare::total_welfare_numeric;
use prio_market_core::{CpProfile, DelayProfile, MarketParams};

fn table2_params() -> MarketParams {
    MarketParams {
        base_value: 100.0,
        transport_cost: 500.0,
        residual_rate: 0.5,
        ad_attenuation: 0.5,
        traffic_rate: 5.0,
        access_fee: 33.0,
        cp_count: 6,
        default_delay: 6.0,
    }
}

fn table2_cps() -> Vec<CpProfile> {
    (1..=6).map(|j| CpProfile::new(j, 10.0, 2.27)).collect()
}

fn bench_oracle(c: &mut Criterion) {
    let params = table2_params();
    let cps = table2_cps();
    let delays = DelayProfile::uniform(&params);
    let mut group = c.benchmark_group("oracle");
    group.sample_size(10);
    for &n in &[10_001usize, 100_001] {
        group.bench_with_input(BenchmarkId::new("simulate_users", n), &n, |b, &n| {
            b.iter(|| simulate_users(&params, &cps, &delays, n).unwrap());
        });
    }
    group.finish();
}

fn bench_closed_forms(c: &mut Criterion) {
    let params = table2_params();
    let cps = table2_cps();
    let delays = DelayProfile::uniform(&params);
    c.bench_function("masses_multi", |b| {
        b.iter(|| masses_multi(&params, &cps, &delays).unwrap());
    });
    let cost = CostModel::reciprocal(1.0);
    c.bench_function("optimal_delay", |b| {
        b.iter(|| optimal_delay(&params, &cps[2], &cost).unwrap());
    });
}

fn bench_joint_programs(c: &mut Criterion) {
    let params = table2_params();
    let cps = table2_cps();
    let cost = CostModel::reciprocal(1.0);
    let mut group = c.benchmark_group("joint");
    group.sample_size(10);
    group.bench_function("optimize_single_purchase", |b| {
        b.iter(|| optimize_single_purchase(&params, &cps, &cost, 7).unwrap());
    });
    group.bench_function("uniform_menu", |b| {
        let (d_grid, p_grid) = menu_grid_defaults(&params, &cps, &cost).unwrap();
        b.iter(|| uniform_menu_optimize(&params, &cps, &cost, &d_grid, &p_grid).unwrap());
    });
    group.bench_function("capacity_reallocation", |b| {
        b.iter(|| {
            capacity_reallocation(&params, &cps, 3, 5.0, CapacityPolicy::Proportional).unwrap()
        });
    });
    group.finish();
}

fn bench_welfare(c: &mut Criterion) {
    let params = table2_params();
    let cps = table2_cps();
    let delays = DelayProfile::uniform(&params);
    let mut group = c.benchmark_group("welfare");
    group.sample_size(10);
    group.bench_function("numeric_100001", |b| {
        b.iter(|| total_welfare_numeric(&params, &cps, &delays, 100_001).unwrap());
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_oracle,
    bench_closed_forms,
    bench_joint_programs,
    bench_welfare
);
criterion_main!(benches);
