use std::path::Path;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ltc_core::{harness, run_known_rho, solve_opt, AuctionConfig, FeedbackMode, InstanceSpec, MetaConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const HORIZON: usize = 10_000;

fn data(rel: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn known_rho(c: &mut Criterion) {
    let spec = InstanceSpec::load(&data("instances/stochastic.json")).unwrap();
    let mut group = c.benchmark_group("known_rho");
    group.throughput(Throughput::Elements(HORIZON as u64));
    for feedback in [FeedbackMode::Full, FeedbackMode::Bandit] {
        let config = MetaConfig::new(HORIZON, 0.05, 0.5, feedback).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(format!("{feedback:?}")), &config, |b, config| {
            b.iter(|| {
                let mut env = spec.environment(HORIZON, ChaCha8Rng::seed_from_u64(0));
                let mut rng = ChaCha8Rng::seed_from_u64(1);
                run_known_rho(config, &mut env, &mut rng).unwrap()
            })
        });
    }
    group.finish();
}

fn auction(c: &mut Criterion) {
    let mut config = AuctionConfig::load(&data("configs/auction_budget.json")).unwrap();
    config.horizon = HORIZON;
    config.seeds = vec![0];
    let mut group = c.benchmark_group("auction");
    group.throughput(Throughput::Elements(HORIZON as u64));
    group.bench_function("budget_second_price", |b| {
        b.iter(|| harness::run_auction(&config, None, Some(1)).unwrap())
    });
    group.finish();
}

fn lp(c: &mut Criterion) {
    let spec = InstanceSpec::load(&data("instances/stochastic.json")).unwrap();
    let means = spec.mean_functions(HORIZON).unwrap();
    c.bench_function("solve_opt", |b| b.iter(|| solve_opt(&means.f_bar, &means.g_bar).unwrap()));
}

criterion_group!(benches, known_rho, auction, lp);
criterion_main!(benches);
