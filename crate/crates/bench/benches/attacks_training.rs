use criterion::{criterion_group, criterion_main, Criterion};
use fairrobust::rng::stream;
use fairrobust::{continue_trades, eval_classwise, pgd_attack, AttackConfig, Batch, Method, TrainConfig};
use fairrobust_bench::{benchmark_data, benchmark_mlp};
use std::hint::black_box;

fn attack(c: &mut Criterion) {
    let model = benchmark_mlp();
    let data = benchmark_data(1);
    let cfg = AttackConfig::pgd20_linf(0.4);
    c.bench_function("pgd20_linf_single", |b| {
        b.iter(|| {
            let mut rng = stream(1, 0);
            pgd_attack(&model, black_box(data.row(0)), data.label(0), &cfg, &mut rng).unwrap()
        })
    });
}

fn evaluation(c: &mut Criterion) {
    let model = benchmark_mlp();
    let data = benchmark_data(300);
    let cfg = AttackConfig::pgd20_linf(0.4);
    let mut g = c.benchmark_group("eval");
    g.sample_size(10);
    g.bench_function("eval_classwise_1200", |b| b.iter(|| eval_classwise(&model, &data, &cfg, 2).unwrap()));
    g.finish();
}

fn training(c: &mut Criterion) {
    let data = benchmark_data(250);
    let cfg = TrainConfig { momentum: 0.9, ..TrainConfig::new(Method::Trades, 1, 0.01, Batch::Size(128), 4) };
    let attack = AttackConfig::linf_steps(0.4, 10);
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("trades_epoch_1000", |b| b.iter(|| continue_trades(benchmark_mlp(), &data, &cfg, &attack).unwrap()));
    g.finish();
}

criterion_group!(benches, attack, evaluation, training);
criterion_main!(benches);
