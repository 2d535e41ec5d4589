use bugsize_bench::simulated_campaign;
use bugsize_core::sampler::{run_chain, FitContext};
use bugsize_core::{ModelConfig, SamplerConfig};
use criterion::{criterion_group, criterion_main, Criterion};

fn sweeps(c: &mut Criterion) {
    let campaign = simulated_campaign(1);
    let ctx = FitContext::new(&campaign, &ModelConfig::default()).unwrap();
    let sampler = SamplerConfig {
        chains: 1,
        ..SamplerConfig::new(200)
    };
    c.bench_function("chain_200_sweeps_m400", |b| {
        b.iter(|| run_chain(&ctx, &sampler, 0).unwrap())
    });
}

criterion_group!(benches, sweeps);
criterion_main!(benches);
