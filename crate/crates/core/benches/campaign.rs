//! Campaign throughput: single worker vs all cores on a short batch of
//! closed-loop trials.

use criterion::{criterion_group, criterion_main, Criterion};

use tube_nmpc::dynamics::PhysicalParams;
use tube_nmpc::monte_carlo::{run_campaign, CampaignArms, McConfig};

fn short_campaign() -> McConfig {
    let mut cfg = McConfig::default();
    cfg.n_trials = 4;
    cfg.arms = CampaignArms::TubeOnly;
    cfg.sim.t_final = 0.3;
    cfg
}

fn bench_campaign(c: &mut Criterion) {
    let p0 = PhysicalParams::default();
    let mut group = c.benchmark_group("campaign");
    group.sample_size(10);

    let mut cfg = short_campaign();
    cfg.workers = Some(1);
    group.bench_function("single_worker", |b| {
        b.iter(|| run_campaign(&cfg, &p0).unwrap())
    });

    #[cfg(feature = "parallel")]
    {
        let mut cfg = short_campaign();
        cfg.workers = None;
        group.bench_function("all_cores", |b| {
            b.iter(|| run_campaign(&cfg, &p0).unwrap())
        });
    }

    group.finish();
}

criterion_group!(benches, bench_campaign);
criterion_main!(benches);
