use arnsim::{simulate, Workload};
use arnsim_bench::{desk, ptrans};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn synthetic(c: &mut Criterion) {
    let mut g = c.benchmark_group("desk_1ms");
    g.sample_size(10);
    for (routing, traffic) in [("dmodk", "uniform"), ("dmodk", "hs10"), ("arn_afi", "hs10")] {
        let cfg = desk(routing, traffic, 1.0);
        let events = simulate(&cfg, Workload::Synthetic).unwrap().events;
        g.throughput(Throughput::Elements(events));
        g.bench_function(BenchmarkId::new(routing, traffic), |b| {
            b.iter(|| simulate(&cfg, Workload::Synthetic).unwrap())
        });
    }
    g.finish();
}

fn trace_replay(c: &mut Criterion) {
    let mut cfg = desk("arn_afi", "trace", 50.0);
    cfg.warmup_ms = 0.0;
    cfg.hotspot_ms = 0.0;
    let trace = ptrans(128, 20);
    let mut g = c.benchmark_group("trace_replay");
    g.sample_size(10);
    g.bench_function("ptrans_128x20", |b| {
        b.iter(|| simulate(&cfg, Workload::Trace(trace.clone())).unwrap())
    });
    g.finish();
}

criterion_group!(benches, synthetic, trace_replay);
criterion_main!(benches);
