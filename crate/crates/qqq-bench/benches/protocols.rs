use criterion::{criterion_group, criterion_main, Criterion};
use qqq_bench::{circuit, closed, protocol};
use qqq_core::protocols::{plan, schedule_unitary};
use qqq_core::{derive, run_protocol};
use std::hint::black_box;

fn circuit_model(c: &mut Criterion) {
    let cp = circuit("circuit_stirap.json");
    c.bench_function("derive_stirap_circuit", |b| b.iter(|| derive(black_box(&cp)).unwrap()));
}

fn stirap(c: &mut Criterion) {
    let mut g = c.benchmark_group("stirap_half");
    g.sample_size(20);
    let pure = closed("fig3a_stirap.json");
    g.bench_function("closed", |b| b.iter(|| run_protocol(black_box(&pure)).unwrap()));
    let open = protocol("fig3a_stirap.json");
    g.bench_function("open", |b| b.iter(|| run_protocol(black_box(&open)).unwrap()));
    g.finish();
}

fn ccz(c: &mut Criterion) {
    let mut g = c.benchmark_group("ccz");
    g.sample_size(10);
    let cfg = closed("fig4_ccz.json");
    let p = plan(&cfg).unwrap();
    let integrator = cfg.run_options().unwrap().integrator;
    g.bench_function("unitary", |b| b.iter(|| schedule_unitary(black_box(&p.schedule), &integrator).unwrap()));
    g.finish();
}

criterion_group!(benches, circuit_model, stirap, ccz);
criterion_main!(benches);
