use std::path::Path;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stcp_core::net::{provision_scenario, run_batch, run_batch_sequential, ScenarioFile};

fn batch(c: &mut Criterion) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/attacks.toml");
    let file = ScenarioFile::load(&path).expect("shipped scenarios parse");
    let seeds: Vec<u64> = (0..32).collect();
    let mut group = c.benchmark_group("scenario-batch");
    group.sample_size(10);
    for name in ["msg3-replay", "mitm-exponential-substitution"] {
        let spec = file.scenarios.iter().find(|s| s.name == name).expect("scenario present");
        let topo = provision_scenario(spec).expect("provision");
        group.bench_with_input(BenchmarkId::new("sequential", name), &seeds, |b, seeds| {
            b.iter(|| run_batch_sequential(&topo, spec, seeds).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("batch", name), &seeds, |b, seeds| {
            b.iter(|| run_batch(&topo, spec, seeds).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batch);
criterion_main!(benches);
