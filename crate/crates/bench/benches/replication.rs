use std::hint::black_box;

use covadj::sim::{run_replication, true_tau};
use covadj::{ModelId, ModelSpec, RandomizationScheme, SimConfig};
use criterion::{criterion_group, criterion_main, Criterion};

fn replication(c: &mut Criterion) {
    let mut group = c.benchmark_group("replication");
    group.sample_size(20);
    for id in [ModelId::Model1, ModelId::Model3] {
        let model = ModelSpec::builtin(id).unwrap();
        let truth = true_tau(&model);
        let cfg = SimConfig::new(model, RandomizationScheme::stratified_block(6, 0.5).unwrap(), 200, 1, 3);
        let mut rep = 0u64;
        group.bench_function(format!("model {} n=200 p=100", id.label()), |b| {
            b.iter(|| {
                rep += 1;
                run_replication(black_box(&cfg), rep, truth)
            })
        });
    }
    group.finish();
}

criterion_group!(benches, replication);
criterion_main!(benches);
