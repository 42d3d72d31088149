use criterion::Criterion;
use lvm_bench::fa_spec;
use lvm_core::estimators::{fit_fa_em, fit_ppca_mle};
use lvm_core::zoo::{sample_lvm, Dataset};
use lvm_core::RngStream;

pub fn bench(c: &mut Criterion) {
    let batch = sample_lvm(&fa_spec(20, 4, 2), 5_000, &mut RngStream::new(11)).unwrap();
    let data = Dataset::new(batch.observations).unwrap();
    c.bench_function("fit_ppca_mle/5000x20", |b| b.iter(|| fit_ppca_mle(&data, 4).unwrap()));
    let mut group = c.benchmark_group("fit_fa_em");
    group.sample_size(10);
    group.bench_function("5000x20/100it", |b| b.iter(|| fit_fa_em(&data, 4, 100, 0.0).unwrap()));
    group.finish();
}
