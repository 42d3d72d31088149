use criterion::Criterion;
use lvm_bench::fa_spec;
use lvm_core::zoo::{implied_moments, LisrelDims, ModelSpec, StructuralSpec};
use lvm_core::RngStream;

pub fn bench(c: &mut Criterion) {
    let fa = fa_spec(50, 5, 3);
    c.bench_function("implied_moments/fa50", |b| b.iter(|| implied_moments(&fa).unwrap()));
    let dims = LisrelDims {
        d1: 3,
        d2: 3,
        p1: 10,
        p2: 10,
    };
    let lisrel = ModelSpec::Lisrel(StructuralSpec::random(dims, &mut RngStream::new(5)));
    c.bench_function("implied_moments/lisrel20", |b| {
        b.iter(|| implied_moments(&lisrel).unwrap())
    });
}
