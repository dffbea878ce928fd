use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mdlsel_bench::random_lines;
use mdlsel_core::envelope::lower_envelope;

fn envelope(c: &mut Criterion) {
    let mut group = c.benchmark_group("lower_envelope");
    for count in [16usize, 256, 4096] {
        let lines = random_lines(count, 3);
        group.bench_with_input(BenchmarkId::from_parameter(count), &lines, |b, lines| {
            b.iter(|| lower_envelope(lines))
        });
    }
    group.finish();
}

criterion_group!(benches, envelope);
criterion_main!(benches);
