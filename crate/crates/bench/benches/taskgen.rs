use criterion::{criterion_group, criterion_main, Criterion};
use mdlsel_core::rng::stream;
use mdlsel_core::taskgen::{make_dataset, render_glyph, GlyphStyle, SyntheticDigits};
use mdlsel_core::TaskConfig;

fn generation(c: &mut Criterion) {
    let style = GlyphStyle::default();
    c.bench_function("render_glyph_32", |b| {
        let mut rng = stream(0, 0, "bench-glyph");
        b.iter(|| render_glyph(7, 32, &style, &mut rng))
    });
    let source = SyntheticDigits::new(16);
    for (name, cfg) in [
        ("dataset_a_256", TaskConfig::scenario_a(0.25).at_side(16)),
        ("dataset_b_256", TaskConfig::scenario_b(0.15, 32).at_side(16)),
    ] {
        c.bench_function(name, |b| b.iter(|| make_dataset(&cfg, 256, 5, &source).unwrap()));
    }
}

criterion_group!(benches, generation);
criterion_main!(benches);
