//! Sequential vs rayon-parallel execution of the hot loops. Without the
//! `parallel` feature both variants run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use progsplat::fixtures::{random_cameras, random_scene};
use progsplat::ordering::tally_contributions;
use progsplat::raster::{render_prepared, PreparedScene, RenderOptions, DEFAULT_TOP_K};
use progsplat::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn render_frame(c: &mut Criterion) {
    let scene = random_scene(1, 20_000);
    let prepared = PreparedScene::new(&scene).unwrap();
    let cam = &random_cameras(1, 1, 256, 192)[0];
    let mut group = c.benchmark_group("render_256x192_20k");
    group.sample_size(20);
    for (name, exec) in MODES {
        for top_k in [None, Some(DEFAULT_TOP_K)] {
            let opts = RenderOptions { top_k, exec, ..Default::default() };
            let label = if top_k.is_some() { "top_k" } else { "image" };
            group.bench_function(BenchmarkId::new(name, label), |b| {
                b.iter(|| render_prepared(black_box(&prepared), cam, &opts).unwrap())
            });
        }
    }
    group.finish();
}

fn tally(c: &mut Criterion) {
    let scene = random_scene(2, 10_000);
    let cameras = random_cameras(2, 16, 128, 96);
    let mut group = c.benchmark_group("tally_16_views_10k");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| tally_contributions(black_box(&scene), &cameras, DEFAULT_TOP_K, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, render_frame, tally);
criterion_main!(benches);
