use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use stagegan_bench::{camera_frame, conv5_map, mock_pipeline};
use stagegan_core::backends::{Generator, MockGenerator, MockSpec};
use stagegan_core::encode::{channel_average, partition_regions};
use stagegan_core::pipeline::fixture::Scene;
use stagegan_core::styles::sample_standard_normal;
use stagegan_core::{preprocess_frame, LatentVector, Mode, PipelineConfig, StyleStack};

fn encode(c: &mut Criterion) {
    let fmap = conv5_map();
    let regions = partition_regions(16, 16).unwrap();
    c.bench_function("channel_average/conv5_full", |b| {
        b.iter(|| channel_average(black_box(&fmap), None).unwrap())
    });
    c.bench_function("channel_average/conv5_fine", |b| {
        b.iter(|| channel_average(black_box(&fmap), Some(&regions.fine)).unwrap())
    });
}

fn preprocess(c: &mut Criterion) {
    let frame = camera_frame();
    c.bench_function("preprocess/640x480_to_426x320", |b| {
        b.iter(|| preprocess_frame(black_box(&frame), (426, 320), (4, 3)).unwrap())
    });
}

fn synthesize(c: &mut Criterion) {
    let mut gen = MockGenerator::new(&MockSpec::with_seed(1));
    let w = gen
        .map(&LatentVector::new(sample_standard_normal(3, 512)).unwrap())
        .unwrap();
    let stack = StyleStack::repeated(&w, gen.num_ws());
    c.bench_function("mock_synthesize/256", |b| b.iter(|| gen.synthesize(black_box(&stack)).unwrap()));
}

fn tick(c: &mut Criterion) {
    let scene = Scene::default();
    let frames: Vec<_> = (0..8).map(|i| scene.frame(i).unwrap()).collect();
    let keypoints: Vec<_> = (0..8).map(|i| scene.keypoints(i)).collect();
    for mode in [Mode::StyleMix, Mode::ConstCorrupt, Mode::Affine] {
        let mut p = mock_pipeline(PipelineConfig {
            mode,
            ..Default::default()
        });
        let mut i = 0;
        c.bench_function(&format!("tick/{}", mode.as_str()), |b| {
            b.iter(|| {
                let k = i % frames.len();
                i += 1;
                p.tick(frames[k].clone(), Some(&keypoints[k])).unwrap()
            })
        });
    }
}

criterion_group!(benches, encode, preprocess, synthesize, tick);
criterion_main!(benches);
