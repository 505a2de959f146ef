use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tla_core::anchors::fit_anchors;
use tla_core::eval::{evaluate, GroundTruth, Prediction};
use tla_core::model::bundled_config;
use tla_core::postprocess::nms;
use tla_core::tensor::{conv2d, conv2d_naive};
use tla_core::{analyze, build_model, BBox, ConvSpec, Detection, Shape, Tensor, WeightSource};

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0f32..1.0))
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = c.benchmark_group("conv3x3");
    for ch in [16usize, 64] {
        let spec = ConvSpec::new(ch, ch, 3).pad_hw(1, 1);
        let x = random(Shape::new(1, ch, 40, 40), &mut rng);
        let w = random(spec.weight_shape(), &mut rng);
        g.bench_with_input(BenchmarkId::new("fast", ch), &ch, |b, _| b.iter(|| conv2d(&x, &spec, &w, None).unwrap()));
        g.bench_with_input(BenchmarkId::new("naive", ch), &ch, |b, _| {
            b.iter(|| conv2d_naive(&x, &spec, &w, None).unwrap())
        });
    }
    g.finish();
}

fn cost(c: &mut Criterion) {
    let cfg = bundled_config("yolo-tla-s").unwrap();
    c.bench_function("analyze yolo-tla-s 640", |b| b.iter(|| analyze(&cfg, 640, 640).unwrap()));
}

fn forward(c: &mut Criterion) {
    let model = build_model(bundled_config("yolov5s").unwrap(), WeightSource::Seeded(0)).unwrap();
    let x = random(Shape::new(1, 3, 128, 128), &mut ChaCha8Rng::seed_from_u64(1));
    let mut g = c.benchmark_group("forward");
    g.sample_size(10);
    g.bench_function("yolov5s 128", |b| b.iter(|| model.forward(&x).unwrap()));
    g.finish();
}

fn post(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dets: Vec<Detection> = (0..2000)
        .map(|_| {
            let (x, y) = (rng.random_range(0.0..600.0f32), rng.random_range(0.0..600.0f32));
            let (w, h) = (rng.random_range(5.0..80.0f32), rng.random_range(5.0..80.0f32));
            Detection {
                bbox: BBox::new(x, y, x + w, y + h),
                class_id: rng.random_range(0..10),
                confidence: rng.random(),
            }
        })
        .collect();
    c.bench_function("nms 2000", |b| b.iter(|| nms(&dets, 0.45)));

    let gts: Vec<GroundTruth> = dets
        .iter()
        .step_by(4)
        .enumerate()
        .map(|(i, d)| GroundTruth { image_id: (i % 20) as u64, category: d.class_id as u64, bbox: d.bbox })
        .collect();
    let preds: Vec<Prediction> = dets
        .iter()
        .enumerate()
        .map(|(i, d)| Prediction {
            image_id: ((i / 4) % 20) as u64,
            category: d.class_id as u64,
            bbox: d.bbox.translate(rng.random_range(-3.0..3.0), 0.0),
            score: d.confidence,
        })
        .collect();
    c.bench_function("evaluate 2000 preds", |b| b.iter(|| evaluate(&preds, &gts, &BTreeMap::new())));

    let boxes: Vec<[f32; 2]> = dets.iter().map(|d| [d.bbox.width(), d.bbox.height()]).collect();
    c.bench_function("fit 12 anchors to 2000 boxes", |b| b.iter(|| fit_anchors(&boxes, 12, 0).unwrap()));
}

criterion_group!(benches, conv, cost, forward, post);
criterion_main!(benches);
