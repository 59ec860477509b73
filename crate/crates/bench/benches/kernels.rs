use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use motf_core::assignment::solve;
use motf_core::association::{PredictorSpec, Tracker, TrackerConfig};
use motf_core::forecaster::{forecast, ForecasterConfig, ForecasterParams, PastSequence};
use motf_core::geometry::BoundingBox;
use motf_core::motion::KalmanConfig;
use motf_core::rng::SeededRng;
use motf_core::simdata::{generate, suite};
use motf_core::Matrix;

fn hungarian(c: &mut Criterion) {
    let mut group = c.benchmark_group("hungarian");
    for n in [8usize, 32, 128] {
        let mut rng = SeededRng::new(n as u64);
        let cost = Matrix::from_vec(n, n, (0..n * n).map(|_| rng.uniform()).collect());
        group.bench_with_input(BenchmarkId::from_parameter(n), &cost, |b, cost| {
            b.iter(|| solve(cost, 0.7).unwrap())
        });
    }
    group.finish();
}

fn tracker(c: &mut Criterion) {
    let scene = generate(&suite("crowded-noisy", None).unwrap()).unwrap();
    let frames = &scene.frames[..50];
    let mut group = c.benchmark_group("tracker_50_frames");
    group.sample_size(20);
    for (name, spec) in [
        ("cv", PredictorSpec::Cv),
        ("kalman", PredictorSpec::Kalman(KalmanConfig::default())),
        (
            "learned_desk",
            PredictorSpec::Learned(Arc::new(ForecasterParams::random(ForecasterConfig::desk(), 1))),
        ),
    ] {
        group.bench_function(name, |b| {
            b.iter(|| {
                let mut t = Tracker::new(TrackerConfig::default(), spec.clone()).unwrap();
                t.run(frames).unwrap()
            })
        });
    }
    group.finish();
}

fn forecaster(c: &mut Criterion) {
    let boxes: Vec<BoundingBox> = (0..10)
        .map(|i| BoundingBox::new(100.0 + 3.0 * i as f64, 200.0, 40.0, 90.0))
        .collect();
    let mut group = c.benchmark_group("forecast");
    for (name, cfg) in [("desk", ForecasterConfig::desk()), ("full", ForecasterConfig::default())] {
        let params = ForecasterParams::random(cfg.clone(), 7);
        let past = PastSequence::from_boxes(&boxes, cfg.p);
        let context = vec![0.1; cfg.embed_dim];
        group.bench_function(name, |b| b.iter(|| forecast(&past, &context, &params).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, hungarian, tracker, forecaster);
criterion_main!(benches);
