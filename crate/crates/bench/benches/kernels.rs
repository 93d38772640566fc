use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use dymixop::autodiff::Graph;
use dymixop::fft::{irfft, rfft};
use dymixop::tensor::channel_map_batched;
use dymixop::{DyMixOp, LossWeights, Metric, Tensor};
use dymixop_bench::{field, model_config};

fn fft(c: &mut Criterion) {
    let mut group = c.benchmark_group("rfft_roundtrip");
    for n in [64, 256, 1024] {
        let x = field(&[16, n]);
        group.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| {
            b.iter(|| irfft(&rfft(black_box(x), 1).unwrap(), &[n]).unwrap())
        });
    }
    group.finish();
}

fn channel_map(c: &mut Criterion) {
    let mut group = c.benchmark_group("channel_map");
    for width in [16, 32, 64] {
        let x = field(&[16, width, 128]);
        let w = field(&[width, width]);
        let bias = Tensor::zeros(&[width]);
        group.bench_with_input(BenchmarkId::from_parameter(width), &width, |b, _| {
            b.iter(|| channel_map_batched(black_box(&x), &w, Some(&bias)).unwrap())
        });
    }
    group.finish();
}

fn model(c: &mut Criterion) {
    let mut group = c.benchmark_group("model");
    group.sample_size(20);
    for width in [16, 32] {
        let m = DyMixOp::<f64>::new(model_config(width, 16), 0).unwrap();
        let window = field(&[16, 1, 128]);
        group.bench_with_input(BenchmarkId::new("forward", width), &width, |b, _| {
            b.iter(|| m.predict(black_box(&window)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("forward_backward", width), &width, |b, _| {
            let mut work = m.clone();
            b.iter(|| {
                work.params_mut().zero_grad();
                let mut g = Graph::new();
                let w = g.input(window.clone());
                let t = g.input(window.clone());
                let l = g.input(window.clone());
                let loss =
                    dymixop::compute_loss(&mut g, &work, w, t, l, LossWeights::default(), Metric::Mse).unwrap();
                g.backward(loss, work.params_mut()).unwrap();
            })
        });
    }
    group.finish();
}

criterion_group!(benches, fft, channel_map, model);
criterion_main!(benches);
