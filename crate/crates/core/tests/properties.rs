use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dymixop::autodiff::Graph;
use dymixop::io::{decode_dataset, encode_dataset, Checkpoint};
use dymixop::tensor::{concat, hadamard, slice};
use dymixop::{
    generate, train, AdamW, DyMixOp, LossWeights, Metric, ModelConfig, NormStats, Pde, Split, Tensor, TrainConfig,
    TrajectorySpec, Variant,
};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

fn smooth(channels: usize, n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut data = Vec::new();
    for _ in 0..batch * channels {
        let (a, b, p) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(0.0..6.0));
        for i in 0..n {
            let x = std::f64::consts::TAU * i as f64 / n as f64;
            data.push(0.3 + a * (x + p).sin() + b * (2.0 * x).cos());
        }
    }
    Tensor::from_vec(&[batch, channels, n], data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn hadamard_commutes_exactly(seed in 0u64..1000, c in 1usize..4, n in 1usize..17) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[c, n], &mut rng);
        let b = random(&[c, n], &mut rng);
        prop_assert_eq!(hadamard(&a, &b).unwrap(), hadamard(&b, &a).unwrap());
    }

    #[test]
    fn concat_then_slice_is_exact(seed in 0u64..1000, c1 in 1usize..4, c2 in 1usize..4, n in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[2, c1, n], &mut rng);
        let b = random(&[2, c2, n], &mut rng);
        let joined = concat(1, &[&a, &b]).unwrap();
        prop_assert_eq!(slice(1, &joined, 0, c1).unwrap(), a);
        prop_assert_eq!(slice(1, &joined, c1, c2).unwrap(), b);
    }

    #[test]
    fn schedule_is_exact(lr in 1e-5f64..1e-1, gamma in 0.5f64..1.0, step_size in 1usize..10, epoch in 0usize..200) {
        let params = DyMixOp::<f64>::new(ModelConfig { width: 2, modes: vec![2], ..ModelConfig::default() }, 0)
            .unwrap()
            .params()
            .clone();
        let opt = AdamW::new(&params, lr, 0.0, gamma, step_size).unwrap();
        prop_assert_eq!(opt.lr_at(epoch), lr * gamma.powi((epoch / step_size) as i32));
    }

    #[test]
    fn loss_is_non_negative(seed in 0u64..200, relative in any::<bool>(), beta in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ModelConfig { width: 3, modes: vec![4], history: 1, ..ModelConfig::default() };
        let m = DyMixOp::<f64>::new(cfg, seed).unwrap();
        let mut g = Graph::inference();
        let w = g.input(smooth(2, 16, 2, &mut rng));
        let t = g.input(smooth(1, 16, 2, &mut rng));
        let l = g.input(smooth(1, 16, 2, &mut rng));
        let metric = if relative { Metric::RelativeMse } else { Metric::Mse };
        let loss = dymixop::compute_loss(&mut g, &m, w, t, l, LossWeights { alpha: 1.0, beta }, metric).unwrap();
        prop_assert!(g.value(loss).item() >= 0.0);
    }

    #[test]
    fn forward_commutes_with_refinement(seed in 0u64..100, m in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ModelConfig { width: 4, modes: vec![m], ..ModelConfig::default() };
        let model = DyMixOp::<f64>::new(cfg, seed).unwrap();
        let fine = smooth(1, 64, 1, &mut rng);
        let coarse: Vec<f64> = fine.data().iter().step_by(2).copied().collect();
        let a = model.predict(&Tensor::from_vec(&[1, 1, 32], coarse).unwrap()).unwrap();
        let b = model.predict(&fine).unwrap();
        let shared: Vec<f64> = b.data().iter().step_by(2).copied().collect();
        let num: f64 = shared.iter().zip(a.data()).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = a.data().iter().map(|y| y * y).sum();
        prop_assert!((num / den).sqrt() <= 1e-5);
    }
}

#[test]
fn datasets_are_seed_deterministic_and_roundtrip() {
    for pde in [Pde::Ks1d, Pde::Burgers1d, Pde::Darcy2d] {
        let mut spec = TrajectorySpec::defaults(pde);
        spec.trajectories = 3;
        spec.grid = spec.grid.iter().map(|_| 32).collect();
        if pde == Pde::Ks1d {
            spec.snapshots = 4;
            spec.burn_in = 5.0;
        }
        let a = encode_dataset(&generate(&spec).unwrap()).unwrap();
        let b = encode_dataset(&generate(&spec).unwrap()).unwrap();
        assert_eq!(a, b, "{pde:?}");
        let back = decode_dataset(&a).unwrap();
        assert!(back.is_finite());
        assert_eq!(encode_dataset(&back).unwrap(), a);
    }
}

#[test]
fn generation_ignores_thread_count() {
    let mut spec = TrajectorySpec::defaults(Pde::Burgers1d);
    spec.trajectories = 8;
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| encode_dataset(&generate(&spec).unwrap()).unwrap())
    };
    assert_eq!(run(1), run(3));
}

fn short_run(threads: usize) -> (Vec<u64>, Vec<u8>) {
    let mut spec = TrajectorySpec::defaults(Pde::Burgers1d);
    spec.trajectories = 5;
    spec.grid = vec![32];
    let data = generate(&spec).unwrap();
    let stats = NormStats::fit(&data).unwrap();
    let data = data.normalized(&stats).unwrap();
    let tr = data.windows(0, Split::Train).unwrap();
    let te = data.windows(0, Split::Test).unwrap();
    let cfg = ModelConfig { width: 4, modes: vec![4], variant: Variant::Full, ..ModelConfig::default() };
    let mut m = DyMixOp::<f64>::new(cfg, 1).unwrap();
    let mut opt = AdamW::new(m.params(), 1e-3, 1e-4, 0.97, 6).unwrap();
    let tc = TrainConfig { epochs: 3, batch_size: 4, ..TrainConfig::default() };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let hist = pool.install(|| train(&mut m, &mut opt, &tr, Some(&te), &tc, 0, |_, _, _| Ok(())).unwrap());
    let ckpt = Checkpoint {
        config: serde_json::Value::Null,
        model: m.config().clone(),
        epoch: 3,
        norm: Some(stats),
        params: m.params().clone(),
        optimizer: Some(opt),
        history: hist.clone(),
    };
    (hist.iter().map(|r| r.train_loss.to_bits()).collect(), ckpt.encode().unwrap())
}

#[test]
fn training_ignores_thread_count() {
    assert_eq!(short_run(1), short_run(4));
}
