//! Fixtures shared by the criterion benches.

use dymixop::{ModelConfig, Tensor};

/// A smooth deterministic field of the given shape; the last axis is space.
pub fn field(shape: &[usize]) -> Tensor<f64> {
    let n = *shape.last().unwrap();
    let total: usize = shape.iter().product();
    let data = (0..total)
        .map(|i| {
            let x = std::f64::consts::TAU * (i % n) as f64 / n as f64;
            0.5 * (x + (i / n) as f64).sin() + 0.2 * (3.0 * x).cos()
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn model_config(width: usize, modes: usize) -> ModelConfig {
    ModelConfig { width, modes: vec![modes], ..ModelConfig::default() }
}
