//! Gaussian random fields by spectral synthesis.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::fft::irfft;
use crate::tensor::Tensor;

/// Periodic field on an `n1 x n2` grid with spectrum
/// `(4 pi^2 |k|^2 + tau^2)^(-alpha / 2)` and no mean.
pub fn field_2d(n1: usize, n2: usize, alpha: f64, tau: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let m2 = n2 / 2 + 1;
    let mut spec = Vec::with_capacity(2 * n1 * m2);
    for r in 0..n1 {
        let k1 = if r <= n1 / 2 { r as f64 } else { r as f64 - n1 as f64 };
        for k2 in 0..m2 {
            let kk = k1 * k1 + (k2 * k2) as f64;
            let amp = if kk == 0.0 {
                0.0
            } else {
                (4.0 * std::f64::consts::PI.powi(2) * kk + tau * tau).powf(-alpha / 2.0)
            };
            let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            spec.extend([amp * a, amp * b]);
        }
    }
    let spectrum = Tensor::from_complex_vec(&[n1, m2], spec)?;
    let scale = (n1 * n2) as f64;
    Ok(irfft(&spectrum, &[n1, n2])?.into_data().into_iter().map(|v| v * scale).collect())
}

/// Zero-mean 1-D field from the first `modes` harmonics with amplitudes
/// decaying like `k^-decay`, rescaled to root-mean-square `rms`.
pub fn field_1d(n: usize, modes: usize, decay: f64, rms: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut u = vec![0.0; n];
    for k in 1..=modes.min(n / 2 - 1) {
        let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        let amp = (k as f64).powf(-decay);
        for (i, v) in u.iter_mut().enumerate() {
            let x = std::f64::consts::TAU * (k * i) as f64 / n as f64;
            *v += amp * (a * x.cos() + b * x.sin());
        }
    }
    let norm = (u.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if norm > 0.0 {
        u.iter_mut().for_each(|v| *v *= rms / norm);
    }
    u
}
