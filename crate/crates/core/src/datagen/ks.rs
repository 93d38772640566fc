//! Kuramoto-Sivashinsky: `u_t = -u u_x - u_xx - u_xxxx`, periodic.

use super::etdrk4::{Etdrk4, Pseudospectral};
use crate::error::Result;

pub fn system(n: usize, length: f64) -> Result<Pseudospectral> {
    Pseudospectral::new(n, length, |q| q * q - q.powi(4))
}

pub fn solver(n: usize, length: f64, dt: f64) -> Result<Etdrk4> {
    Etdrk4::new(system(n, length)?, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::etdrk4::rk4_step;

    fn smooth(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let x = std::f64::consts::TAU * i as f64 / n as f64;
                (x).cos() * (1.0 + (x).sin()) + 0.3 * (3.0 * x).sin()
            })
            .collect()
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let s = solver(64, 64.0, 0.05).unwrap();
        let traj = s.integrate("ks", &[0.0; 64], 10, 5, 4).unwrap();
        assert!(traj.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_is_conserved() {
        let n = 256;
        let s = solver(n, 64.0, 0.05).unwrap();
        let u0: Vec<f64> = smooth(n).iter().map(|v| v + 0.25).collect();
        let traj = s.integrate("ks", &u0, 0, 100, 11).unwrap();
        let means: Vec<f64> = traj.chunks(n).map(|f| f.iter().sum::<f64>() / n as f64).collect();
        for w in means.windows(2) {
            assert!((w[1] - w[0]).abs() <= 1e-8, "{:e}", w[1] - w[0]);
        }
    }

    #[test]
    fn agrees_with_small_step_rk4() {
        let (n, dt) = (64, 0.05);
        let s = solver(n, 64.0, dt).unwrap();
        let u0 = smooth(n);
        let steps = 20;
        let etd = s.integrate("ks", &u0, steps, 1, 1).unwrap();
        let mut v = s.system.to_spectral(&u0);
        for _ in 0..steps * 100 {
            rk4_step(&s.system, &mut v, dt / 100.0);
        }
        let rk = s.system.to_physical(&v);
        let num: f64 = etd.iter().zip(&rk).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = rk.iter().map(|b| b * b).sum();
        assert!((num / den).sqrt() <= 1e-6, "{:e}", (num / den).sqrt());
    }
}
