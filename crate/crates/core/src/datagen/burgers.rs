//! Viscous Burgers: `u_t = -u u_x + nu u_xx`, periodic.

use super::etdrk4::{Etdrk4, Pseudospectral};
use crate::error::{Error, Result};

pub fn system(n: usize, length: f64, nu: f64) -> Result<Pseudospectral> {
    if !(nu > 0.0) {
        return Err(Error::Invalid(format!("viscosity must be positive, got {nu}")));
    }
    Pseudospectral::new(n, length, |q| -nu * q * q)
}

pub fn solver(n: usize, length: f64, nu: f64, dt: f64) -> Result<Etdrk4> {
    Etdrk4::new(system(n, length, nu)?, dt)
}

/// `integral u^2 dx` by the periodic rectangle rule.
pub fn energy(u: &[f64], length: f64) -> f64 {
    u.iter().map(|v| v * v).sum::<f64>() * length / u.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::etdrk4::rk4_step;

    #[test]
    fn constant_state_is_preserved() {
        let s = solver(64, 1.0, 0.01, 1e-3).unwrap();
        let traj = s.integrate("burgers", &[0.7; 64], 0, 50, 3).unwrap();
        assert!(traj.iter().all(|v| (v - 0.7).abs() < 1e-14));
    }

    #[test]
    fn energy_never_increases() {
        let n = 128;
        let s = solver(n, 1.0, 0.01, 1e-3).unwrap();
        let u0: Vec<f64> = (0..n)
            .map(|i| {
                let x = std::f64::consts::TAU * i as f64 / n as f64;
                x.sin() + 0.5 * (2.0 * x + 1.0).cos()
            })
            .collect();
        let traj = s.integrate("burgers", &u0, 0, 1, 400).unwrap();
        let e: Vec<f64> = traj.chunks(n).map(|f| energy(f, 1.0)).collect();
        for (i, w) in e.windows(2).enumerate() {
            assert!(w[1] <= w[0], "step {i}: {} > {}", w[1], w[0]);
        }
        assert!(e[399] < 0.9 * e[0]);
    }

    #[test]
    fn single_mode_agrees_with_small_step_rk4() {
        let (n, dt) = (128, 1e-3);
        let s = solver(n, 1.0, 0.01, dt).unwrap();
        let u0: Vec<f64> = (0..n).map(|i| (std::f64::consts::TAU * i as f64 / n as f64).sin()).collect();
        let steps = 50;
        let etd = s.integrate("burgers", &u0, steps, 1, 1).unwrap();
        let mut v = s.system.to_spectral(&u0);
        for _ in 0..steps * 100 {
            rk4_step(&s.system, &mut v, dt / 100.0);
        }
        let rk = s.system.to_physical(&v);
        let num: f64 = etd.iter().zip(&rk).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = rk.iter().map(|b| b * b).sum();
        assert!((num / den).sqrt() <= 1e-6, "{:e}", (num / den).sqrt());
    }

    #[test]
    fn rejects_inviscid() {
        assert!(system(64, 1.0, 0.0).is_err());
    }
}
