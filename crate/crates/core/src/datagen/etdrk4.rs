//! Fourth-order exponential time differencing for periodic 1-D equations
//! `v_t = L v + N(v)` with a diagonal linear part and the conservative
//! nonlinearity `N(u) = -(u^2 / 2)_x`, dealiased by the 2/3 rule.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::TruncatedRfft;

/// Points on the contour used to evaluate the phi-functions.
const CONTOUR: usize = 32;

#[derive(Clone, Debug)]
pub struct Pseudospectral {
    n: usize,
    fft: TruncatedRfft<f64>,
    /// `L(k)` per half-spectrum mode.
    pub linear: Vec<f64>,
    /// `-i q / 2` for kept modes, zero above the 2/3 cutoff.
    nonlinear: Vec<Complex64>,
}

impl Pseudospectral {
    /// `linear(q)` gives the symbol at angular wavenumber `q = 2 pi k / length`.
    pub fn new(n: usize, length: f64, linear: impl Fn(f64) -> f64) -> Result<Self> {
        let fft = TruncatedRfft::full(&[n])?;
        let modes = n / 2 + 1;
        let cutoff = n / 3;
        let q = |k: usize| std::f64::consts::TAU * k as f64 / length;
        Ok(Pseudospectral {
            n,
            fft,
            linear: (0..modes).map(|k| linear(q(k))).collect(),
            nonlinear: (0..modes)
                .map(|k| if k <= cutoff { Complex64::new(0.0, -0.5 * q(k)) } else { Complex64::new(0.0, 0.0) })
                .collect(),
        })
    }

    pub fn points(&self) -> usize {
        self.n
    }

    pub fn to_spectral(&self, u: &[f64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.linear.len()];
        self.fft.forward(u, 1, &mut out);
        out
    }

    pub fn to_physical(&self, v: &[Complex64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.fft.inverse(v, 1, &mut out);
        out
    }

    pub fn nonlinear(&self, v: &[Complex64]) -> Vec<Complex64> {
        let u = self.to_physical(v);
        let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
        let mut w = self.to_spectral(&sq);
        for (wk, g) in w.iter_mut().zip(&self.nonlinear) {
            *wk *= g;
        }
        w
    }

    /// Full right-hand side, used by reference integrators.
    pub fn rhs(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = self.nonlinear(v);
        for ((o, vk), l) in out.iter_mut().zip(v).zip(&self.linear) {
            *o += vk * l;
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Etdrk4 {
    pub system: Pseudospectral,
    pub dt: f64,
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
}

impl Etdrk4 {
    /// Coefficients by averaging over a circle of radius 1 around each
    /// `h L(k)`, which avoids cancellation near `L = 0`.
    pub fn new(system: Pseudospectral, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Invalid(format!("solver step must be positive, got {dt}")));
        }
        let roots: Vec<Complex64> = (1..=CONTOUR)
            .map(|j| Complex64::from_polar(1.0, std::f64::consts::PI * (j as f64 - 0.5) / CONTOUR as f64))
            .collect();
        let mean = |f: &dyn Fn(Complex64) -> Complex64, hl: f64| -> f64 {
            roots.iter().map(|&r| f(r + hl)).sum::<Complex64>().re / CONTOUR as f64
        };
        let mut s = Etdrk4 {
            dt,
            e: Vec::new(),
            e2: Vec::new(),
            q: Vec::new(),
            f1: Vec::new(),
            f2: Vec::new(),
            f3: Vec::new(),
            system,
        };
        for &l in &s.system.linear {
            let hl = dt * l;
            s.e.push(hl.exp());
            s.e2.push((hl / 2.0).exp());
            s.q.push(dt * mean(&|z| ((z / 2.0).exp() - 1.0) / z, hl));
            s.f1.push(dt * mean(&|z| (-4.0 - z + z.exp() * (4.0 - 3.0 * z + z * z)) / z.powi(3), hl));
            s.f2.push(dt * mean(&|z| (2.0 + z + z.exp() * (z - 2.0)) / z.powi(3), hl));
            s.f3.push(dt * mean(&|z| (-4.0 - 3.0 * z - z * z + z.exp() * (4.0 - z)) / z.powi(3), hl));
        }
        Ok(s)
    }

    pub fn step(&self, v: &mut [Complex64]) {
        let sys = &self.system;
        let nv = sys.nonlinear(v);
        let a: Vec<Complex64> = (0..v.len()).map(|k| v[k] * self.e2[k] + nv[k] * self.q[k]).collect();
        let na = sys.nonlinear(&a);
        let b: Vec<Complex64> = (0..v.len()).map(|k| v[k] * self.e2[k] + na[k] * self.q[k]).collect();
        let nb = sys.nonlinear(&b);
        let c: Vec<Complex64> = (0..v.len())
            .map(|k| a[k] * self.e2[k] + (nb[k] * 2.0 - nv[k]) * self.q[k])
            .collect();
        let nc = sys.nonlinear(&c);
        for k in 0..v.len() {
            v[k] = v[k] * self.e[k] + nv[k] * self.f1[k] + (na[k] + nb[k]) * (2.0 * self.f2[k]) + nc[k] * self.f3[k];
        }
    }

    /// Steps from `u0`, optionally discarding `burn_in` steps, and keeps
    /// every `stride`-th state until `snapshots` are collected.
    pub fn integrate(
        &self,
        solver: &'static str,
        u0: &[f64],
        burn_in: usize,
        stride: usize,
        snapshots: usize,
    ) -> Result<Vec<f64>> {
        let mut v = self.system.to_spectral(u0);
        let mut out = Vec::with_capacity(snapshots * u0.len());
        let mut step = 0;
        let mut advance = |v: &mut Vec<Complex64>, count: usize| -> Result<()> {
            for _ in 0..count {
                self.step(v);
                step += 1;
                if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(Error::Blowup { solver, step });
                }
            }
            Ok(())
        };
        advance(&mut v, burn_in)?;
        for s in 0..snapshots {
            if s > 0 {
                advance(&mut v, stride)?;
            }
            out.extend(self.system.to_physical(&v));
        }
        Ok(out)
    }
}

/// Classical RK4 on the full right-hand side.
pub fn rk4_step(sys: &Pseudospectral, v: &mut [Complex64], h: f64) {
    let add = |a: &[Complex64], b: &[Complex64], s: f64| -> Vec<Complex64> {
        a.iter().zip(b).map(|(x, y)| x + y * s).collect()
    };
    let k1 = sys.rhs(v);
    let k2 = sys.rhs(&add(v, &k1, h / 2.0));
    let k3 = sys.rhs(&add(v, &k2, h / 2.0));
    let k4 = sys.rhs(&add(v, &k3, h));
    for i in 0..v.len() {
        v[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
    }
}
