//! Steady Darcy flow `-div(a grad u) = f` on the unit square with `u = 0`
//! on the boundary.
//!
//! Unknowns sit on the `n x n` interior nodes of a vertex-centred grid with
//! spacing `h = 1 / (n + 1)`. Each node exchanges flux with its four
//! neighbours through faces whose coefficient is the harmonic mean of the
//! two nodal values; faces touching the boundary use the node's own value.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct DarcyOperator {
    n: usize,
    /// Face coefficients divided by `h^2`: east and north of each node.
    east: Vec<f64>,
    north: Vec<f64>,
    diag: Vec<f64>,
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

impl DarcyOperator {
    pub fn new(n: usize, a: &[f64]) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::shape("darcy coefficient", &[n, n], &[a.len()]));
        }
        if let Some(bad) = a.iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::Invalid(format!("coefficient must be positive, found {bad}")));
        }
        let h2 = ((n + 1) as f64).powi(2);
        let at = |i: usize, j: usize| a[i * n + j];
        let mut east = vec![0.0; n * n];
        let mut north = vec![0.0; n * n];
        let mut diag = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                let me = at(i, j);
                let face = |other: Option<f64>| other.map_or(me, |o| harmonic(me, o)) * h2;
                let e = face((j + 1 < n).then(|| at(i, j + 1)));
                let w = face((j > 0).then(|| at(i, j - 1)));
                let nn = face((i + 1 < n).then(|| at(i + 1, j)));
                let s = face((i > 0).then(|| at(i - 1, j)));
                east[k] = e;
                north[k] = nn;
                diag[k] = e + w + nn + s;
            }
        }
        Ok(DarcyOperator { n, east, north, diag })
    }

    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                let mut v = self.diag[k] * u[k];
                if j + 1 < n {
                    v -= self.east[k] * u[k + 1];
                }
                if j > 0 {
                    v -= self.east[k - 1] * u[k - 1];
                }
                if i + 1 < n {
                    v -= self.north[k] * u[k + n];
                }
                if i > 0 {
                    v -= self.north[k - n] * u[k - n];
                }
                out[k] = v;
            }
        }
    }

    /// Conjugate gradients from zero until `|r| <= tol |f|`.
    pub fn solve(&self, f: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let size = self.n * self.n;
        let mut u = vec![0.0; size];
        let mut r = f.to_vec();
        let mut p = r.clone();
        let mut ap = vec![0.0; size];
        let target = tol * dot(f, f).sqrt();
        let mut rr = dot(&r, &r);
        for it in 0..=max_iter {
            if rr.sqrt() <= target {
                return Ok((u, it));
            }
            if it == max_iter {
                break;
            }
            self.apply(&p, &mut ap);
            let alpha = rr / dot(&p, &ap);
            for k in 0..size {
                u[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            let next = dot(&r, &r);
            let beta = next / rr;
            rr = next;
            for k in 0..size {
                p[k] = r[k] + beta * p[k];
            }
        }
        Err(Error::NoConvergence {
            iterations: max_iter,
            residual: rr.sqrt() / dot(f, f).sqrt().max(f64::MIN_POSITIVE),
        })
    }
}

/// Solves with `f = 1` for the interior coefficient field `a`.
pub fn solve_unit_source(n: usize, a: &[f64], max_iter: usize) -> Result<Vec<f64>> {
    let op = DarcyOperator::new(n, a)?;
    Ok(op.solve(&vec![1.0; n * n], 1e-10, max_iter)?.0)
}
