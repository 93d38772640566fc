//! Global transform: truncated Fourier-space channel mixing.

use num_complex::Complex;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::{flatten, Cx, TruncatedRfft};
use crate::real::Real;
use crate::tensor::{batched_dims, Kind, Tensor};

/// Shape of a spectral weight tensor: `[retained..., d_out, d_in]`, or
/// `[retained..., d]` when `diag` is set.
pub fn weight_shape(modes: &[usize], d_in: usize, d_out: usize, diag: bool) -> Vec<usize> {
    let mut shape = match modes {
        [m] => vec![*m],
        [m1, m2] => vec![2 * m1, *m2],
        _ => modes.to_vec(),
    };
    if diag {
        shape.push(d_out);
    } else {
        shape.extend([d_out, d_in]);
    }
    shape
}

/// Trainable truncated Fourier coefficients of a global kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralWeights<T> {
    pub modes: Vec<usize>,
    pub d_in: usize,
    pub d_out: usize,
    pub diag: bool,
    pub weights: Tensor<T>,
}

impl<T: Real> SpectralWeights<T> {
    /// Uniform in `[-s, s]` on both parts with `s = 1 / (d_in d_out)`.
    pub fn random(modes: &[usize], d_in: usize, d_out: usize, diag: bool, rng: &mut impl Rng) -> Result<Self> {
        if diag && d_in != d_out {
            return Err(Error::Invalid("diagonal spectral weights need d_in == d_out".into()));
        }
        let shape = weight_shape(modes, d_in, d_out, diag);
        let s = 1.0 / (d_in * d_out) as f64;
        let n: usize = shape.iter().product();
        let data = (0..2 * n).map(|_| T::of(rng.gen_range(-s..=s))).collect();
        Ok(SpectralWeights {
            modes: modes.to_vec(),
            d_in,
            d_out,
            diag,
            weights: Tensor::from_complex_vec(&shape, data)?,
        })
    }

    /// Identity at every retained mode.
    pub fn identity(modes: &[usize], d: usize, diag: bool) -> Self {
        let shape = weight_shape(modes, d, d, diag);
        let mut w = Tensor::complex_zeros(&shape);
        let per_mode = if diag { d } else { d * d };
        let modes_total = w.numel() / per_mode;
        let data = w.data_mut();
        for r in 0..modes_total {
            for j in 0..d {
                let idx = if diag { r * d + j } else { r * d * d + j * d + j };
                data[2 * idx] = T::one();
            }
        }
        SpectralWeights {
            modes: modes.to_vec(),
            d_in: d,
            d_out: d,
            diag,
            weights: w,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite()
    }
}

/// `irfft(W[k] · rfft(c)[k])` over retained modes, for an unbatched
/// `[d_in, N...]` field.
pub fn spectral_multiply<T: Real>(c: &Tensor<T>, w: &SpectralWeights<T>) -> Result<Tensor<T>> {
    let mut shape = vec![1];
    shape.extend_from_slice(c.shape());
    let batched = c.clone().reshape(&shape)?;
    let out = spectral_forward(&batched, &w.weights, &w.modes, w.diag)?.0;
    let shape = out.shape()[1..].to_vec();
    out.reshape(&shape)
}

fn as_complex<T: Real>(data: &[T]) -> Vec<Cx<T>> {
    data.chunks_exact(2).map(|c| Complex::new(c[0], c[1])).collect()
}

struct Dims {
    batch: usize,
    d_in: usize,
    d_out: usize,
    points: usize,
    retained: usize,
}

fn check<T: Real>(x: &Tensor<T>, w: &Tensor<T>, modes: &[usize], diag: bool) -> Result<(Dims, TruncatedRfft<T>)> {
    let (batch, d_in, points) = batched_dims("spectral_multiply", x)?;
    let grid = &x.shape()[2..];
    let t = TruncatedRfft::new(grid, modes)?;
    if w.kind() != Kind::Complex {
        return Err(Error::Invalid("spectral weights must be complex".into()));
    }
    let d_out = if diag { d_in } else { *w.shape().get(w.shape().len().wrapping_sub(2)).unwrap_or(&0) };
    let expected = weight_shape(modes, d_in, d_out, diag);
    if w.shape() != expected.as_slice() {
        return Err(Error::shape("spectral_multiply", x.shape(), w.shape()));
    }
    let retained = t.retained();
    Ok((
        Dims {
            batch,
            d_in,
            d_out,
            points,
            retained,
        },
        t,
    ))
}

/// Batched forward over `[B, d_in, N...]`. Also returns the retained input
/// spectrum (`[B, d_in, R]`) for the weight gradient.
pub(crate) fn spectral_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    modes: &[usize],
    diag: bool,
) -> Result<(Tensor<T>, Vec<Cx<T>>)> {
    let (d, t) = check(x, w, modes, diag)?;
    let wc = as_complex(w.data());
    let zero = Complex::new(T::zero(), T::zero());
    let mut spectrum = vec![zero; d.batch * d.d_in * d.retained];
    let mut out = vec![T::zero(); d.batch * d.d_out * d.points];
    spectrum
        .par_chunks_mut(d.d_in * d.retained)
        .zip(out.par_chunks_mut(d.d_out * d.points))
        .zip(x.data().par_chunks(d.d_in * d.points))
        .for_each(|((spec, o), xb)| {
            t.forward(xb, d.d_in, spec);
            let mixed = mix(spec, &wc, d.d_in, d.d_out, d.retained, diag, false);
            t.inverse(&mixed, d.d_out, o);
        });
    let mut shape = x.shape().to_vec();
    shape[1] = d.d_out;
    Ok((Tensor::from_vec(&shape, out)?, spectrum))
}

/// Per retained mode `r`: `y[j, r] = sum_i W[r, j, i] x[i, r]`, or with the
/// conjugate transpose when `adjoint` is set.
fn mix<T: Real>(
    x: &[Cx<T>],
    w: &[Cx<T>],
    d_in: usize,
    d_out: usize,
    retained: usize,
    diag: bool,
    adjoint: bool,
) -> Vec<Cx<T>> {
    let zero = Complex::new(T::zero(), T::zero());
    let (src_c, dst_c) = if adjoint { (d_out, d_in) } else { (d_in, d_out) };
    let mut y = vec![zero; dst_c * retained];
    let mut col = vec![zero; src_c];
    for r in 0..retained {
        for (i, v) in col.iter_mut().enumerate() {
            *v = x[i * retained + r];
        }
        if diag {
            for j in 0..dst_c {
                let wr = w[r * d_out + j];
                let wr = if adjoint { wr.conj() } else { wr };
                y[j * retained + r] = wr * col[j];
            }
            continue;
        }
        let block = &w[r * d_out * d_in..(r + 1) * d_out * d_in];
        for j in 0..dst_c {
            let mut acc = zero;
            if adjoint {
                for (i, v) in col.iter().enumerate() {
                    acc += block[i * d_in + j].conj() * v;
                }
            } else {
                for (i, v) in col.iter().enumerate() {
                    acc += block[j * d_in + i] * v;
                }
            }
            y[j * retained + r] = acc;
        }
    }
    y
}

/// Gradients of `spectral_forward` given the output adjoint `g`.
pub(crate) fn spectral_backward<T: Real>(
    g: &Tensor<T>,
    x_shape: &[usize],
    spectrum: &[Cx<T>],
    w: &Tensor<T>,
    modes: &[usize],
    diag: bool,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let probe = Tensor::<T>::zeros(x_shape);
    let (d, t) = check(&probe, w, modes, diag)?;
    let wc = as_complex(w.data());
    let zero = Complex::new(T::zero(), T::zero());
    let mut g_spec = vec![zero; d.batch * d.d_out * d.retained];
    let mut dx = vec![T::zero(); d.batch * d.d_in * d.points];
    g_spec
        .par_chunks_mut(d.d_out * d.retained)
        .zip(dx.par_chunks_mut(d.d_in * d.points))
        .zip(g.data().par_chunks(d.d_out * d.points))
        .for_each(|((gs, dxb), gb)| {
            t.forward(gb, d.d_out, gs);
            let back = mix(gs, &wc, d.d_in, d.d_out, d.retained, diag, true);
            t.inverse(&back, d.d_in, dxb);
        });

    let adj = t.adjoint_weights();
    let per_mode = if diag { d.d_out } else { d.d_out * d.d_in };
    let mut dw = vec![zero; d.retained * per_mode];
    dw.par_chunks_mut(per_mode).enumerate().for_each(|(r, block)| {
        for b in 0..d.batch {
            let gs = &g_spec[b * d.d_out * d.retained..];
            let xs = &spectrum[b * d.d_in * d.retained..];
            for j in 0..d.d_out {
                let gj = gs[j * d.retained + r];
                if diag {
                    block[j] += gj * xs[j * d.retained + r].conj();
                } else {
                    for i in 0..d.d_in {
                        block[j * d.d_in + i] += gj * xs[i * d.retained + r].conj();
                    }
                }
            }
        }
        block.iter_mut().for_each(|v| *v = v.scale(adj[r]));
    });
    Ok((
        Tensor::from_vec(x_shape, dx)?,
        Tensor::from_complex_vec(w.shape(), flatten(&dw))?,
    ))
}
