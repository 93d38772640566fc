//! Radix-2 FFT and the real-input transforms built on it.
//!
//! Real transforms process two signals per complex FFT (`z = x1 + i x2`).
//! The forward transform is unnormalized; every inverse applies `1/N`.
//! Reduction order inside a transform is fixed, so results are bitwise
//! reproducible for a given input regardless of thread count.

use std::sync::Arc;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Kind, Tensor};

pub type Cx<T> = Complex<T>;

pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

pub fn check_power_of_two(extents: &[usize]) -> Result<()> {
    match extents.iter().find(|&&n| !is_power_of_two(n)) {
        Some(&n) => Err(Error::NotPowerOfTwo(n)),
        None => Ok(()),
    }
}

/// Twiddles and bit-reversal table for one transform length.
#[derive(Debug)]
pub struct FftPlan<T> {
    n: usize,
    twiddles: Vec<Cx<T>>,
    reversed: Vec<usize>,
}

impl<T: Real> FftPlan<T> {
    /// Panics unless `n` is a power of two; callers validate extents first.
    pub fn new(n: usize) -> Self {
        assert!(is_power_of_two(n), "fft length {n} is not a power of two");
        let bits = n.trailing_zeros();
        let twiddles = (0..n / 2)
            .map(|j| {
                let theta = -2.0 * std::f64::consts::PI * j as f64 / n as f64;
                Cx::new(T::of(theta.cos()), T::of(theta.sin()))
            })
            .collect();
        let reversed = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        FftPlan {
            n,
            twiddles,
            reversed,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place unnormalized transform; `inverse` flips the exponent sign.
    pub fn process(&self, buf: &mut [Cx<T>], inverse: bool) {
        let n = self.n;
        debug_assert_eq!(buf.len(), n);
        for i in 0..n {
            let j = self.reversed[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for j in 0..half {
                    let w = self.twiddles[j * stride];
                    let w = if inverse { w.conj() } else { w };
                    let u = buf[start + j];
                    let v = buf[start + j + half] * w;
                    buf[start + j] = u + v;
                    buf[start + j + half] = u - v;
                }
            }
            len <<= 1;
        }
    }
}

/// Half-spectrum multiplicity of mode `k` for length `n`: modes other than
/// DC and Nyquist stand for a conjugate pair.
pub fn half_spectrum_multiplicity(k: usize, n: usize) -> usize {
    if k == 0 || 2 * k == n {
        1
    } else {
        2
    }
}

/// First `m` rfft coefficients of `x1` and (optionally) `x2`.
fn rfft_pair<T: Real>(
    plan: &FftPlan<T>,
    x1: &[T],
    x2: Option<&[T]>,
    m: usize,
    out1: &mut [Cx<T>],
    out2: Option<&mut [Cx<T>]>,
    scratch: &mut Vec<Cx<T>>,
) {
    let n = plan.len();
    scratch.clear();
    match x2 {
        Some(x2) => scratch.extend(x1.iter().zip(x2).map(|(&a, &b)| Cx::new(a, b))),
        None => scratch.extend(x1.iter().map(|&a| Cx::new(a, T::zero()))),
    }
    plan.process(scratch, false);
    let half = T::of(0.5);
    match out2 {
        Some(out2) => {
            for k in 0..m {
                let z = scratch[k];
                let zc = scratch[(n - k) % n].conj();
                out1[k] = (z + zc).scale(half);
                let d = (z - zc).scale(half);
                // (z - conj z') / (2i)
                out2[k] = Cx::new(d.im, -d.re);
            }
        }
        None => out1[..m].copy_from_slice(&scratch[..m]),
    }
}

/// Inverse of a (possibly truncated) half spectrum; `scale` multiplies the
/// result. Imaginary parts of DC and Nyquist coefficients are ignored.
fn irfft_pair<T: Real>(
    plan: &FftPlan<T>,
    y1: &[Cx<T>],
    y2: Option<&[Cx<T>]>,
    scale: T,
    out1: &mut [T],
    out2: Option<&mut [T]>,
    scratch: &mut Vec<Cx<T>>,
) {
    let n = plan.len();
    let m = y1.len();
    scratch.clear();
    scratch.resize(n, Cx::new(T::zero(), T::zero()));
    let i = Cx::new(T::zero(), T::one());
    for k in 0..m.min(n / 2 + 1) {
        let a = y1[k];
        let b = y2.map_or(Cx::new(T::zero(), T::zero()), |y| y[k]);
        if k == 0 || 2 * k == n {
            scratch[k] = Cx::new(a.re, b.re);
        } else {
            scratch[k] = a + i * b;
            scratch[n - k] = a.conj() + i * b.conj();
        }
    }
    plan.process(scratch, true);
    for (o, z) in out1.iter_mut().zip(scratch.iter()) {
        *o = z.re * scale;
    }
    if let Some(out2) = out2 {
        for (o, z) in out2.iter_mut().zip(scratch.iter()) {
            *o = z.im * scale;
        }
    }
}

/// Real transform over 1 or 2 trailing spatial axes keeping only a
/// low-mode set.
///
/// In 1-D the retained set is `k < m`. In 2-D it is
/// `k1 in [0, m1) ∪ [N1 - m1, N1)` (both signs on the first axis) by
/// `k2 < m2` (half spectrum on the last axis), stored as a `[2 m1, m2]`
/// block with the negative first-axis wavenumbers in the second half.
#[derive(Clone, Debug)]
pub struct TruncatedRfft<T> {
    grid: Vec<usize>,
    modes: Vec<usize>,
    plans: Vec<Arc<FftPlan<T>>>,
}

impl<T: Real> TruncatedRfft<T> {
    pub fn new(grid: &[usize], modes: &[usize]) -> Result<Self> {
        check_power_of_two(grid)?;
        let fits = match (grid, modes) {
            ([n], [m]) => *m >= 1 && *m <= n / 2 + 1,
            ([n1, n2], [m1, m2]) => *m1 >= 1 && *m1 <= n1 / 2 && *m2 >= 1 && *m2 <= n2 / 2 + 1,
            _ => {
                return Err(Error::Invalid(format!(
                    "spectral transform needs 1 or 2 axes with matching modes, got grid {grid:?} modes {modes:?}"
                )))
            }
        };
        if !fits {
            return Err(Error::ModesExceedGrid {
                modes: modes.to_vec(),
                grid: grid.to_vec(),
            });
        }
        Ok(TruncatedRfft {
            grid: grid.to_vec(),
            modes: modes.to_vec(),
            plans: grid.iter().map(|&n| T::plan(n)).collect(),
        })
    }

    /// Every mode of the half spectrum.
    pub fn full(grid: &[usize]) -> Result<Self> {
        let modes: Vec<usize> = match grid {
            [n] => vec![n / 2 + 1],
            [n1, n2] => vec![n1 / 2, n2 / 2 + 1],
            _ => grid.to_vec(),
        };
        Self::new(grid, &modes)
    }

    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn points(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn retained_shape(&self) -> Vec<usize> {
        match self.modes.as_slice() {
            [m] => vec![*m],
            [m1, m2] => vec![2 * m1, *m2],
            _ => unreachable!(),
        }
    }

    pub fn retained(&self) -> usize {
        self.retained_shape().iter().product()
    }

    /// Signed wavenumbers of each retained mode, in storage order.
    pub fn wavenumbers(&self) -> Vec<Vec<i64>> {
        match (self.grid.as_slice(), self.modes.as_slice()) {
            ([_], [m]) => (0..*m).map(|k| vec![k as i64]).collect(),
            ([_], _) | ([_, _], [_]) => unreachable!(),
            ([_, _], [m1, m2]) => {
                let mut out = Vec::with_capacity(2 * m1 * m2);
                for r in 0..2 * m1 {
                    let k1 = if r < *m1 { r as i64 } else { r as i64 - 2 * *m1 as i64 };
                    for k2 in 0..*m2 {
                        out.push(vec![k1, k2 as i64]);
                    }
                }
                out
            }
            _ => unreachable!(),
        }
    }

    /// Per retained mode, the factor relating the adjoint of `inverse` to
    /// the forward transform: `multiplicity / points`.
    pub fn adjoint_weights(&self) -> Vec<T> {
        let n_last = *self.grid.last().unwrap();
        let m_last = *self.modes.last().unwrap();
        let inv = T::one() / T::of(self.points() as f64);
        let row: Vec<T> = (0..m_last)
            .map(|k| T::of(half_spectrum_multiplicity(k, n_last) as f64) * inv)
            .collect();
        let reps = self.retained() / m_last;
        (0..reps).flat_map(|_| row.iter().copied()).collect()
    }

    fn row_of(&self, r: usize) -> usize {
        let (n1, m1) = (self.grid[0], self.modes[0]);
        if r < m1 {
            r
        } else {
            n1 - 2 * m1 + r
        }
    }

    /// `x` holds `channels` fields of `points` values; `out` receives
    /// `channels * retained` coefficients.
    pub fn forward(&self, x: &[T], channels: usize, out: &mut [Cx<T>]) {
        let p = self.points();
        let r = self.retained();
        debug_assert_eq!(x.len(), channels * p);
        debug_assert_eq!(out.len(), channels * r);
        let mut scratch = Vec::with_capacity(*self.grid.iter().max().unwrap());
        match self.grid.len() {
            1 => {
                let m = self.modes[0];
                let plan = &self.plans[0];
                let mut c = 0;
                while c < channels {
                    let (o1, rest) = out[c * r..].split_at_mut(r);
                    if c + 1 < channels {
                        rfft_pair(
                            plan,
                            &x[c * p..(c + 1) * p],
                            Some(&x[(c + 1) * p..(c + 2) * p]),
                            m,
                            o1,
                            Some(&mut rest[..r]),
                            &mut scratch,
                        );
                    } else {
                        rfft_pair(plan, &x[c * p..(c + 1) * p], None, m, o1, None, &mut scratch);
                    }
                    c += 2;
                }
            }
            _ => {
                let (n1, n2) = (self.grid[0], self.grid[1]);
                let (m1, m2) = (self.modes[0], self.modes[1]);
                let zero = Cx::new(T::zero(), T::zero());
                let mut rows = vec![zero; n1 * m2];
                let mut col = vec![zero; n1];
                for c in 0..channels {
                    let img = &x[c * p..(c + 1) * p];
                    let mut row = 0;
                    while row < n1 {
                        let (a, b) = rows[row * m2..].split_at_mut(m2);
                        if row + 1 < n1 {
                            rfft_pair(
                                &self.plans[1],
                                &img[row * n2..(row + 1) * n2],
                                Some(&img[(row + 1) * n2..(row + 2) * n2]),
                                m2,
                                a,
                                Some(&mut b[..m2]),
                                &mut scratch,
                            );
                        } else {
                            rfft_pair(&self.plans[1], &img[row * n2..], None, m2, a, None, &mut scratch);
                        }
                        row += 2;
                    }
                    let dst = &mut out[c * r..(c + 1) * r];
                    for k2 in 0..m2 {
                        for (i, v) in col.iter_mut().enumerate() {
                            *v = rows[i * m2 + k2];
                        }
                        self.plans[0].process(&mut col, false);
                        for rr in 0..2 * m1 {
                            dst[rr * m2 + k2] = col[self.row_of(rr)];
                        }
                    }
                }
            }
        }
    }

    /// Zero-pads the retained coefficients and inverts with `1/points`
    /// normalization.
    pub fn inverse(&self, coeffs: &[Cx<T>], channels: usize, out: &mut [T]) {
        let p = self.points();
        let r = self.retained();
        debug_assert_eq!(coeffs.len(), channels * r);
        debug_assert_eq!(out.len(), channels * p);
        let mut scratch = Vec::with_capacity(*self.grid.iter().max().unwrap());
        let scale = T::one() / T::of(p as f64);
        match self.grid.len() {
            1 => {
                let plan = &self.plans[0];
                let mut c = 0;
                while c < channels {
                    let (o1, rest) = out[c * p..].split_at_mut(p);
                    let y1 = &coeffs[c * r..(c + 1) * r];
                    if c + 1 < channels {
                        let y2 = &coeffs[(c + 1) * r..(c + 2) * r];
                        irfft_pair(plan, y1, Some(y2), scale, o1, Some(&mut rest[..p]), &mut scratch);
                    } else {
                        irfft_pair(plan, y1, None, scale, o1, None, &mut scratch);
                    }
                    c += 2;
                }
            }
            _ => {
                let (n1, n2) = (self.grid[0], self.grid[1]);
                let (m1, m2) = (self.modes[0], self.modes[1]);
                let zero = Cx::new(T::zero(), T::zero());
                let mut rows = vec![zero; n1 * m2];
                let mut col = vec![zero; n1];
                for c in 0..channels {
                    let src = &coeffs[c * r..(c + 1) * r];
                    for k2 in 0..m2 {
                        col.iter_mut().for_each(|v| *v = zero);
                        for rr in 0..2 * m1 {
                            col[self.row_of(rr)] = src[rr * m2 + k2];
                        }
                        self.plans[0].process(&mut col, true);
                        for (i, v) in col.iter().enumerate() {
                            rows[i * m2 + k2] = *v;
                        }
                    }
                    let img = &mut out[c * p..(c + 1) * p];
                    let mut row = 0;
                    while row < n1 {
                        let (a, b) = img[row * n2..].split_at_mut(n2);
                        if row + 1 < n1 {
                            irfft_pair(
                                &self.plans[1],
                                &rows[row * m2..(row + 1) * m2],
                                Some(&rows[(row + 1) * m2..(row + 2) * m2]),
                                scale,
                                a,
                                Some(&mut b[..n2]),
                                &mut scratch,
                            );
                        } else {
                            irfft_pair(&self.plans[1], &rows[row * m2..(row + 1) * m2], None, scale, a, None, &mut scratch);
                        }
                        row += 2;
                    }
                }
            }
        }
    }
}

fn split_spatial(shape: &[usize], dims: usize) -> Result<(usize, Vec<usize>)> {
    if dims == 0 || dims > 2 || shape.len() < dims {
        return Err(Error::Invalid(format!(
            "cannot transform {dims} trailing axes of shape {shape:?}"
        )));
    }
    let split = shape.len() - dims;
    Ok((shape[..split].iter().product(), shape[split..].to_vec()))
}

/// Half-spectrum transform of the trailing `dims` axes (1 or 2) of a real
/// tensor. Leading axes (batch, channel) pass through. The last axis of the
/// result has `N/2 + 1` entries; in 2-D the first spatial axis keeps all
/// `N1` wavenumbers in FFT order.
pub fn rfft<T: Real>(x: &Tensor<T>, dims: usize) -> Result<Tensor<T>> {
    if x.is_complex() {
        return Err(Error::Invalid("rfft of a complex tensor".into()));
    }
    let (lead, grid) = split_spatial(x.shape(), dims)?;
    let t = TruncatedRfft::full(&grid)?;
    let mut out = vec![Cx::new(T::zero(), T::zero()); lead * t.retained()];
    t.forward(x.data(), lead, &mut out);
    let mut shape = x.shape()[..x.shape().len() - dims].to_vec();
    shape.extend(t.retained_shape());
    Tensor::with_kind(&shape, Kind::Complex, flatten(&out))
}

/// Inverse of [`rfft`] for real output extents `extents`. The last spectral
/// axis may be shorter than `N/2 + 1` (zero-padded truncation).
pub fn irfft<T: Real>(spectrum: &Tensor<T>, extents: &[usize]) -> Result<Tensor<T>> {
    if !spectrum.is_complex() {
        return Err(Error::Invalid("irfft of a real tensor".into()));
    }
    let dims = extents.len();
    let (lead, spec_axes) = split_spatial(spectrum.shape(), dims)?;
    check_power_of_two(extents)?;
    let last = *spec_axes.last().unwrap();
    let n_last = *extents.last().unwrap();
    if last > n_last / 2 + 1 || (dims == 2 && spec_axes[0] != extents[0]) {
        return Err(Error::Invalid(format!(
            "spectrum axes {spec_axes:?} inconsistent with extents {extents:?}"
        )));
    }
    let modes = if dims == 1 { vec![last] } else { vec![extents[0] / 2, last] };
    let t = TruncatedRfft::new(extents, &modes)?;
    let coeffs: Vec<Cx<T>> = spectrum
        .data()
        .chunks_exact(2)
        .map(|c| Cx::new(c[0], c[1]))
        .collect();
    let mut out = vec![T::zero(); lead * t.points()];
    t.inverse(&coeffs, lead, &mut out);
    let mut shape = spectrum.shape()[..spectrum.shape().len() - dims].to_vec();
    shape.extend_from_slice(extents);
    Tensor::from_vec(&shape, out)
}

pub(crate) fn flatten<T: Real>(v: &[Cx<T>]) -> Vec<T> {
    v.iter().flat_map(|c| [c.re, c.im]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold((0.0, 0.0), |(re, im), (j, &v)| {
                    let th = -2.0 * std::f64::consts::PI * (k * j % n) as f64 / n as f64;
                    (re + v * th.cos(), im + v * th.sin())
                })
            })
            .collect()
    }

    #[test]
    fn dc_only_for_constant() {
        let x = Tensor::<f64>::filled(&[8], 2.5);
        let s = rfft(&x, 1).unwrap();
        assert_eq!(s.shape(), &[5]);
        assert!((s.data()[0] - 20.0).abs() < 1e-12);
        assert!(s.data()[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn single_harmonic() {
        let n = 16;
        let x: Vec<f64> = (0..n)
            .map(|j| (2.0 * std::f64::consts::PI * j as f64 / n as f64).cos())
            .collect();
        let s = rfft(&Tensor::from_vec(&[n], x).unwrap(), 1).unwrap();
        let d = s.data();
        assert!((d[2] - 8.0).abs() < 1e-12 && d[3].abs() < 1e-12);
        for k in (0..=n / 2).filter(|&k| k != 1) {
            assert!(d[2 * k].abs() < 1e-12 && d[2 * k + 1].abs() < 1e-12, "mode {k}");
        }
    }

    #[test]
    fn matches_naive_dft_with_odd_channel_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 32;
        let x: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = rfft(&Tensor::from_vec(&[3, n], x.clone()).unwrap(), 1).unwrap();
        for c in 0..3 {
            let oracle = naive_dft(&x[c * n..(c + 1) * n]);
            for k in 0..=n / 2 {
                let got = &s.data()[2 * (c * (n / 2 + 1) + k)..];
                assert!((got[0] - oracle[k].0).abs() < 1e-12);
                assert!((got[1] - oracle[k].1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_spectrum_gives_zero_signal() {
        let s = Tensor::<f64>::complex_zeros(&[9]);
        let x = irfft(&s, &[16]).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inconsistent_extent_is_an_error() {
        let s = Tensor::<f64>::complex_zeros(&[9]);
        assert!(irfft(&s, &[8]).is_err());
        assert!(irfft(&s, &[12]).is_err());
        let x = Tensor::<f64>::zeros(&[12]);
        assert!(matches!(rfft(&x, 1), Err(Error::NotPowerOfTwo(12))));
    }

    #[test]
    fn truncated_band_limited_signal_survives() {
        let n = 32;
        let x: Vec<f64> = (0..n)
            .map(|j| {
                let t = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                0.3 + (3.0 * t).sin() - 0.5 * (5.0 * t).cos()
            })
            .collect();
        let t = TruncatedRfft::<f64>::new(&[n], &[6]).unwrap();
        let mut c = vec![Cx::new(0.0, 0.0); 6];
        t.forward(&x, 1, &mut c);
        let mut y = vec![0.0; n];
        t.inverse(&c, 1, &mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_dim_roundtrip_and_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (n1, n2) = (8, 16);
        let x: Vec<f64> = (0..2 * n1 * n2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xt = Tensor::from_vec(&[2, n1, n2], x.clone()).unwrap();
        let s = rfft(&xt, 2).unwrap();
        assert_eq!(s.shape(), &[2, n1, n2 / 2 + 1]);
        // (k1, k2) = (n1 - 1, 3) against a direct double sum
        let (k1, k2) = (n1 - 1, 3);
        let (mut re, mut im) = (0.0, 0.0);
        for a in 0..n1 {
            for b in 0..n2 {
                let th = -2.0 * std::f64::consts::PI
                    * ((k1 * a) as f64 / n1 as f64 + (k2 * b) as f64 / n2 as f64);
                re += x[a * n2 + b] * th.cos();
                im += x[a * n2 + b] * th.sin();
            }
        }
        let idx = 2 * (k1 * (n2 / 2 + 1) + k2);
        assert!((s.data()[idx] - re).abs() < 1e-11 && (s.data()[idx + 1] - im).abs() < 1e-11);
        let back = irfft(&s, &[n1, n2]).unwrap();
        for (a, b) in back.data().iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn parseval(seed in 0u64..500, log_n in 1u32..9) {
            let n = 1usize << log_n;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = rfft(&Tensor::from_vec(&[n], x.clone()).unwrap(), 1).unwrap();
            let energy: f64 = x.iter().map(|v| v * v).sum();
            let spec: f64 = s.data().chunks_exact(2).enumerate()
                .map(|(k, c)| half_spectrum_multiplicity(k, n) as f64 * (c[0] * c[0] + c[1] * c[1]))
                .sum::<f64>() / n as f64;
            proptest::prop_assert!((energy - spec).abs() <= 1e-10 * energy);
        }

        #[test]
        fn roundtrip(seed in 0u64..500, log_n in 0u32..9) {
            let n = 1usize << log_n;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xt = Tensor::from_vec(&[n], x).unwrap();
            let back = irfft(&rfft(&xt, 1).unwrap(), &[n]).unwrap();
            let scale = xt.max_abs();
            for (a, b) in back.data().iter().zip(xt.data()) {
                proptest::prop_assert!((a - b).abs() <= 1e-12 * scale.max(1.0));
            }
        }
    }
}
