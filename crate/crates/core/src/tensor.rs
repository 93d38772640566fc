//! Dense row-major tensors and the per-point channel algebra.
//!
//! Layout is channel-first: an unbatched field is `[C, N...]`, a batch is
//! `[B, C, N...]`. Complex tensors interleave `(re, im)` so their backing
//! buffer holds `2 * numel` scalars.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Real,
    Complex,
}

impl Kind {
    fn width(self) -> usize {
        match self {
            Kind::Real => 1,
            Kind::Complex => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    kind: Kind,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            kind: Kind::Real,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn complex_zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            kind: Kind::Complex,
            data: vec![T::zero(); 2 * shape.iter().product::<usize>()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            kind: Kind::Real,
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::with_kind(shape, Kind::Real, data)
    }

    /// Complex tensor from interleaved `(re, im)` pairs.
    pub fn from_complex_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::with_kind(shape, Kind::Complex, data)
    }

    pub fn with_kind(shape: &[usize], kind: Kind, data: Vec<T>) -> Result<Self> {
        let expected = kind.width() * shape.iter().product::<usize>();
        if shape.contains(&0) {
            return Err(Error::Invalid(format!("zero extent in shape {shape:?}")));
        }
        if data.len() != expected {
            return Err(Error::Invalid(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            kind,
            data,
        })
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&x| T::of(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn is_complex(&self) -> bool {
        self.kind == Kind::Complex
    }

    /// Number of logical elements (complex entries count once).
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            kind: self.kind,
            data: vec![T::zero(); self.data.len()],
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            kind: self.kind,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum_all(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        same_layout("add_assign", self, other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }
}

fn same_layout<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape != b.shape || a.kind != b.kind {
        return Err(Error::shape(op, &a.shape, &b.shape));
    }
    Ok(())
}

fn zip_with<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    same_layout(op, a, b)?;
    Ok(Tensor {
        shape: a.shape.clone(),
        kind: a.kind,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    })
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn scale<T: Real>(alpha: T, x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| alpha * v)
}

/// `alpha * x + y`.
pub fn axpy<T: Real>(alpha: T, x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("axpy", x, y, |a, b| alpha * a + b)
}

/// Element-wise product. Complex operands multiply as complex numbers.
pub fn hadamard<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_layout("hadamard", a, b)?;
    match a.kind {
        Kind::Real => zip_with("hadamard", a, b, |x, y| x * y),
        Kind::Complex => {
            let data = a
                .data
                .chunks_exact(2)
                .zip(b.data.chunks_exact(2))
                .flat_map(|(p, q)| [p[0] * q[0] - p[1] * q[1], p[0] * q[1] + p[1] * q[0]])
                .collect();
            Ok(Tensor {
                shape: a.shape.clone(),
                kind: Kind::Complex,
                data,
            })
        }
    }
}

pub fn mean_all<T: Real>(x: &Tensor<T>) -> T {
    x.sum_all() / T::of(x.data.len() as f64)
}

/// Stack along `axis`; every other extent must agree.
pub fn concat<T: Real>(axis: usize, parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Invalid("concat of zero tensors".into()))?;
    if axis >= first.shape.len() {
        return Err(Error::Invalid(format!("concat axis {axis} out of range")));
    }
    for p in parts {
        let ok = p.kind == first.kind
            && p.shape.len() == first.shape.len()
            && p.shape
                .iter()
                .zip(&first.shape)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::shape("concat", &first.shape, &p.shape));
        }
    }
    let outer: usize = first.shape[..axis].iter().product();
    let inner = first.kind.width() * first.shape[axis + 1..].iter().product::<usize>();
    let total_axis: usize = parts.iter().map(|p| p.shape[axis]).sum();
    let mut shape = first.shape.clone();
    shape[axis] = total_axis;
    let mut data = Vec::with_capacity(outer * total_axis * inner);
    for o in 0..outer {
        for p in parts {
            let block = p.shape[axis] * inner;
            data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
        }
    }
    Ok(Tensor {
        shape,
        kind: first.kind,
        data,
    })
}

/// Entries `start..start + len` along `axis`.
pub fn slice<T: Real>(axis: usize, x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    if axis >= x.shape.len() || len == 0 || start + len > x.shape[axis] {
        return Err(Error::Invalid(format!(
            "slice {start}..{} on axis {axis} of shape {:?}",
            start + len,
            x.shape
        )));
    }
    let outer: usize = x.shape[..axis].iter().product();
    let inner = x.kind.width() * x.shape[axis + 1..].iter().product::<usize>();
    let block = x.shape[axis] * inner;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * block + start * inner;
        data.extend_from_slice(&x.data[base..base + len * inner]);
    }
    let mut shape = x.shape.clone();
    shape[axis] = len;
    Ok(Tensor {
        shape,
        kind: x.kind,
        data,
    })
}

pub fn concat_channels<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    concat(0, parts)
}

pub fn slice_channels<T: Real>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    slice(0, x, start, len)
}

/// Per-grid-point affine map over channels of an unbatched `[c_in, N...]`
/// field: `out[j, x] = sum_i w[j, i] * x[i, x] + b[j]`.
pub fn channel_map<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    let batched = x.clone().reshape(&shape)?;
    let out = channel_map_batched(&batched, w, b)?;
    let out_shape = out.shape()[1..].to_vec();
    out.reshape(&out_shape)
}

/// Batched variant over `[B, c_in, N...]`.
pub fn channel_map_batched<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (batch, c_in, points) = batched_dims("channel_map", x)?;
    if w.shape().len() != 2 || w.shape()[1] != c_in || w.is_complex() {
        return Err(Error::shape("channel_map", x.shape(), w.shape()));
    }
    let c_out = w.shape()[0];
    if let Some(b) = b {
        if b.shape() != [c_out] {
            return Err(Error::shape("channel_map bias", w.shape(), b.shape()));
        }
    }
    let mut shape = x.shape().to_vec();
    shape[1] = c_out;
    let mut out = vec![T::zero(); batch * c_out * points];
    out.par_chunks_mut(c_out * points)
        .zip(x.data().par_chunks(c_in * points))
        .for_each(|(o, xb)| {
            mix_channels(o, xb, w.data(), c_out, c_in, points, false);
            if let Some(b) = b {
                for (row, &bj) in o.chunks_exact_mut(points).zip(b.data()) {
                    row.iter_mut().for_each(|v| *v += bj);
                }
            }
        });
    Tensor::from_vec(&shape, out)
}

/// `out[j, :] (+)= sum_i w[j, i] * x[i, :]` for one sample, or with the
/// transposed matrix when `transpose` is set (`w` is then `[c_in, c_out]`
/// read column-wise).
pub(crate) fn mix_channels<T: Real>(
    out: &mut [T],
    x: &[T],
    w: &[T],
    c_out: usize,
    c_in: usize,
    points: usize,
    transpose: bool,
) {
    for j in 0..c_out {
        let row = &mut out[j * points..(j + 1) * points];
        for i in 0..c_in {
            let wij = if transpose { w[i * c_out + j] } else { w[j * c_in + i] };
            if wij == T::zero() {
                continue;
            }
            let src = &x[i * points..(i + 1) * points];
            for (o, &s) in row.iter_mut().zip(src) {
                *o += wij * s;
            }
        }
    }
}

/// `(batch, channels, points)` of a `[B, C, N...]` tensor.
pub(crate) fn batched_dims<T: Real>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if x.shape().len() < 3 {
        return Err(Error::shape(op, x.shape(), &[0, 0, 0]));
    }
    let points = x.shape()[2..].iter().product();
    Ok((x.shape()[0], x.shape()[1], points))
}
