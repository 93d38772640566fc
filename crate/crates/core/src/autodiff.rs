//! Eager reverse-mode differentiation over the operations the operator
//! uses.
//!
//! Values are computed as nodes are recorded. [`Graph::backward`] walks the
//! tape in reverse and accumulates parameter gradients into a
//! [`ParamStore`]. Complex parameters are differentiated as independent
//! `(re, im)` pairs, so a gradient tensor has the same interleaved layout
//! as its parameter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Cx;
use crate::real::Real;
use crate::spectral::{spectral_backward, spectral_forward};
use crate::tensor::{self, batched_dims, mix_channels, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub id: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

/// Named parameters in canonical (sorted by id) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn insert(&mut self, id: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<()> {
        let id = id.into();
        match self.params.binary_search_by(|p| p.id.as_str().cmp(&id)) {
            Ok(_) => Err(Error::Invalid(format!("duplicate parameter id `{id}`"))),
            Err(pos) => {
                let grad = value.zeros_like();
                self.params.insert(
                    pos,
                    Parameter {
                        id,
                        value,
                        grad,
                        trainable,
                    },
                );
                Ok(())
            }
        }
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.params.binary_search_by(|p| p.id.as_str().cmp(id)).ok()
    }

    pub fn get(&self, id: &str) -> Result<&Parameter<T>> {
        self.index_of(id)
            .map(|i| &self.params[i])
            .ok_or_else(|| Error::UnknownParameter(id.to_string()))
    }

    pub fn get_mut(&mut self, id: &str) -> Result<&mut Parameter<T>> {
        match self.index_of(id) {
            Some(i) => Ok(&mut self.params[i]),
            None => Err(Error::UnknownParameter(id.to_string())),
        }
    }

    pub fn value(&self, id: &str) -> Result<&Tensor<T>> {
        Ok(&self.get(id)?.value)
    }

    pub fn set_value(&mut self, id: &str, value: Tensor<T>) -> Result<()> {
        let p = self.get_mut(id)?;
        if p.value.shape() != value.shape() || p.value.kind() != value.kind() {
            return Err(Error::shape("set_value", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of real scalars (complex entries count twice).
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Tanh approximation of GELU.
    Gelu,
    Tanh,
}

const GELU_A: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_B: f64 = 0.044_715;

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Gelu => {
                let u = T::of(GELU_A) * (x + T::of(GELU_B) * x * x * x);
                T::of(0.5) * x * (T::one() + u.tanh())
            }
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Gelu => {
                let u = T::of(GELU_A) * (x + T::of(GELU_B) * x * x * x);
                let t = u.tanh();
                let du = T::of(GELU_A) * (T::one() + T::of(3.0 * GELU_B) * x * x);
                T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
            }
            Activation::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Invalid(format!("unknown activation `{other}`"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Gelu => "gelu",
            Activation::Tanh => "tanh",
        })
    }
}

/// Handle to a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(usize),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, T),
    ScaleBy(Var, Var),
    ChannelMap {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Spectral {
        x: Var,
        w: Var,
        modes: Vec<usize>,
        diag: bool,
        spectrum: Vec<Cx<T>>,
    },
    Activation(Var, Activation),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Mse(Var, Var),
    RelativeMse(Var, Var),
    MeanAll(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// One forward pass worth of recorded operations.
///
/// Batched fields are `[B, C, N...]`; channel operations act on axis 1.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    record: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            record: true,
        }
    }

    /// A graph that only evaluates: nothing requires gradients and no
    /// backward caches are kept.
    pub fn inference() -> Self {
        Graph {
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad: needs_grad && self.record,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: &str) -> Result<Var> {
        let idx = store.index_of(id).ok_or_else(|| Error::UnknownParameter(id.to_string()))?;
        let p = &store.params[idx];
        Ok(self.push(p.value.clone(), Op::Param(idx), p.trainable))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::add(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).is_complex() || self.value(b).is_complex() {
            return Err(Error::Invalid("graph hadamard is real-only".into()));
        }
        let v = tensor::hadamard(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Hadamard(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, alpha: T) -> Var {
        let v = tensor::scale(alpha, self.value(a));
        let ng = self.needs(a);
        self.push(v, Op::Scale(a, alpha), ng)
    }

    /// Multiply `a` by the single-element node `s`.
    pub fn scale_by(&mut self, s: Var, a: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::shape("scale_by", self.value(s).shape(), &[1]));
        }
        let alpha = self.value(s).item();
        let v = tensor::scale(alpha, self.value(a));
        let ng = self.needs(s) || self.needs(a);
        Ok(self.push(v, Op::ScaleBy(s, a), ng))
    }

    pub fn channel_map(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let v = tensor::channel_map_batched(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(v, Op::ChannelMap { x, w, b }, ng))
    }

    pub fn spectral(&mut self, x: Var, w: Var, modes: &[usize], diag: bool) -> Result<Var> {
        let (v, spectrum) = spectral_forward(self.value(x), self.value(w), modes, diag)?;
        let ng = self.needs(x) || self.needs(w);
        let spectrum = if ng && self.record { spectrum } else { Vec::new() };
        Ok(self.push(
            v,
            Op::Spectral {
                x,
                w,
                modes: modes.to_vec(),
                diag,
                spectrum,
            },
            ng,
        ))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        let v = self.value(x).map(|t| act.apply(t));
        let ng = self.needs(x);
        self.push(v, Op::Activation(x, act), ng)
    }

    /// Concatenate along the channel axis (axis 1).
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = tensor::concat(1, &tensors)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(v, Op::Concat(parts.to_vec()), ng))
    }

    /// Channels `start..start + len` (axis 1).
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = tensor::slice(1, self.value(x), start, len)?;
        let ng = self.needs(x);
        Ok(self.push(v, Op::Slice { x, start }, ng))
    }

    /// Mean of squared differences over every element.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = tensor::sub(self.value(pred), self.value(target))?;
        let n = T::of(d.data().len() as f64);
        let v = d.data().iter().map(|&e| e * e).sum::<T>() / n;
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(v), Op::Mse(pred, target), ng))
    }

    /// Per sample (axis 0) `sum(err^2) / sum(target^2)`, averaged over the
    /// batch.
    pub fn relative_mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let p = self.value(pred);
        let t = self.value(target);
        if p.shape() != t.shape() {
            return Err(Error::shape("relative_mse", p.shape(), t.shape()));
        }
        let batch = p.shape()[0];
        let per = p.numel() / batch;
        let mut total = T::zero();
        for b in 0..batch {
            let (num, den) = rel_terms(&p.data()[b * per..(b + 1) * per], &t.data()[b * per..(b + 1) * per]);
            if den == T::zero() {
                return Err(Error::ZeroNormTarget(b));
            }
            total += num / den;
        }
        let v = total / T::of(batch as f64);
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(v), Op::RelativeMse(pred, target), ng))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = tensor::mean_all(self.value(x));
        let ng = self.needs(x);
        self.push(Tensor::scalar(v), Op::MeanAll(x), ng)
    }

    /// Accumulates `d loss / d param` into `store` for every trainable
    /// parameter reachable from `loss`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 || lv.is_complex() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        if !self.needs(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(lv.map(|_| T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(idx) => {
                    let p = &mut store.params[*idx];
                    if p.trainable {
                        p.grad.add_assign(&g)?;
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, || g.clone())?;
                    self.accumulate(&mut grads, *b, || g.clone())?;
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, || g.clone())?;
                    self.accumulate(&mut grads, *b, || g.map(|x| -x))?;
                }
                Op::Hadamard(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    self.accumulate(&mut grads, *a, || tensor::hadamard(&g, vb).unwrap())?;
                    self.accumulate(&mut grads, *b, || tensor::hadamard(&g, va).unwrap())?;
                }
                Op::Scale(a, alpha) => {
                    self.accumulate(&mut grads, *a, || tensor::scale(*alpha, &g))?;
                }
                Op::ScaleBy(s, a) => {
                    let alpha = self.value(*s).item();
                    let va = self.value(*a);
                    self.accumulate(&mut grads, *s, || {
                        let dot = g.data().iter().zip(va.data()).map(|(&x, &y)| x * y).sum();
                        Tensor::scalar(dot)
                    })?;
                    self.accumulate(&mut grads, *a, || tensor::scale(alpha, &g))?;
                }
                Op::ChannelMap { x, w, b } => {
                    let (vx, vw) = (self.value(*x), self.value(*w));
                    self.accumulate(&mut grads, *x, || channel_map_dx(&g, vw, vx.shape()))?;
                    self.accumulate(&mut grads, *w, || channel_map_dw(&g, vx, vw.shape()))?;
                    if let Some(b) = b {
                        self.accumulate(&mut grads, *b, || channel_map_db(&g))?;
                    }
                }
                Op::Spectral {
                    x,
                    w,
                    modes,
                    diag,
                    spectrum,
                } => {
                    let (dx, dw) = spectral_backward(
                        &g,
                        self.value(*x).shape(),
                        spectrum,
                        self.value(*w),
                        modes,
                        *diag,
                    )?;
                    self.accumulate(&mut grads, *x, || dx)?;
                    self.accumulate(&mut grads, *w, || dw)?;
                }
                Op::Activation(x, act) => {
                    let vx = self.value(*x);
                    self.accumulate(&mut grads, *x, || {
                        let data = g
                            .data()
                            .iter()
                            .zip(vx.data())
                            .map(|(&gi, &xi)| gi * act.derivative(xi))
                            .collect();
                        Tensor::from_vec(vx.shape(), data).unwrap()
                    })?;
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let len = self.value(p).shape()[1];
                        self.accumulate(&mut grads, p, || tensor::slice(1, &g, start, len).unwrap())?;
                        start += len;
                    }
                }
                Op::Slice { x, start } => {
                    let vx = self.value(*x);
                    let start = *start;
                    self.accumulate(&mut grads, *x, || slice_adjoint(&g, vx.shape(), start))?;
                }
                Op::Mse(p, t) => {
                    let (vp, vt) = (self.value(*p), self.value(*t));
                    let c = T::of(2.0) * g.item() / T::of(vp.data().len() as f64);
                    let dp = Tensor::from_vec(
                        vp.shape(),
                        vp.data().iter().zip(vt.data()).map(|(&a, &b)| c * (a - b)).collect(),
                    )?;
                    if self.needs(*t) {
                        let dt = dp.map(|x| -x);
                        self.accumulate(&mut grads, *t, || dt)?;
                    }
                    self.accumulate(&mut grads, *p, || dp)?;
                }
                Op::RelativeMse(p, t) => {
                    let (dp, dt) = relative_mse_grads(self.value(*p), self.value(*t), g.item());
                    self.accumulate(&mut grads, *p, || dp)?;
                    self.accumulate(&mut grads, *t, || dt)?;
                }
                Op::MeanAll(x) => {
                    let vx = self.value(*x);
                    let c = g.item() / T::of(vx.data().len() as f64);
                    self.accumulate(&mut grads, *x, || vx.map(|_| c))?;
                }
            }
        }
        Ok(())
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor<T>>],
        v: Var,
        make: impl FnOnce() -> Tensor<T>,
    ) -> Result<()> {
        if !self.needs(v) {
            return Ok(());
        }
        let g = make();
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g)?,
            slot => *slot = Some(g),
        }
        Ok(())
    }
}

fn rel_terms<T: Real>(p: &[T], t: &[T]) -> (T, T) {
    let mut num = T::zero();
    let mut den = T::zero();
    for (&a, &b) in p.iter().zip(t) {
        num += (a - b) * (a - b);
        den += b * b;
    }
    (num, den)
}

fn relative_mse_grads<T: Real>(p: &Tensor<T>, t: &Tensor<T>, g: T) -> (Tensor<T>, Tensor<T>) {
    let batch = p.shape()[0];
    let per = p.numel() / batch;
    let mut dp = p.zeros_like();
    let mut dt = p.zeros_like();
    let inv_b = T::one() / T::of(batch as f64);
    let two = T::of(2.0);
    for b in 0..batch {
        let range = b * per..(b + 1) * per;
        let (num, den) = rel_terms(&p.data()[range.clone()], &t.data()[range.clone()]);
        for k in range {
            let e = p.data()[k] - t.data()[k];
            dp.data_mut()[k] = g * inv_b * two * e / den;
            dt.data_mut()[k] = g * inv_b * (-two * e / den - two * t.data()[k] * num / (den * den));
        }
    }
    (dp, dt)
}

fn channel_map_dx<T: Real>(g: &Tensor<T>, w: &Tensor<T>, x_shape: &[usize]) -> Tensor<T> {
    let (c_out, c_in) = (w.shape()[0], w.shape()[1]);
    let points: usize = x_shape[2..].iter().product();
    let mut dx = vec![T::zero(); x_shape.iter().product()];
    dx.par_chunks_mut(c_in * points)
        .zip(g.data().par_chunks(c_out * points))
        .for_each(|(d, gb)| mix_channels(d, gb, w.data(), c_in, c_out, points, true));
    Tensor::from_vec(x_shape, dx).unwrap()
}

fn channel_map_dw<T: Real>(g: &Tensor<T>, x: &Tensor<T>, w_shape: &[usize]) -> Tensor<T> {
    let (batch, c_in, points) = batched_dims("channel_map", x).unwrap();
    let c_out = w_shape[0];
    let mut dw = vec![T::zero(); c_out * c_in];
    dw.par_chunks_mut(c_in).enumerate().for_each(|(j, row)| {
        for b in 0..batch {
            let gj = &g.data()[(b * c_out + j) * points..(b * c_out + j + 1) * points];
            for (i, acc) in row.iter_mut().enumerate() {
                let xi = &x.data()[(b * c_in + i) * points..(b * c_in + i + 1) * points];
                let mut s = T::zero();
                for (&a, &c) in gj.iter().zip(xi) {
                    s += a * c;
                }
                *acc += s;
            }
        }
    });
    Tensor::from_vec(w_shape, dw).unwrap()
}

fn channel_map_db<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let (batch, c_out, points) = batched_dims("channel_map", g).unwrap();
    let mut db = vec![T::zero(); c_out];
    for b in 0..batch {
        for (j, acc) in db.iter_mut().enumerate() {
            *acc += g.data()[(b * c_out + j) * points..(b * c_out + j + 1) * points]
                .iter()
                .copied()
                .sum::<T>();
        }
    }
    Tensor::from_vec(&[c_out], db).unwrap()
}

fn slice_adjoint<T: Real>(g: &Tensor<T>, x_shape: &[usize], start: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(x_shape);
    let outer = x_shape[0];
    let inner: usize = x_shape[2..].iter().product();
    let len = g.shape()[1];
    let block = x_shape[1] * inner;
    for o in 0..outer {
        let dst = o * block + start * inner;
        out.data_mut()[dst..dst + len * inner]
            .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
    }
    out
}
