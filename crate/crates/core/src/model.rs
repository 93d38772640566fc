//! The operator: local-global mixing transforms, mixing layers, the
//! dynamics-informed stack, and the lift/project sandwich around it.
//!
//! ```text
//! window ─ lift ─ proj ─> c0 ─ stack ─> c ─ proj_inv ─ lift_inv ─> prediction
//!                          └────────────── proj_inv ─ lift_inv ─> consistency
//! ```
//!
//! Every local map is a kernel-size-1 channel map, so all spatial coupling
//! happens in the truncated spectral weights and the model can be applied
//! at any power-of-two resolution that holds the retained modes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::fft::check_power_of_two;
use crate::real::Real;
use crate::spectral::{weight_shape, SpectralWeights};
use crate::tensor::Tensor;

/// Architecture ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    /// Nonlinear transforms keep only their local map.
    LocalOnly,
    /// Nonlinear transforms keep only their global map.
    GlobalOnly,
    /// No nonlinear transforms.
    LinearOnly,
    /// No linear transforms.
    NonlinearOnly,
    /// Every layer reads the initial latent state.
    ParallelOnly,
    /// Plain activated residual chain without the weighted outer sum.
    HierarchicalOnly,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::LocalOnly,
        Variant::GlobalOnly,
        Variant::LinearOnly,
        Variant::NonlinearOnly,
        Variant::ParallelOnly,
        Variant::HierarchicalOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::LocalOnly => "local-only",
            Variant::GlobalOnly => "global-only",
            Variant::LinearOnly => "linear-only",
            Variant::NonlinearOnly => "nonlinear-only",
            Variant::ParallelOnly => "parallel-only",
            Variant::HierarchicalOnly => "hierarchical-only",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown variant `{s}`")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channels per input frame.
    pub in_channels: usize,
    /// Channels of the predicted field.
    pub out_channels: usize,
    /// Frames of history beyond the current one.
    pub history: usize,
    /// Reduced latent width.
    pub width: usize,
    pub depth: usize,
    pub n_linear: usize,
    pub n_nonlinear: usize,
    /// Retained modes per spatial axis (one entry per axis).
    pub modes: Vec<usize>,
    pub activation: Activation,
    pub final_activation: bool,
    pub spectral_diag: bool,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 1,
            out_channels: 1,
            history: 0,
            width: 16,
            depth: 2,
            n_linear: 1,
            n_nonlinear: 1,
            modes: vec![16],
            activation: Activation::Gelu,
            final_activation: false,
            spectral_diag: false,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    /// Lifted width, fixed at twice the reduced width.
    pub fn lift_width(&self) -> usize {
        2 * self.width
    }

    pub fn window_channels(&self) -> usize {
        self.in_channels * (self.history + 1)
    }

    pub fn spatial_dims(&self) -> usize {
        self.modes.len()
    }

    pub fn effective_linear(&self) -> usize {
        if self.variant == Variant::NonlinearOnly {
            0
        } else {
            self.n_linear
        }
    }

    pub fn effective_nonlinear(&self) -> usize {
        if self.variant == Variant::LinearOnly {
            0
        } else {
            self.n_nonlinear
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.in_channels == 0 || self.out_channels == 0 || self.width == 0 {
            return bad("channel counts must be positive");
        }
        if self.depth == 0 {
            return bad("depth must be at least 1");
        }
        if self.modes.is_empty() || self.modes.len() > 2 || self.modes.contains(&0) {
            return bad("modes need one positive entry per spatial axis (1 or 2 axes)");
        }
        if self.effective_linear() + self.effective_nonlinear() == 0 {
            return bad("a layer needs at least one transform");
        }
        Ok(())
    }

    /// Grid extents the model can run on: powers of two holding at least
    /// twice the retained modes on every axis.
    pub fn check_grid(&self, grid: &[usize]) -> Result<()> {
        if grid.len() != self.modes.len() {
            return Err(Error::Invalid(format!(
                "model has {} spatial axes, grid {grid:?}",
                self.modes.len()
            )));
        }
        check_power_of_two(grid)?;
        if grid.iter().zip(&self.modes).any(|(&n, &m)| n < 2 * m) {
            return Err(Error::ModesExceedGrid {
                modes: self.modes.clone(),
                grid: grid.to_vec(),
            });
        }
        Ok(())
    }

    /// Number of real scalars: every channel map contributes
    /// `d_out * d_in + d_out`, every global map `2 * retained * d_m^2`
    /// (`2 * retained * d_m` when diagonal), plus one step size per layer.
    /// In 2-D a global map retains a `2 m1 x m2` block.
    pub fn parameter_count(&self) -> usize {
        let map = |i: usize, o: usize| o * i + o;
        let d = self.width;
        let retained: usize = weight_shape(&self.modes, 1, 1, true).iter().product();
        let global = 2 * retained * if self.spectral_diag { d } else { d * d };
        let (local_nl, global_nl) = match self.variant {
            Variant::LocalOnly => (true, false),
            Variant::GlobalOnly => (false, true),
            _ => (true, true),
        };
        let per_nonlinear = if local_nl { map(d, d) } else { 0 } + if global_nl { global } else { 0 };
        let mut per_layer = self.effective_linear() * map(d, d) + self.effective_nonlinear() * per_nonlinear + 1;
        if self.effective_nonlinear() > 0 {
            per_layer += map(d, d);
        }
        let dv = self.lift_width();
        map(self.window_channels(), dv) + map(dv, d) + map(d, dv) + map(dv, self.out_channels) + self.depth * per_layer
    }
}

/// How a transform combines its local and global factors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformKind {
    /// Local map only; the global factor is the constant-one field.
    Linear,
    /// `local(c) ⊙ global(c)`.
    Nonlinear,
    NonlinearLocal,
    NonlinearGlobal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LgmTransform {
    pub kind: TransformKind,
    pub prefix: String,
}

impl LgmTransform {
    fn has_local(&self) -> bool {
        self.kind != TransformKind::NonlinearGlobal
    }

    fn has_global(&self) -> bool {
        matches!(self.kind, TransformKind::Nonlinear | TransformKind::NonlinearGlobal)
    }

    pub fn local_weight(&self) -> String {
        format!("{}.local.weight", self.prefix)
    }

    pub fn local_bias(&self) -> String {
        format!("{}.local.bias", self.prefix)
    }

    pub fn global_weight(&self) -> String {
        format!("{}.global.weight", self.prefix)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LgmLayer {
    pub linear: Vec<LgmTransform>,
    pub nonlinear: Vec<LgmTransform>,
    pub prefix: String,
}

impl LgmLayer {
    pub fn mix_weight(&self) -> String {
        format!("{}.mix.weight", self.prefix)
    }

    pub fn mix_bias(&self) -> String {
        format!("{}.mix.bias", self.prefix)
    }

    pub fn step(&self) -> String {
        format!("{}.dt", self.prefix)
    }
}

pub const LIFT: &str = "lift";
pub const PROJ: &str = "proj";
pub const PROJ_INV: &str = "proj_inv";
pub const LIFT_INV: &str = "lift_inv";

#[derive(Clone, Debug)]
pub struct DyMixOp<T> {
    config: ModelConfig,
    layers: Vec<LgmLayer>,
    params: ParamStore<T>,
}

fn layout(config: &ModelConfig) -> Vec<LgmLayer> {
    let nl_kind = match config.variant {
        Variant::LocalOnly => TransformKind::NonlinearLocal,
        Variant::GlobalOnly => TransformKind::NonlinearGlobal,
        _ => TransformKind::Nonlinear,
    };
    (0..config.depth)
        .map(|l| {
            let prefix = format!("layers.{l}");
            LgmLayer {
                linear: (0..config.effective_linear())
                    .map(|a| LgmTransform {
                        kind: TransformKind::Linear,
                        prefix: format!("{prefix}.linear.{a}"),
                    })
                    .collect(),
                nonlinear: (0..config.effective_nonlinear())
                    .map(|b| LgmTransform {
                        kind: nl_kind,
                        prefix: format!("{prefix}.nonlinear.{b}"),
                    })
                    .collect(),
                prefix,
            }
        })
        .collect()
}

/// Shapes of every parameter the configuration needs, with complex flag.
fn expected_params(config: &ModelConfig, layers: &[LgmLayer]) -> Vec<(String, Vec<usize>, bool)> {
    let mut out = Vec::new();
    let mut map = |name: &str, i: usize, o: usize| {
        out.push((format!("{name}.weight"), vec![o, i], false));
        out.push((format!("{name}.bias"), vec![o], false));
    };
    let (dv, d) = (config.lift_width(), config.width);
    map(LIFT, config.window_channels(), dv);
    map(PROJ, dv, d);
    map(PROJ_INV, d, dv);
    map(LIFT_INV, dv, config.out_channels);
    for layer in layers {
        for t in layer.linear.iter().chain(&layer.nonlinear) {
            if t.has_local() {
                map(&format!("{}.local", t.prefix), d, d);
            }
        }
        if !layer.nonlinear.is_empty() {
            map(&format!("{}.mix", layer.prefix), d, d);
        }
    }
    for layer in layers {
        for t in &layer.nonlinear {
            if t.has_global() {
                out.push((
                    t.global_weight(),
                    weight_shape(&config.modes, d, d, config.spectral_diag),
                    true,
                ));
            }
        }
        out.push((layer.step(), vec![1], false));
    }
    out
}

impl<T: Real> DyMixOp<T> {
    /// Randomly initialized model. Channel maps draw weights and biases
    /// uniformly in `±sqrt(1 / d_in)`, spectral weights in
    /// `±1 / (d_in d_out)`, and every step size starts at `1 / depth`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layers = layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (id, shape, complex) in expected_params(&config, &layers) {
            let value = if complex {
                let d = config.width;
                SpectralWeights::random(&config.modes, d, d, config.spectral_diag, &mut rng)?.weights
            } else if id.ends_with(".dt") {
                Tensor::scalar(T::of(1.0 / config.depth as f64))
            } else {
                let fan_in = if id.ends_with(".weight") { shape[1] } else { fan_in_of(&config, &id) };
                let bound = (1.0 / fan_in as f64).sqrt();
                let n: usize = shape.iter().product();
                Tensor::from_vec(&shape, (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect())?
            };
            params.insert(id, value, true)?;
        }
        Ok(DyMixOp { config, layers, params })
    }

    /// Rebuilds a model from stored parameters, checking that exactly the
    /// expected ids and shapes are present.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let layers = layout(&config);
        let expected = expected_params(&config, &layers);
        if expected.len() != params.len() {
            return Err(Error::Invalid(format!(
                "expected {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (id, shape, complex) in &expected {
            let p = params.get(id)?;
            if p.value.shape() != shape.as_slice() || p.value.is_complex() != *complex {
                return Err(Error::shape("from_params", shape, p.value.shape()));
            }
        }
        Ok(DyMixOp { config, layers, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LgmLayer] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    fn map(&self, g: &mut Graph<T>, name: &str, x: Var) -> Result<Var> {
        let w = g.param(&self.params, &format!("{name}.weight"))?;
        let b = g.param(&self.params, &format!("{name}.bias"))?;
        g.channel_map(x, w, Some(b))
    }

    /// `local(c) ⊙ global(c)`, or the single factor a transform keeps.
    pub fn transform(&self, g: &mut Graph<T>, t: &LgmTransform, c: Var) -> Result<Var> {
        let local = if t.has_local() {
            Some(self.map(g, &format!("{}.local", t.prefix), c)?)
        } else {
            None
        };
        let global = if t.has_global() {
            let w = g.param(&self.params, &t.global_weight())?;
            Some(g.spectral(c, w, &self.config.modes, self.config.spectral_diag)?)
        } else {
            None
        };
        match (local, global) {
            (Some(l), Some(gl)) => g.hadamard(l, gl),
            (Some(l), None) => Ok(l),
            (None, Some(gl)) => Ok(gl),
            (None, None) => unreachable!(),
        }
    }

    /// Sum of linear transforms plus the mixing map applied to the sum of
    /// nonlinear transforms.
    pub fn layer(&self, g: &mut Graph<T>, layer: &LgmLayer, c: Var) -> Result<Var> {
        let mut linear = None;
        for t in &layer.linear {
            let y = self.transform(g, t, c)?;
            linear = Some(match linear {
                Some(acc) => g.add(acc, y)?,
                None => y,
            });
        }
        let mut nonlinear = None;
        for t in &layer.nonlinear {
            let y = self.transform(g, t, c)?;
            nonlinear = Some(match nonlinear {
                Some(acc) => g.add(acc, y)?,
                None => y,
            });
        }
        let mixed = match nonlinear {
            Some(n) => Some(self.map(g, &format!("{}.mix", layer.prefix), n)?),
            None => None,
        };
        match (linear, mixed) {
            (Some(a), Some(b)) => g.add(a, b),
            (Some(a), None) => Ok(a),
            (None, Some(b)) => Ok(b),
            (None, None) => unreachable!(),
        }
    }

    /// `c0 + sum_l dt_l F_l(c_{l-1})` with `c_l = σ(c_{l-1} + F_l(c_{l-1}))`
    /// for the intermediate states (no activation before the first layer).
    pub fn stack(&self, g: &mut Graph<T>, c0: Var) -> Result<Var> {
        let act = self.config.activation;
        let depth = self.layers.len();
        let out = match self.config.variant {
            Variant::HierarchicalOnly => {
                let mut c = c0;
                for (l, layer) in self.layers.iter().enumerate() {
                    let f = self.layer(g, layer, c)?;
                    c = g.add(c, f)?;
                    if l + 1 < depth {
                        c = g.activation(c, act);
                    }
                }
                c
            }
            variant => {
                let parallel = variant == Variant::ParallelOnly;
                let mut c = c0;
                let mut acc: Option<Var> = None;
                for (l, layer) in self.layers.iter().enumerate() {
                    let f = self.layer(g, layer, c)?;
                    let dt = g.param(&self.params, &layer.step())?;
                    let step = g.scale_by(dt, f)?;
                    acc = Some(match acc {
                        Some(a) => g.add(a, step)?,
                        None => step,
                    });
                    if !parallel && l + 1 < depth {
                        let next = g.add(c, f)?;
                        c = g.activation(next, act);
                    }
                }
                g.add(c0, acc.expect("depth >= 1"))?
            }
        };
        Ok(if self.config.final_activation {
            g.activation(out, act)
        } else {
            out
        })
    }

    fn check_window(&self, g: &Graph<T>, window: Var) -> Result<()> {
        let shape = g.value(window).shape();
        if shape.len() != 2 + self.config.spatial_dims() || shape[1] != self.config.window_channels() {
            let mut expected = vec![shape.first().copied().unwrap_or(1), self.config.window_channels()];
            expected.extend(std::iter::repeat_n(0, self.config.spatial_dims()));
            return Err(Error::shape("model window", &expected, shape));
        }
        self.config.check_grid(&shape[2..])
    }

    /// Lift then project the window: the initial reduced latent state.
    pub fn encode(&self, g: &mut Graph<T>, window: Var) -> Result<Var> {
        self.check_window(g, window)?;
        let v = self.map(g, LIFT, window)?;
        self.map(g, PROJ, v)
    }

    pub fn decode(&self, g: &mut Graph<T>, c: Var) -> Result<Var> {
        let v = self.map(g, PROJ_INV, c)?;
        self.map(g, LIFT_INV, v)
    }

    /// Prediction of the next frame from a `[B, window_channels, N...]`
    /// batch.
    pub fn forward(&self, g: &mut Graph<T>, window: Var) -> Result<Var> {
        let c0 = self.encode(g, window)?;
        let c = self.stack(g, c0)?;
        self.decode(g, c)
    }

    /// The lift/project sandwich without the latent dynamics.
    pub fn consistency(&self, g: &mut Graph<T>, window: Var) -> Result<Var> {
        let c0 = self.encode(g, window)?;
        self.decode(g, c0)
    }

    /// Both outputs from one shared encoding: `(prediction, consistency)`.
    pub fn forward_with_consistency(&self, g: &mut Graph<T>, window: Var) -> Result<(Var, Var)> {
        let c0 = self.encode(g, window)?;
        let cons = self.decode(g, c0)?;
        let c = self.stack(g, c0)?;
        let pred = self.decode(g, c)?;
        Ok((pred, cons))
    }

    /// Inference on a batch tensor.
    pub fn predict(&self, window: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::inference();
        let w = g.input(window.clone());
        let out = self.forward(&mut g, w)?;
        Ok(g.value(out).clone())
    }

    pub fn reconstruct(&self, window: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::inference();
        let w = g.input(window.clone());
        let out = self.consistency(&mut g, w)?;
        Ok(g.value(out).clone())
    }
}

fn fan_in_of(config: &ModelConfig, bias_id: &str) -> usize {
    let (dv, d) = (config.lift_width(), config.width);
    match bias_id.strip_suffix(".bias").unwrap_or(bias_id) {
        LIFT => config.window_channels(),
        PROJ | LIFT_INV => dv,
        PROJ_INV => d,
        _ => d,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::rfft;
    use crate::spectral::spectral_multiply;
    use crate::tensor::{self, channel_map, hadamard};

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            in_channels: 1,
            out_channels: 1,
            history: 1,
            width: 2,
            depth: 3,
            n_linear: 1,
            n_nonlinear: 1,
            modes: vec![3],
            variant,
            ..ModelConfig::default()
        }
    }

    fn wave(n: usize, shift: f64) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let x = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                0.6 * (x + shift).sin() + 0.3 * (2.0 * x - shift).cos() + 0.1
            })
            .collect()
    }

    fn window(cfg: &ModelConfig, n: usize, batch: usize) -> Tensor<f64> {
        let c = cfg.window_channels();
        let mut data = Vec::new();
        for b in 0..batch * c {
            data.extend(wave(n, 0.37 * b as f64));
        }
        Tensor::from_vec(&[batch, c, n], data).unwrap()
    }

    // Straight-line transcription on unbatched tensors.
    struct Oracle<'a> {
        m: &'a DyMixOp<f64>,
    }

    impl Oracle<'_> {
        fn map(&self, name: &str, x: &Tensor<f64>) -> Tensor<f64> {
            let p = self.m.params();
            channel_map(
                x,
                p.value(&format!("{name}.weight")).unwrap(),
                Some(p.value(&format!("{name}.bias")).unwrap()),
            )
            .unwrap()
        }

        fn f(&self, l: usize, c: &Tensor<f64>) -> Tensor<f64> {
            let cfg = self.m.config();
            let lin = self.map(&format!("layers.{l}.linear.0.local"), c);
            let w = SpectralWeights {
                modes: cfg.modes.clone(),
                d_in: cfg.width,
                d_out: cfg.width,
                diag: false,
                weights: self.m.params().value(&format!("layers.{l}.nonlinear.0.global.weight")).unwrap().clone(),
            };
            let nl = hadamard(
                &self.map(&format!("layers.{l}.nonlinear.0.local"), c),
                &spectral_multiply(c, &w).unwrap(),
            )
            .unwrap();
            tensor::add(&lin, &self.map(&format!("layers.{l}.mix"), &nl)).unwrap()
        }

        fn dt(&self, l: usize) -> f64 {
            self.m.params().value(&format!("layers.{l}.dt")).unwrap().item()
        }

        fn gelu(x: &Tensor<f64>) -> Tensor<f64> {
            x.map(|v| 0.5 * v * (1.0 + (0.797_884_560_802_865_4 * (v + 0.044_715 * v * v * v)).tanh()))
        }

        fn forward(&self, x: &Tensor<f64>) -> Tensor<f64> {
            let c0 = self.map(PROJ, &self.map(LIFT, x));
            // depth 3 unrolled by hand
            let f1 = self.f(0, &c0);
            let c1 = Self::gelu(&tensor::add(&c0, &f1).unwrap());
            let f2 = self.f(1, &c1);
            let c2 = Self::gelu(&tensor::add(&c1, &f2).unwrap());
            let f3 = self.f(2, &c2);
            let mut out = c0.clone();
            for (l, f) in [f1, f2, f3].iter().enumerate() {
                out = tensor::axpy(self.dt(l), f, &out).unwrap();
            }
            self.map(LIFT_INV, &self.map(PROJ_INV, &out))
        }
    }

    fn randomize_dt(m: &mut DyMixOp<f64>) {
        for (l, v) in [0.3, -0.2, 0.7].into_iter().enumerate() {
            m.params_mut().set_value(&format!("layers.{l}.dt"), Tensor::scalar(v)).unwrap();
        }
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn forward_matches_hand_unrolled_recursion() {
        let mut m = DyMixOp::<f64>::new(tiny(Variant::Full), 3).unwrap();
        randomize_dt(&mut m);
        let x = window(m.config(), 8, 2);
        let out = m.predict(&x).unwrap();
        assert_eq!(out.shape(), &[2, 1, 8]);
        let oracle = Oracle { m: &m };
        for b in 0..2 {
            let xb = tensor::slice(0, &x, b, 1).unwrap().reshape(&[2, 8]).unwrap();
            let expect = oracle.forward(&xb);
            let got = &out.data()[b * 8..(b + 1) * 8];
            assert!(rel(got, expect.data()) < 1e-12);
        }
    }

    #[test]
    fn single_layer_is_one_euler_step() {
        let cfg = ModelConfig { depth: 1, ..tiny(Variant::Full) };
        let m = DyMixOp::<f64>::new(cfg, 5).unwrap();
        let x = window(m.config(), 8, 1);
        let oracle = Oracle { m: &m };
        let xb = x.clone().reshape(&[2, 8]).unwrap();
        let c0 = oracle.map(PROJ, &oracle.map(LIFT, &xb));
        let c = tensor::axpy(oracle.dt(0), &oracle.f(0, &c0), &c0).unwrap();
        let expect = oracle.map(LIFT_INV, &oracle.map(PROJ_INV, &c));
        assert!(rel(m.predict(&x).unwrap().data(), expect.data()) < 1e-12);
    }

    #[test]
    fn frozen_dynamics_equals_consistency_path() {
        for variant in [Variant::Full, Variant::LinearOnly, Variant::ParallelOnly] {
            let mut m = DyMixOp::<f64>::new(tiny(variant), 11).unwrap();
            for l in 0..3 {
                m.params_mut().set_value(&format!("layers.{l}.dt"), Tensor::scalar(0.0)).unwrap();
            }
            let x = window(m.config(), 16, 3);
            assert_eq!(m.predict(&x).unwrap(), m.reconstruct(&x).unwrap());
        }
    }

    #[test]
    fn consistency_is_four_stacked_maps() {
        let m = DyMixOp::<f64>::new(tiny(Variant::Full), 2).unwrap();
        let x = window(m.config(), 8, 1);
        let o = Oracle { m: &m };
        let xb = x.clone().reshape(&[2, 8]).unwrap();
        let expect = o.map(LIFT_INV, &o.map(PROJ_INV, &o.map(PROJ, &o.map(LIFT, &xb))));
        assert!(rel(m.reconstruct(&x).unwrap().data(), expect.data()) < 1e-13);
        // zero input leaves only the propagated biases
        let zero = Tensor::zeros(&[1, 2, 8]);
        let z = m.reconstruct(&zero).unwrap();
        assert!(z.data().iter().all(|&v| v == z.data()[0]));
    }

    #[test]
    fn zero_weights_give_zero_layer() {
        let mut m = DyMixOp::<f64>::new(tiny(Variant::Full), 1).unwrap();
        let ids: Vec<String> = m.params().iter().map(|p| p.id.clone()).collect();
        for id in ids.iter().filter(|id| id.starts_with("layers.0.")) {
            let z = m.params().value(id).unwrap().zeros_like();
            m.params_mut().set_value(id, z).unwrap();
        }
        let mut g = Graph::inference();
        let c = g.input(window(&ModelConfig { history: 0, in_channels: 2, ..tiny(Variant::Full) }, 8, 1));
        let layer = m.layers()[0].clone();
        let f = m.layer(&mut g, &layer, c).unwrap();
        assert!(g.value(f).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nonlinear_transform_squares_a_harmonic() {
        // d_m = 1, identity local and full-mode identity global: c ⊙ c.
        let cfg = ModelConfig { width: 1, modes: vec![9], depth: 1, ..ModelConfig::default() };
        let mut m = DyMixOp::<f64>::new(cfg, 0).unwrap();
        let t = m.layers()[0].nonlinear[0].clone();
        m.params_mut().set_value(&t.local_weight(), Tensor::scalar(1.0).reshape(&[1, 1]).unwrap()).unwrap();
        m.params_mut().set_value(&t.local_bias(), Tensor::zeros(&[1])).unwrap();
        m.params_mut().set_value(&t.global_weight(), SpectralWeights::identity(&[9], 1, false).weights).unwrap();
        let n = 16;
        let c: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * 3.0 * i as f64 / n as f64).cos()).collect();
        let mut g = Graph::inference();
        let cv = g.input(Tensor::from_vec(&[1, 1, n], c.clone()).unwrap());
        let y = m.transform(&mut g, &t, cv).unwrap();
        let y = g.value(y).clone();
        for (a, b) in y.data().iter().zip(&c) {
            assert!((a - b * b).abs() < 1e-12);
        }
        let spec = rfft(&y.reshape(&[n]).unwrap(), 1).unwrap();
        let energy: Vec<f64> = spec.data().chunks(2).map(|z| z[0] * z[0] + z[1] * z[1]).collect();
        let total: f64 = energy.iter().sum();
        for (k, e) in energy.iter().enumerate() {
            if k == 0 || k == 6 {
                assert!(e / total > 0.1);
            } else {
                assert!(e / total < 1e-24, "mode {k}");
            }
        }
    }

    #[test]
    fn resolution_invariance_on_band_limited_input() {
        let cfg = ModelConfig { history: 0, width: 4, modes: vec![6], ..tiny(Variant::Full) };
        let m = DyMixOp::<f64>::new(cfg, 9).unwrap();
        let coarse = m.predict(&window(m.config(), 32, 1)).unwrap();
        let fine = m.predict(&window(m.config(), 64, 1)).unwrap();
        let sub: Vec<f64> = fine.data().iter().step_by(2).copied().collect();
        assert!(rel(&sub, coarse.data()) < 1e-5);
    }

    #[test]
    fn grid_checks() {
        let cfg = ModelConfig { modes: vec![12], ..ModelConfig::default() };
        assert!(cfg.check_grid(&[24]).is_err());
        assert!(matches!(cfg.check_grid(&[16]), Err(Error::ModesExceedGrid { .. })));
        assert!(cfg.check_grid(&[32]).is_ok());
        let m = DyMixOp::<f64>::new(cfg, 0).unwrap();
        assert!(m.predict(&Tensor::zeros(&[1, 1, 16])).is_err());
        assert!(m.predict(&Tensor::zeros(&[1, 2, 64])).is_err());
    }

    #[test]
    fn parameter_count_formula() {
        for variant in Variant::ALL {
            for (modes, diag) in [(vec![5], false), (vec![3, 4], false), (vec![4], true)] {
                let cfg = ModelConfig {
                    in_channels: 2,
                    out_channels: 2,
                    history: 2,
                    width: 3,
                    depth: 2,
                    n_linear: 2,
                    n_nonlinear: 2,
                    modes,
                    spectral_diag: diag,
                    variant,
                    ..ModelConfig::default()
                };
                let m = DyMixOp::<f64>::new(cfg.clone(), 0).unwrap();
                assert_eq!(m.params().num_scalars(), cfg.parameter_count(), "{variant} {:?}", cfg.modes);
            }
        }
        let cfg = ModelConfig { width: 4, depth: 1, modes: vec![6], ..ModelConfig::default() };
        // lift 1->8, proj 8->4, proj_inv 4->8, lift_inv 8->1, three 4x4 maps, 6 modes, one dt
        let expect = 16 + 36 + 40 + 9 + 3 * 20 + 2 * 6 * 16 + 1;
        assert_eq!(cfg.parameter_count(), expect);
    }

    #[test]
    fn from_params_rejects_mismatch() {
        let m = DyMixOp::<f64>::new(tiny(Variant::Full), 0).unwrap();
        let params = m.params().clone();
        assert!(DyMixOp::from_params(tiny(Variant::Full), params.clone()).is_ok());
        assert!(DyMixOp::from_params(tiny(Variant::LinearOnly), params.clone()).is_err());
        let wider = ModelConfig { width: 3, ..tiny(Variant::Full) };
        assert!(DyMixOp::from_params(wider, params).is_err());
    }

    #[test]
    fn variants_parse_and_print() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("both".parse::<Variant>().is_err());
    }

    #[test]
    fn two_dimensional_forward_shapes() {
        let cfg = ModelConfig { modes: vec![3, 3], width: 2, ..ModelConfig::default() };
        let m = DyMixOp::<f64>::new(cfg, 4).unwrap();
        let out = m.predict(&Tensor::filled(&[2, 1, 8, 16], 0.5)).unwrap();
        assert_eq!(out.shape(), &[2, 1, 8, 16]);
    }
}
