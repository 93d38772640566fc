//! Flat `key = value` configuration with `--key value` overrides.

use std::collections::BTreeMap;
use std::path::PathBuf;

use dymixop::model::Variant;
use dymixop::{Activation, LossWeights, ModelConfig, Pde, Precision, TrajectorySpec};

use crate::CliError;

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", no + 1)))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(CliError::Config(format!("line {}: empty key", no + 1)));
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub type Pairs = Vec<(String, String)>;

/// `--key value`, `--key=value`, or a bare `--key` meaning `true`.
/// Positional arguments are returned separately.
pub fn parse_flags(args: &[String]) -> Result<(Pairs, Vec<String>), CliError> {
    let mut pairs = Vec::new();
    let mut positional = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        if let Some(flag) = a.strip_prefix("--") {
            if let Some((k, v)) = flag.split_once('=') {
                pairs.push((k.to_string(), v.to_string()));
            } else if i + 1 < args.len() && !args[i + 1].starts_with("--") {
                pairs.push((flag.to_string(), args[i + 1].clone()));
                i += 1;
            } else {
                pairs.push((flag.to_string(), "true".to_string()));
            }
        } else {
            positional.push(a.clone());
        }
        i += 1;
    }
    for (k, _) in &mut pairs {
        *k = k.replace('-', "_");
    }
    Ok((pairs, positional))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value.split(',').map(|s| parse(key, s.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricChoice {
    /// Relative MSE for map datasets, MSE for time series.
    Auto,
    Mse,
    RelativeMse,
}

/// Every knob of `train`, `eval`, `predict`, `gradcheck` and `ablate`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub resume: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub out: Option<PathBuf>,

    pub width: usize,
    pub depth: usize,
    pub n_linear: usize,
    pub n_nonlinear: usize,
    pub modes: Vec<usize>,
    pub history: usize,
    pub activation: Activation,
    pub final_activation: bool,
    pub spectral_diag: bool,
    pub variant: Variant,

    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub step_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub precision: Precision,
    pub metric: MetricChoice,
    pub denormalized_metric: bool,
    pub eval_train: bool,
    pub save_every: usize,
    pub threads: usize,
    pub json: bool,

    pub variants: Vec<Variant>,
    pub tolerance: f64,
    pub grid: Vec<usize>,
    pub steps: usize,
    pub trajectory: usize,
    pub start: usize,
    pub split: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            checkpoint: PathBuf::from("model.dmxc"),
            resume: None,
            log: None,
            out: None,
            width: 16,
            depth: 2,
            n_linear: 1,
            n_nonlinear: 1,
            modes: vec![8],
            history: 0,
            activation: Activation::Gelu,
            final_activation: false,
            spectral_diag: false,
            variant: Variant::Full,
            lr: 1e-3,
            epochs: 100,
            batch: 16,
            alpha: 1.0,
            beta: 0.1,
            gamma: 0.97,
            step_size: 6,
            weight_decay: 1e-4,
            seed: 0,
            precision: Precision::F32,
            metric: MetricChoice::Auto,
            denormalized_metric: false,
            eval_train: true,
            save_every: 0,
            threads: 0,
            json: false,
            variants: Variant::ALL.to_vec(),
            tolerance: 1e-4,
            grid: vec![16],
            steps: 10,
            trajectory: 0,
            start: 0,
            split: "all".into(),
        }
    }
}

pub const RUN_KEYS: &str = "\
data, checkpoint, resume, log, out, width (d_m), depth (l_d), n_linear (n_l), \
n_nonlinear (n_n), modes, history (k), activation, final_activation, spectral_diag, \
variant, lr, epochs, batch, alpha, beta, gamma, step_size, weight_decay, seed, \
precision, metric, denormalized_metric, eval_train, save_every, threads, json, \
variants, tolerance, grid, steps, trajectory, start, split, config";

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let path = || Some(PathBuf::from(value));
        match key {
            "data" => self.data = path(),
            "checkpoint" => self.checkpoint = PathBuf::from(value),
            "resume" => self.resume = path(),
            "log" => self.log = path(),
            "out" => self.out = path(),
            "width" | "d_m" => self.width = parse(key, value)?,
            "depth" | "l_d" => self.depth = parse(key, value)?,
            "n_linear" | "n_l" => self.n_linear = parse(key, value)?,
            "n_nonlinear" | "n_n" => self.n_nonlinear = parse(key, value)?,
            "modes" => self.modes = parse_list(key, value)?,
            "history" | "k" => self.history = parse(key, value)?,
            "activation" => self.activation = parse(key, value)?,
            "final_activation" => self.final_activation = parse_bool(key, value)?,
            "spectral_diag" => self.spectral_diag = parse_bool(key, value)?,
            "variant" => self.variant = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch" | "batch_size" => self.batch = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "step_size" => self.step_size = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "precision" => self.precision = parse(key, value)?,
            "metric" => {
                self.metric = match value {
                    "auto" => MetricChoice::Auto,
                    "mse" => MetricChoice::Mse,
                    "relative_mse" | "relative-mse" => MetricChoice::RelativeMse,
                    _ => return Err(CliError::Config(format!("invalid value `{value}` for `metric`"))),
                }
            }
            "denormalized_metric" => self.denormalized_metric = parse_bool(key, value)?,
            "eval_train" => self.eval_train = parse_bool(key, value)?,
            "save_every" => self.save_every = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "json" => self.json = parse_bool(key, value)?,
            "variants" => {
                self.variants = if value == "all" { Variant::ALL.to_vec() } else { parse_list(key, value)? }
            }
            "tolerance" => self.tolerance = parse(key, value)?,
            "grid" => self.grid = parse_list(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "trajectory" => self.trajectory = parse(key, value)?,
            "start" => self.start = parse(key, value)?,
            "split" => {
                if !matches!(value, "train" | "test" | "all") {
                    return Err(CliError::Config(format!("split must be train, test or all, got `{value}`")));
                }
                self.split = value.to_string()
            }
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Defaults, then the `config` file if one is named, then the remaining
    /// pairs in order.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        for (k, v) in pairs.iter().filter(|(k, _)| k == "config") {
            let text = std::fs::read_to_string(v)
                .map_err(|e| CliError::Config(format!("cannot read config `{v}`: {e}")))?;
            for (fk, fv) in parse_pairs(&text)? {
                if fk == "config" {
                    return Err(CliError::Config(format!("nested `config` in {k} file")));
                }
                cfg.set(&fk, &fv)?;
            }
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "config") {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn model(&self, in_channels: usize, out_channels: usize) -> ModelConfig {
        ModelConfig {
            in_channels,
            out_channels,
            history: self.history,
            width: self.width,
            depth: self.depth,
            n_linear: self.n_linear,
            n_nonlinear: self.n_nonlinear,
            modes: self.modes.clone(),
            activation: self.activation,
            final_activation: self.final_activation,
            spectral_diag: self.spectral_diag,
            variant: self.variant,
        }
    }

    pub fn loss(&self) -> LossWeights {
        LossWeights { alpha: self.alpha, beta: self.beta }
    }

    /// Canonical `key -> value` view, stored in checkpoints.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let p = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let metric = match self.metric {
            MetricChoice::Auto => "auto",
            MetricChoice::Mse => "mse",
            MetricChoice::RelativeMse => "relative_mse",
        };
        [
            ("data", p(&self.data)),
            ("checkpoint", self.checkpoint.display().to_string()),
            ("resume", p(&self.resume)),
            ("log", p(&self.log)),
            ("out", p(&self.out)),
            ("width", self.width.to_string()),
            ("depth", self.depth.to_string()),
            ("n_linear", self.n_linear.to_string()),
            ("n_nonlinear", self.n_nonlinear.to_string()),
            ("modes", join(&self.modes)),
            ("history", self.history.to_string()),
            ("activation", self.activation.to_string()),
            ("final_activation", self.final_activation.to_string()),
            ("spectral_diag", self.spectral_diag.to_string()),
            ("variant", self.variant.to_string()),
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch", self.batch.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("gamma", self.gamma.to_string()),
            ("step_size", self.step_size.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("seed", self.seed.to_string()),
            ("precision", self.precision.as_str().to_string()),
            ("metric", metric.to_string()),
            ("denormalized_metric", self.denormalized_metric.to_string()),
            ("eval_train", self.eval_train.to_string()),
            ("save_every", self.save_every.to_string()),
            ("threads", self.threads.to_string()),
            ("json", self.json.to_string()),
            ("variants", join(&self.variants)),
            ("tolerance", self.tolerance.to_string()),
            ("grid", join(&self.grid)),
            ("steps", self.steps.to_string()),
            ("trajectory", self.trajectory.to_string()),
            ("start", self.start.to_string()),
            ("split", self.split.clone()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Keys accepted by `gen`, on top of the `pde`-specific defaults.
pub const SPEC_KEYS: &str = "\
pde, out, grid, length, nu, dt, stride, snapshots, burn_in, trajectories, seed, \
ic_modes, ic_decay, ic_rms, alpha, tau, a_low, a_high, cg_max_iter, train_fraction, \
threads, json, precision, config";

/// A dataset specification plus the output path.
pub fn spec_from_pairs(pairs: &[(String, String)]) -> Result<(TrajectorySpec, PathBuf), CliError> {
    let mut all = Vec::new();
    for (_, v) in pairs.iter().filter(|(k, _)| k == "config") {
        let text = std::fs::read_to_string(v).map_err(|e| CliError::Config(format!("cannot read spec `{v}`: {e}")))?;
        all.extend(parse_pairs(&text)?);
    }
    all.extend(pairs.iter().filter(|(k, _)| k != "config").cloned());
    let pde: Pde = match all.iter().rev().find(|(k, _)| k == "pde") {
        Some((_, v)) => v.parse()?,
        None => return Err(CliError::Config("missing `pde` (ks1d, burgers1d or darcy2d)".into())),
    };
    let mut spec = TrajectorySpec::defaults(pde);
    let mut out = None;
    for (k, v) in &all {
        let v = v.as_str();
        match k.as_str() {
            "pde" | "threads" | "json" | "precision" => {}
            "out" => out = Some(PathBuf::from(v)),
            "grid" => spec.grid = parse_list(k, v)?,
            "length" => spec.length = parse(k, v)?,
            "nu" => spec.nu = parse(k, v)?,
            "dt" => spec.dt = parse(k, v)?,
            "stride" => spec.stride = parse(k, v)?,
            "snapshots" => spec.snapshots = parse(k, v)?,
            "burn_in" => spec.burn_in = parse(k, v)?,
            "trajectories" => spec.trajectories = parse(k, v)?,
            "seed" => spec.seed = parse(k, v)?,
            "ic_modes" => spec.ic_modes = parse(k, v)?,
            "ic_decay" => spec.ic_decay = parse(k, v)?,
            "ic_rms" => spec.ic_rms = parse(k, v)?,
            "alpha" => spec.alpha = parse(k, v)?,
            "tau" => spec.tau = parse(k, v)?,
            "a_low" => spec.a_low = parse(k, v)?,
            "a_high" => spec.a_high = parse(k, v)?,
            "cg_max_iter" => spec.cg_max_iter = parse(k, v)?,
            "train_fraction" => spec.train_fraction = parse(k, v)?,
            _ => return Err(CliError::Config(format!("unknown key `{k}`"))),
        }
    }
    let out = out.ok_or_else(|| CliError::Config("missing `out` path".into()))?;
    Ok((spec, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn file_syntax() {
        let p = parse_pairs("# header\nlr = 0.01  # inline\n\n  width=32\n").unwrap();
        assert_eq!(p, vec![("lr".into(), "0.01".into()), ("width".into(), "32".into())]);
        assert!(parse_pairs("just words").is_err());
        assert!(parse_pairs(" = 3").is_err());
    }

    #[test]
    fn flag_syntax() {
        let (p, pos) = parse_flags(&strings(&["spec.txt", "--lr", "0.1", "--final-activation", "--modes=4,4"])).unwrap();
        assert_eq!(pos, vec!["spec.txt".to_string()]);
        assert_eq!(
            p,
            vec![
                ("lr".into(), "0.1".into()),
                ("final_activation".into(), "true".into()),
                ("modes".into(), "4,4".into())
            ]
        );
    }

    #[test]
    fn flags_override_file_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "lr = 0.5\nepochs = 3\nd_m = 32\n").unwrap();
        let pairs = vec![
            ("lr".to_string(), "0.25".to_string()),
            ("config".to_string(), path.display().to_string()),
        ];
        let cfg = RunConfig::from_pairs(&pairs).unwrap();
        assert_eq!((cfg.lr, cfg.epochs, cfg.width), (0.25, 3, 32));
        assert!(RunConfig::from_pairs(&[("learning_rate".into(), "1".into())]).is_err());
        assert!(RunConfig::from_pairs(&[("epochs".into(), "-1".into())]).is_err());
    }

    #[test]
    fn every_canonical_key_roundtrips() {
        let mut cfg = RunConfig::default();
        cfg.data = Some("d.dmxd".into());
        cfg.modes = vec![4, 6];
        cfg.variants = vec![Variant::Full, Variant::LinearOnly];
        let pairs: Vec<(String, String)> = cfg
            .to_map()
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .collect();
        assert_eq!(RunConfig::from_pairs(&pairs).unwrap(), cfg);
    }

    #[test]
    fn spec_needs_pde_and_out() {
        let pairs = |v: &[(&str, &str)]| v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect::<Vec<_>>();
        assert!(spec_from_pairs(&pairs(&[("out", "x")])).is_err());
        assert!(spec_from_pairs(&pairs(&[("pde", "ks1d")])).is_err());
        let (s, out) = spec_from_pairs(&pairs(&[("pde", "burgers1d"), ("out", "b.dmxd"), ("nu", "0.02")])).unwrap();
        assert_eq!((s.nu, s.grid.clone(), out), (0.02, vec![128], PathBuf::from("b.dmxd")));
        assert!(spec_from_pairs(&pairs(&[("pde", "ks1d"), ("out", "x"), ("viscosity", "1")])).is_err());
    }

    #[test]
    fn published_training_defaults() {
        let c = RunConfig::default();
        assert_eq!((c.lr, c.gamma, c.step_size), (1e-3, 0.97, 6));
        let m = c.model(1, 1);
        assert_eq!(m.lift_width(), 2 * m.width);
    }
}
