//! The subcommands, as library functions returning structured results.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use dymixop::data::{Batch, Split};
use dymixop::io::{self, Checkpoint};
use dymixop::training::{evaluate_with, EpochRecord};
use dymixop::{
    generate, grad_check, train, AdamW, DyMixOp, GradReport, Metric, NormStats, Real, Tensor, TrainConfig,
    TrajectoryDataset, TrajectorySpec, Variant,
};

use crate::config::{MetricChoice, RunConfig};
use crate::report::{opt_sci, sci, Table};
use crate::CliError;

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf, CliError> {
    p.as_ref().ok_or_else(|| CliError::Config(format!("missing `{key}` path")))
}

pub fn metric_for(choice: MetricChoice, data: &TrajectoryDataset) -> Metric {
    match choice {
        MetricChoice::Auto if data.is_map() => Metric::RelativeMse,
        MetricChoice::Auto | MetricChoice::Mse => Metric::Mse,
        MetricChoice::RelativeMse => Metric::RelativeMse,
    }
}

fn train_config(cfg: &RunConfig, metric: Metric) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch,
        loss: cfg.loss(),
        metric,
        seed: cfg.seed,
        eval_train: cfg.eval_train,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GenSummary {
    pub out: PathBuf,
    pub pde: String,
    pub trajectories: usize,
    pub snapshots: usize,
    pub grid: Vec<usize>,
}

pub fn gen(spec: &TrajectorySpec, out: &Path) -> Result<GenSummary, CliError> {
    let data = generate(spec)?;
    io::save_dataset(out, &data)?;
    Ok(GenSummary {
        out: out.to_path_buf(),
        pde: data.pde.clone(),
        trajectories: data.trajectories(),
        snapshots: data.steps(),
        grid: data.grid().to_vec(),
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub checkpoint: PathBuf,
}

fn log_path(cfg: &RunConfig) -> PathBuf {
    cfg.log.clone().unwrap_or_else(|| cfg.checkpoint.with_extension("log"))
}

/// Trains (or resumes), writing one JSON record per epoch to `out` and to
/// the log file, and leaves a checkpoint at `cfg.checkpoint`.
pub fn train_run<T: Real>(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainOutcome, CliError> {
    let data = io::load_dataset(require(&cfg.data, "data")?)?;
    let resumed = cfg.resume.as_ref().map(|p| Checkpoint::<T>::load(p)).transpose()?;
    let (mut model, norm, mut opt, start, mut history) = match resumed {
        Some(c) => {
            let model = DyMixOp::from_params(c.model, c.params)?;
            let norm = c.norm.ok_or_else(|| CliError::Config("checkpoint has no normalization".into()))?;
            let opt = c
                .optimizer
                .ok_or_else(|| CliError::Config("checkpoint has no optimizer state".into()))?;
            (model, norm, opt, c.epoch, c.history)
        }
        None => {
            let model = DyMixOp::<T>::new(cfg.model(data.in_channels(), data.out_channels()), cfg.seed)?;
            let norm = NormStats::fit(&data)?;
            let opt = AdamW::new(model.params(), cfg.lr, cfg.weight_decay, cfg.gamma, cfg.step_size)?;
            (model, norm, opt, 0, Vec::new())
        }
    };
    model.config().check_grid(data.grid())?;
    let normed = data.normalized(&norm)?;
    let history_len = model.config().history;
    let tr = normed.windows(history_len, Split::Train)?;
    let te = normed.windows(history_len, Split::Test)?;
    let metric = metric_for(cfg.metric, &data);
    let tc = train_config(cfg, metric);

    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(start > 0)
        .truncate(start == 0)
        .open(log_path(cfg))?;
    let config_echo = serde_json::to_value(cfg.to_map())?;
    let save = |model: &DyMixOp<T>, opt: &AdamW<T>, epoch: usize, history: &[EpochRecord]| {
        Checkpoint {
            config: config_echo.clone(),
            model: model.config().clone(),
            epoch,
            norm: Some(norm.clone()),
            params: model.params().clone(),
            optimizer: Some(opt.clone()),
            history: history.to_vec(),
        }
        .save(&cfg.checkpoint)
    };
    let mut fresh = Vec::new();
    let new = train(&mut model, &mut opt, &tr, (!te.is_empty()).then_some(&te), &tc, start, |rec, m, o| {
        let line = serde_json::to_string(rec)?;
        writeln!(out, "{line}")?;
        writeln!(log, "{line}")?;
        fresh.push(rec.clone());
        if cfg.save_every > 0 && rec.epoch % cfg.save_every == 0 {
            let mut all = history.clone();
            all.extend(fresh.iter().cloned());
            save(m, o, rec.epoch, &all)?;
        }
        Ok(())
    })?;
    history.extend(new);
    save(&model, &opt, start + cfg.epochs, &history)?;
    Ok(TrainOutcome {
        history,
        checkpoint: cfg.checkpoint.clone(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalRow {
    pub split: String,
    pub samples: usize,
    pub mse: f64,
    pub relative_mse: f64,
}

pub fn eval_run<T: Real>(cfg: &RunConfig) -> Result<Vec<EvalRow>, CliError> {
    let ckpt = Checkpoint::<T>::load(&cfg.checkpoint)?;
    let data = io::load_dataset(require(&cfg.data, "data")?)?;
    let norm = ckpt.norm.clone().ok_or_else(|| CliError::Config("checkpoint has no normalization".into()))?;
    let model = DyMixOp::from_params(ckpt.model, ckpt.params)?;
    model.config().check_grid(data.grid())?;
    let normed = data.normalized(&norm)?;
    let denorm = cfg.denormalized_metric.then_some(&norm);
    let mut rows = Vec::new();
    for (name, split) in [("train", Split::Train), ("test", Split::Test)] {
        if cfg.split != "all" && cfg.split != name {
            continue;
        }
        let w = normed.windows(model.config().history, split)?;
        if w.is_empty() {
            continue;
        }
        rows.push(EvalRow {
            split: name.into(),
            samples: w.len(),
            mse: evaluate_with(&model, &w, Metric::Mse, cfg.batch, denorm)?,
            relative_mse: evaluate_with(&model, &w, Metric::RelativeMse, cfg.batch, denorm)?,
        });
    }
    Ok(rows)
}

pub fn render_eval(rows: &[EvalRow]) -> String {
    let mut t = Table::new(&["split", "samples", "mse", "relative_mse"]);
    for r in rows {
        t.row(vec![r.split.clone(), r.samples.to_string(), sci(r.mse), sci(r.relative_mse)]);
    }
    t.render()
}

#[derive(Clone, Debug, Serialize)]
pub struct PredictSummary {
    pub out: PathBuf,
    pub steps: usize,
    pub trajectory: usize,
    pub start: usize,
}

/// Autoregressive rollout from one window of the dataset, written in
/// physical units.
pub fn predict_run<T: Real>(cfg: &RunConfig) -> Result<PredictSummary, CliError> {
    let ckpt = Checkpoint::<T>::load(&cfg.checkpoint)?;
    let data = io::load_dataset(require(&cfg.data, "data")?)?;
    let out = require(&cfg.out, "out")?;
    let norm = ckpt.norm.clone().ok_or_else(|| CliError::Config("checkpoint has no normalization".into()))?;
    let model = DyMixOp::from_params(ckpt.model, ckpt.params)?;
    model.config().check_grid(data.grid())?;
    let k = model.config().history;
    if cfg.trajectory >= data.trajectories() || cfg.start + k >= data.steps() {
        return Err(CliError::Config(format!(
            "no window at trajectory {} start {} with history {k}",
            cfg.trajectory, cfg.start
        )));
    }
    let normed = data.normalized(&norm)?;
    let mut window = Vec::new();
    for f in 0..=k {
        window.extend(normed.frame(cfg.trajectory, cfg.start + f).iter().map(|&v| T::of(v)));
    }
    let mut shape = vec![model.config().window_channels()];
    shape.extend(data.grid());
    let frames = dymixop::rollout(&model, &Tensor::from_vec(&shape, window)?, cfg.steps)?;
    let points = data.points();
    let mut values = Vec::with_capacity(frames.len() * data.out_channels() * points);
    for f in &frames {
        values.extend(norm.denormalize_output(f, points)?.to_f64());
    }
    let mut pred_shape = vec![frames.len(), data.out_channels()];
    pred_shape.extend(data.grid());
    io::save_prediction(out, &data.pde, &pred_shape, &values)?;
    Ok(PredictSummary {
        out: out.clone(),
        steps: frames.len(),
        trajectory: cfg.trajectory,
        start: cfg.start,
    })
}

/// Smooth random fields for the gradient check, `[batch, channels, grid]`.
fn smooth_batch(channels: usize, grid: &[usize], batch: usize, rng: &mut ChaCha8Rng) -> Result<Tensor<f64>, CliError> {
    let points: usize = grid.iter().product();
    let mut data = Vec::with_capacity(batch * channels * points);
    for _ in 0..batch * channels {
        let (a, b, c): (f64, f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..6.3));
        for p in 0..points {
            let coords: Vec<f64> = match grid {
                [n] => vec![p as f64 / *n as f64],
                [n1, n2] => vec![(p / n2) as f64 / *n1 as f64, (p % n2) as f64 / *n2 as f64],
                _ => unreachable!(),
            };
            let x = std::f64::consts::TAU * coords.iter().sum::<f64>();
            data.push(0.5 + 0.3 * a * (x + c).sin() + 0.2 * b * (2.0 * x).cos());
        }
    }
    let mut shape = vec![batch, channels];
    shape.extend(grid);
    Ok(Tensor::from_vec(&shape, data)?)
}

/// Gradient check of a freshly initialized model on smooth synthetic
/// fields over `cfg.grid`, always in `f64`.
pub fn gradcheck_run(cfg: &RunConfig) -> Result<GradReport, CliError> {
    let model_cfg = cfg.model(1, 1);
    model_cfg.check_grid(&cfg.grid)?;
    let model = DyMixOp::<f64>::new(model_cfg.clone(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let window = smooth_batch(model_cfg.window_channels(), &cfg.grid, 2, &mut rng)?;
    let target = smooth_batch(1, &cfg.grid, 2, &mut rng)?;
    let last = dymixop::tensor::slice(1, &window, model_cfg.window_channels() - 1, 1)?;
    let metric = match cfg.metric {
        MetricChoice::RelativeMse => Metric::RelativeMse,
        _ => Metric::Mse,
    };
    Ok(grad_check(&model, &Batch { window, target, last }, cfg.loss(), metric, cfg.tolerance)?)
}

pub fn render_gradcheck(report: &GradReport) -> String {
    let mut t = Table::new(&["parameter", "scalars", "rel_err", "status"]);
    for p in &report.params {
        t.row(vec![
            p.id.clone(),
            p.scalars.to_string(),
            sci(p.rel_err),
            if p.passed { "ok" } else { "FAIL" }.into(),
        ]);
    }
    let failed = report.failures().count();
    format!(
        "{}{} of {} parameters within tolerance {:e}\n",
        t.render(),
        report.params.len() - failed,
        report.params.len(),
        report.tolerance
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub params: usize,
    pub train_loss: Option<f64>,
    pub test_metric: f64,
    pub metric: String,
}

/// Trains every requested variant from the same seed under the same
/// budget and reports the final test metric.
pub fn ablate_run<T: Real>(cfg: &RunConfig, mut progress: impl FnMut(&str)) -> Result<Vec<AblationRow>, CliError> {
    let data = io::load_dataset(require(&cfg.data, "data")?)?;
    let norm = NormStats::fit(&data)?;
    let normed = data.normalized(&norm)?;
    let tr = normed.windows(cfg.history, Split::Train)?;
    let te = normed.windows(cfg.history, Split::Test)?;
    if te.is_empty() {
        return Err(CliError::Config("ablation needs a non-empty test split".into()));
    }
    let metric = metric_for(cfg.metric, &data);
    let tc = TrainConfig { eval_train: false, ..train_config(cfg, metric) };
    let mut rows = Vec::new();
    for &variant in &cfg.variants {
        let model_cfg = dymixop::ModelConfig { variant, ..cfg.model(data.in_channels(), data.out_channels()) };
        model_cfg.check_grid(data.grid())?;
        let mut model = DyMixOp::<T>::new(model_cfg.clone(), cfg.seed)?;
        let mut opt = AdamW::new(model.params(), cfg.lr, cfg.weight_decay, cfg.gamma, cfg.step_size)?;
        let history = train(&mut model, &mut opt, &tr, Some(&te), &tc, 0, |_, _, _| Ok(()))?;
        let test_metric = match history.last() {
            Some(r) => r.test_loss.expect("test split is non-empty"),
            None => dymixop::evaluate(&model, &te, metric, cfg.batch)?,
        };
        progress(&format!("{variant}: {}", sci(test_metric)));
        rows.push(AblationRow {
            variant,
            params: model_cfg.parameter_count(),
            train_loss: history.last().map(|r| r.train_loss),
            test_metric,
            metric: metric.name().into(),
        });
    }
    Ok(rows)
}

pub fn render_ablation(rows: &[AblationRow]) -> String {
    let full = rows.iter().find(|r| r.variant == Variant::Full).map(|r| r.test_metric);
    let metric = rows.first().map_or("metric", |r| r.metric.as_str());
    let test_col = format!("test_{metric}");
    let mut t = Table::new(&["variant", "params", "train_loss", &test_col, "vs_full"]);
    for r in rows {
        t.row(vec![
            r.variant.to_string(),
            r.params.to_string(),
            opt_sci(r.train_loss),
            sci(r.test_metric),
            full.map_or_else(|| "-".into(), |f| format!("{:.3}", r.test_metric / f)),
        ]);
    }
    t.render()
}
