//! Snapshot collections, train/test splits, sliding windows and min-max
//! normalization.
//!
//! Fields are always held in `f64`; batches are converted to the training
//! precision when they are assembled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Either time series `[M, S, C, N...]` or input/output pairs
/// `[M, C_in, N...]` -> `[M, C_out, N...]`.
#[derive(Clone, Debug, PartialEq)]
pub enum Fields {
    Evolution(Tensor<f64>),
    Map { input: Tensor<f64>, output: Tensor<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub pde: String,
    pub fields: Fields,
    pub split: Vec<Split>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    /// Generator settings, echoed verbatim into the file header.
    pub spec: serde_json::Value,
}

impl TrajectoryDataset {
    /// Splits the first `round(train_fraction * M)` trajectories (at least
    /// one when `M > 1`) into training, the rest into test.
    pub fn new(pde: &str, fields: Fields, train_fraction: f64, spec: serde_json::Value) -> Result<Self> {
        let (m, ci, co) = match &fields {
            Fields::Evolution(t) => {
                if t.shape().len() < 4 {
                    return Err(Error::Dataset(format!("trajectory tensor needs [M, S, C, N...], got {:?}", t.shape())));
                }
                (t.shape()[0], t.shape()[2], t.shape()[2])
            }
            Fields::Map { input, output } => {
                let (si, so) = (input.shape(), output.shape());
                if si.len() < 3 || so.len() != si.len() || si[0] != so[0] || si[2..] != so[2..] {
                    return Err(Error::Dataset(format!("mismatched map shapes {si:?} and {so:?}")));
                }
                (si[0], si[1], so[1])
            }
        };
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::Invalid(format!("train fraction {train_fraction} outside [0, 1]")));
        }
        let n_train = ((train_fraction * m as f64).round() as usize).clamp(usize::from(m > 1), m);
        let split = (0..m).map(|i| if i < n_train { Split::Train } else { Split::Test }).collect();
        let names = |prefix: &str, c: usize| (0..c).map(|i| format!("{prefix}{i}")).collect();
        Ok(TrajectoryDataset {
            pde: pde.to_string(),
            split,
            input_names: names("u", ci),
            output_names: if matches!(fields, Fields::Map { .. }) { names("out", co) } else { names("u", co) },
            fields,
            spec,
        })
    }

    pub fn trajectories(&self) -> usize {
        self.split.len()
    }

    pub fn grid(&self) -> &[usize] {
        match &self.fields {
            Fields::Evolution(t) => &t.shape()[3..],
            Fields::Map { input, .. } => &input.shape()[2..],
        }
    }

    pub fn points(&self) -> usize {
        self.grid().iter().product()
    }

    pub fn in_channels(&self) -> usize {
        match &self.fields {
            Fields::Evolution(t) => t.shape()[2],
            Fields::Map { input, .. } => input.shape()[1],
        }
    }

    pub fn out_channels(&self) -> usize {
        match &self.fields {
            Fields::Evolution(t) => t.shape()[2],
            Fields::Map { output, .. } => output.shape()[1],
        }
    }

    pub fn is_map(&self) -> bool {
        matches!(self.fields, Fields::Map { .. })
    }

    /// Snapshots per trajectory (1 for map datasets).
    pub fn steps(&self) -> usize {
        match &self.fields {
            Fields::Evolution(t) => t.shape()[1],
            Fields::Map { .. } => 1,
        }
    }

    /// One `[C, N...]` snapshot of the evolving field (or the map input).
    pub fn frame(&self, traj: usize, step: usize) -> &[f64] {
        let (c, p) = (self.in_channels(), self.points());
        match &self.fields {
            Fields::Evolution(t) => {
                let start = (traj * self.steps() + step) * c * p;
                &t.data()[start..start + c * p]
            }
            Fields::Map { input, .. } => &input.data()[traj * c * p..(traj + 1) * c * p],
        }
    }

    fn map_output(&self, traj: usize) -> &[f64] {
        let Fields::Map { output, .. } = &self.fields else { unreachable!() };
        let n = self.out_channels() * self.points();
        &output.data()[traj * n..(traj + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        match &self.fields {
            Fields::Evolution(t) => t.is_finite(),
            Fields::Map { input, output } => input.is_finite() && output.is_finite(),
        }
    }

    /// Sliding windows of `history + 1` frames over the trajectories of one
    /// split.
    pub fn windows(&self, history: usize, split: Split) -> Result<Windows<'_>> {
        let mut index = Vec::new();
        for traj in (0..self.trajectories()).filter(|&t| self.split[t] == split) {
            if self.is_map() {
                if history != 0 {
                    return Err(Error::Dataset("map datasets take no history".into()));
                }
                index.push((traj, 0));
            } else {
                if self.steps() < history + 2 {
                    return Err(Error::Dataset(format!(
                        "trajectories of {} snapshots are too short for history {history}",
                        self.steps()
                    )));
                }
                index.extend((0..self.steps() - history - 1).map(|s| (traj, s)));
            }
        }
        Ok(Windows {
            data: self,
            history,
            index,
        })
    }

    /// New dataset with the same splits holding normalized fields.
    pub fn normalized(&self, stats: &NormStats) -> Result<Self> {
        let mut out = self.clone();
        let p = self.points();
        match &mut out.fields {
            Fields::Evolution(t) => stats.input.apply(t.data_mut(), p, true)?,
            Fields::Map { input, output } => {
                stats.input.apply(input.data_mut(), p, true)?;
                stats.output.apply(output.data_mut(), p, true)?;
            }
        }
        Ok(out)
    }

    /// Keeps every `factor`-th grid point on each axis.
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.grid().iter().any(|&n| n % factor != 0) {
            return Err(Error::Invalid(format!("cannot subsample grid {:?} by {factor}", self.grid())));
        }
        let grid: Vec<usize> = self.grid().iter().map(|n| n / factor).collect();
        let take = |t: &Tensor<f64>, lead: usize| -> Result<Tensor<f64>> {
            let outer: usize = t.shape()[..lead].iter().product();
            let full = self.grid();
            let mut data = Vec::with_capacity(outer * grid.iter().product::<usize>());
            for o in 0..outer {
                let base = o * self.points();
                match full {
                    [_] => data.extend((0..grid[0]).map(|i| t.data()[base + i * factor])),
                    [_, n2] => {
                        for i in 0..grid[0] {
                            for j in 0..grid[1] {
                                data.push(t.data()[base + i * factor * n2 + j * factor]);
                            }
                        }
                    }
                    _ => unreachable!(),
                }
            }
            let mut shape = t.shape()[..lead].to_vec();
            shape.extend(&grid);
            Tensor::from_vec(&shape, data)
        };
        let fields = match &self.fields {
            Fields::Evolution(t) => Fields::Evolution(take(t, 3)?),
            Fields::Map { input, output } => Fields::Map {
                input: take(input, 2)?,
                output: take(output, 2)?,
            },
        };
        Ok(TrajectoryDataset { fields, ..self.clone() })
    }
}

/// Index view of `(trajectory, first frame)` pairs.
#[derive(Clone, Debug)]
pub struct Windows<'a> {
    data: &'a TrajectoryDataset,
    history: usize,
    index: Vec<(usize, usize)>,
}

/// One assembled batch.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// `[B, C (k+1), N...]`, oldest frame first.
    pub window: Tensor<T>,
    /// `[B, C_out, N...]`.
    pub target: Tensor<T>,
    /// `[B, C, N...]`: the newest input frame.
    pub last: Tensor<T>,
}

impl<'a> Windows<'a> {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn history(&self) -> usize {
        self.history
    }

    pub fn dataset(&self) -> &'a TrajectoryDataset {
        self.data
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.index
    }

    pub fn batch<T: Real>(&self, samples: &[usize]) -> Batch<T> {
        let d = self.data;
        let (c, co, k) = (d.in_channels(), d.out_channels(), self.history);
        let mut window = Vec::with_capacity(samples.len() * c * (k + 1) * d.points());
        let mut target = Vec::with_capacity(samples.len() * co * d.points());
        let mut last = Vec::with_capacity(samples.len() * c * d.points());
        let cast = |s: &[f64]| s.iter().map(|&v| T::of(v)).collect::<Vec<_>>();
        for &s in samples {
            let (traj, start) = self.index[s];
            for f in 0..=k {
                window.extend(cast(d.frame(traj, start + f)));
            }
            last.extend(cast(d.frame(traj, start + k)));
            if d.is_map() {
                target.extend(cast(d.map_output(traj)));
            } else {
                target.extend(cast(d.frame(traj, start + k + 1)));
            }
        }
        let shape = |ch: usize| {
            let mut s = vec![samples.len(), ch];
            s.extend(d.grid());
            s
        };
        Batch {
            window: Tensor::from_vec(&shape(c * (k + 1)), window).unwrap(),
            target: Tensor::from_vec(&shape(co), target).unwrap(),
            last: Tensor::from_vec(&shape(c), last).unwrap(),
        }
    }
}

/// Per-channel minimum and maximum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ChannelRange {
    fn fit<'a>(channels: usize, chunks: impl Iterator<Item = &'a [f64]>, points: usize) -> Result<Self> {
        let mut min = vec![f64::INFINITY; channels];
        let mut max = vec![f64::NEG_INFINITY; channels];
        for chunk in chunks {
            for (ch, row) in chunk.chunks_exact(points).enumerate() {
                for &v in row {
                    min[ch] = min[ch].min(v);
                    max[ch] = max[ch].max(v);
                }
            }
        }
        for ch in 0..channels {
            if !(max[ch] > min[ch]) {
                return Err(Error::Dataset(format!("channel {ch} is constant over the training split")));
            }
        }
        Ok(ChannelRange { min, max })
    }

    /// In-place (de)normalization of consecutive `[C, points]` blocks.
    pub fn apply(&self, data: &mut [f64], points: usize, forward: bool) -> Result<()> {
        let c = self.min.len();
        if !data.len().is_multiple_of(c * points) {
            return Err(Error::Dataset(format!(
                "{} values do not split into {c} channels of {points} points",
                data.len()
            )));
        }
        for block in data.chunks_exact_mut(c * points) {
            for (ch, row) in block.chunks_exact_mut(points).enumerate() {
                let (lo, span) = (self.min[ch], self.max[ch] - self.min[ch]);
                for v in row {
                    *v = if forward { (*v - lo) / span } else { *v * span + lo };
                }
            }
        }
        Ok(())
    }
}

/// Min-max statistics of the training split, frozen after fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub input: ChannelRange,
    pub output: ChannelRange,
}

impl NormStats {
    pub fn fit(data: &TrajectoryDataset) -> Result<Self> {
        let train: Vec<usize> = (0..data.trajectories()).filter(|&t| data.split[t] == Split::Train).collect();
        if train.is_empty() {
            return Err(Error::Dataset("empty training split".into()));
        }
        let p = data.points();
        let input = ChannelRange::fit(
            data.in_channels(),
            train.iter().flat_map(|&t| (0..data.steps()).map(move |s| data.frame(t, s))),
            p,
        )?;
        let output = if data.is_map() {
            ChannelRange::fit(data.out_channels(), train.iter().map(|&t| data.map_output(t)), p)?
        } else {
            input.clone()
        };
        Ok(NormStats { input, output })
    }

    /// Maps normalized model outputs back to physical units.
    pub fn denormalize_output<T: Real>(&self, x: &Tensor<T>, points: usize) -> Result<Tensor<T>> {
        let mut v = x.to_f64();
        self.output.apply(&mut v, points, false)?;
        Tensor::from_vec(x.shape(), v.into_iter().map(T::of).collect())
    }
}
