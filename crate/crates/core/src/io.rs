//! Binary containers for datasets (`DMXD`) and checkpoints (`DMXC`).
//!
//! ```text
//! magic (4 bytes) | header length (u32 LE) | JSON header | raw LE values
//! ```
//!
//! The header lists every array with its shape and byte offset into the
//! value section. Checkpoint arrays are written in parameter-id order, so
//! saving a loaded checkpoint reproduces the original bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::data::{Fields, NormStats, Split, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::real::{Precision, Real};
use crate::tensor::{Kind, Tensor};
use crate::training::{AdamW, EpochRecord};

pub const DATASET_MAGIC: &[u8; 4] = b"DMXD";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DMXC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub complex: bool,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DatasetHeader {
    format_version: u32,
    dtype: Precision,
    pde: String,
    spec: serde_json::Value,
    input_names: Vec<String>,
    output_names: Vec<String>,
    split: Vec<Split>,
    arrays: Vec<ArrayEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    pub step: u64,
    pub lr: f64,
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub step_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    dtype: Precision,
    config: serde_json::Value,
    model: ModelConfig,
    epoch: usize,
    norm: Option<NormStats>,
    optimizer: Option<OptimizerHeader>,
    history: Vec<EpochRecord>,
    arrays: Vec<ArrayEntry>,
}

/// Parameters plus everything needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    /// Free-form run configuration echo.
    pub config: serde_json::Value,
    pub model: ModelConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub norm: Option<NormStats>,
    pub params: ParamStore<T>,
    pub optimizer: Option<AdamW<T>>,
    pub history: Vec<EpochRecord>,
}

fn container(magic: &[u8; 4], header: &impl Serialize, payload: &[u8]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("header too large".into()))?;
    let mut out = Vec::with_capacity(8 + json.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    Ok(out)
}

fn split_container<'a>(magic: &[u8; 4], bytes: &'a [u8]) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < 8 || &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "expected magic {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + len {
        return Err(Error::Format("truncated header".into()));
    }
    Ok((&bytes[8..8 + len], &bytes[8 + len..]))
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Invalid(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn push_array<T: Real>(arrays: &mut Vec<ArrayEntry>, payload: &mut Vec<u8>, name: String, t: &Tensor<T>) {
    arrays.push(ArrayEntry {
        name,
        shape: t.shape().to_vec(),
        complex: t.is_complex(),
        offset: payload.len(),
    });
    for &v in t.data() {
        v.write_le(payload);
    }
}

fn take_array<T: Real>(entry: &ArrayEntry, payload: &[u8]) -> Result<Tensor<T>> {
    let width = T::PRECISION.byte_width();
    let count = entry.shape.iter().product::<usize>() * if entry.complex { 2 } else { 1 };
    let end = entry.offset + count * width;
    if end > payload.len() {
        return Err(Error::Format(format!("array `{}` runs past the end of the file", entry.name)));
    }
    let data = payload[entry.offset..end].chunks_exact(width).map(T::read_le).collect();
    let kind = if entry.complex { Kind::Complex } else { Kind::Real };
    Tensor::with_kind(&entry.shape, kind, data)
}

pub fn encode_dataset(data: &TrajectoryDataset) -> Result<Vec<u8>> {
    let mut arrays = Vec::new();
    let mut payload = Vec::new();
    match &data.fields {
        Fields::Evolution(t) => push_array(&mut arrays, &mut payload, "fields".into(), t),
        Fields::Map { input, output } => {
            push_array(&mut arrays, &mut payload, "input".into(), input);
            push_array(&mut arrays, &mut payload, "output".into(), output);
        }
    }
    let header = DatasetHeader {
        format_version: FORMAT_VERSION,
        dtype: Precision::F64,
        pde: data.pde.clone(),
        spec: data.spec.clone(),
        input_names: data.input_names.clone(),
        output_names: data.output_names.clone(),
        split: data.split.clone(),
        arrays,
    };
    container(DATASET_MAGIC, &header, &payload)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<TrajectoryDataset> {
    let (head, payload) = split_container(DATASET_MAGIC, bytes)?;
    let h: DatasetHeader = serde_json::from_slice(head)?;
    if h.format_version != FORMAT_VERSION || h.dtype != Precision::F64 {
        return Err(Error::Format(format!(
            "unsupported dataset version {} / dtype {}",
            h.format_version,
            h.dtype.as_str()
        )));
    }
    let find = |name: &str| {
        h.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("missing array `{name}`")))
    };
    let fields = if h.arrays.len() == 1 {
        Fields::Evolution(take_array(find("fields")?, payload)?)
    } else {
        Fields::Map {
            input: take_array(find("input")?, payload)?,
            output: take_array(find("output")?, payload)?,
        }
    };
    let mut data = TrajectoryDataset::new(&h.pde, fields, 1.0, h.spec)?;
    if data.trajectories() != h.split.len() {
        return Err(Error::Format("split labels do not match the trajectory count".into()));
    }
    data.split = h.split;
    data.input_names = h.input_names;
    data.output_names = h.output_names;
    Ok(data)
}

pub fn save_dataset(path: &Path, data: &TrajectoryDataset) -> Result<()> {
    write_atomic(path, &encode_dataset(data)?)
}

pub fn load_dataset(path: &Path) -> Result<TrajectoryDataset> {
    decode_dataset(&fs::read(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PredictionHeader {
    format_version: u32,
    dtype: Precision,
    pde: String,
    kind: String,
    arrays: Vec<ArrayEntry>,
}

/// Writes a rollout `[steps, channels, grid..]` in the dataset container.
/// `steps` may be zero.
pub fn save_prediction(path: &Path, pde: &str, shape: &[usize], values: &[f64]) -> Result<()> {
    if shape.iter().product::<usize>() != values.len() {
        return Err(Error::shape("save_prediction", &[values.len()], shape));
    }
    let mut payload = Vec::with_capacity(values.len() * 8);
    for &v in values {
        v.write_le(&mut payload);
    }
    let header = PredictionHeader {
        format_version: FORMAT_VERSION,
        dtype: Precision::F64,
        pde: pde.into(),
        kind: "prediction".into(),
        arrays: vec![ArrayEntry {
            name: "prediction".into(),
            shape: shape.to_vec(),
            complex: false,
            offset: 0,
        }],
    };
    write_atomic(path, &container(DATASET_MAGIC, &header, &payload)?)
}

/// Shape and values of a file written by [`save_prediction`].
pub fn load_prediction(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let (head, payload) = split_container(DATASET_MAGIC, &bytes)?;
    let h: PredictionHeader = serde_json::from_slice(head)?;
    let entry = match h.arrays.as_slice() {
        [e] if h.kind == "prediction" && e.name == "prediction" => e,
        _ => return Err(Error::Format("not a prediction file".into())),
    };
    let n = entry.shape.iter().product::<usize>();
    if payload.len() < n * 8 {
        return Err(Error::Format("truncated prediction".into()));
    }
    Ok((entry.shape.clone(), payload[..n * 8].chunks_exact(8).map(f64::read_le).collect()))
}

impl<T: Real> Checkpoint<T> {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut arrays = Vec::new();
        let mut payload = Vec::new();
        for p in self.params.iter() {
            push_array(&mut arrays, &mut payload, format!("param/{}", p.id), &p.value);
        }
        let optimizer = self.optimizer.as_ref().map(|o| {
            for (p, m) in self.params.iter().zip(&o.m) {
                push_array(&mut arrays, &mut payload, format!("adam.m/{}", p.id), m);
            }
            for (p, v) in self.params.iter().zip(&o.v) {
                push_array(&mut arrays, &mut payload, format!("adam.v/{}", p.id), v);
            }
            OptimizerHeader {
                step: o.step,
                lr: o.lr,
                lr0: o.lr0,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
                weight_decay: o.weight_decay,
                gamma: o.gamma,
                step_size: o.step_size,
            }
        });
        let header = CheckpointHeader {
            format_version: FORMAT_VERSION,
            dtype: T::PRECISION,
            config: self.config.clone(),
            model: self.model.clone(),
            epoch: self.epoch,
            norm: self.norm.clone(),
            optimizer,
            history: self.history.clone(),
            arrays,
        };
        container(CHECKPOINT_MAGIC, &header, &payload)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (head, payload) = split_container(CHECKPOINT_MAGIC, bytes)?;
        let h: CheckpointHeader = serde_json::from_slice(head)?;
        if h.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", h.format_version)));
        }
        if h.dtype != T::PRECISION {
            return Err(Error::Format(format!(
                "checkpoint holds {} values, requested {}",
                h.dtype.as_str(),
                T::PRECISION.as_str()
            )));
        }
        let mut params = ParamStore::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for entry in &h.arrays {
            let t = take_array::<T>(entry, payload)?;
            if let Some(id) = entry.name.strip_prefix("param/") {
                params.insert(id, t, true)?;
            } else if entry.name.starts_with("adam.m/") {
                m.push(t);
            } else if entry.name.starts_with("adam.v/") {
                v.push(t);
            } else {
                return Err(Error::Format(format!("unexpected array `{}`", entry.name)));
            }
        }
        let optimizer = match h.optimizer {
            Some(o) => {
                if m.len() != params.len() || v.len() != params.len() {
                    return Err(Error::Format("optimizer moments do not match the parameters".into()));
                }
                Some(AdamW {
                    lr0: o.lr0,
                    lr: o.lr,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: o.eps,
                    weight_decay: o.weight_decay,
                    gamma: o.gamma,
                    step_size: o.step_size,
                    step: o.step,
                    m,
                    v,
                })
            }
            None => None,
        };
        Ok(Checkpoint {
            config: h.config,
            model: h.model,
            epoch: h.epoch,
            norm: h.norm,
            params,
            optimizer,
            history: h.history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

/// Value type stored in a checkpoint, without decoding the arrays.
pub fn checkpoint_precision(path: &Path) -> Result<Precision> {
    let bytes = fs::read(path)?;
    let (head, _) = split_container(CHECKPOINT_MAGIC, &bytes)?;
    #[derive(Deserialize)]
    struct Peek {
        dtype: Precision,
    }
    Ok(serde_json::from_slice::<Peek>(head)?.dtype)
}
