//! Local-global mixing neural operator with a dynamics-informed layer
//! stack, plus the numerical machinery it needs: radix-2 FFTs, a small
//! reverse-mode autodiff engine, AdamW training and reference PDE solvers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod datagen;
pub mod error;
pub mod fft;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod real;
pub mod spectral;
pub mod tensor;
pub mod training;

pub use autodiff::{Activation, Graph, ParamStore, Parameter, Var};
pub use data::{Batch, Fields, NormStats, Split, TrajectoryDataset, Windows};
pub use datagen::{generate, Pde, TrajectorySpec};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradReport};
pub use io::Checkpoint;
pub use model::{DyMixOp, ModelConfig, Variant};
pub use real::{Precision, Real};
pub use spectral::SpectralWeights;
pub use tensor::{Kind, Tensor};
pub use training::{compute_loss, evaluate, rollout, train, AdamW, EpochRecord, LossWeights, Metric, TrainConfig};
