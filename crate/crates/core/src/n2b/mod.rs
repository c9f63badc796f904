//! Noise2Blur training: networks, both stages of the schedule, the training
//! loop and checkpoints.

pub mod checkpoint;
pub mod nets;
pub mod step;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointError, ConfigEcho};
pub use nets::{DnNet, NENet, NetError, UNetConfig};
pub use step::{convergence_step, initial_step, supervised_step, Optimizers, Stage, StepDiagnostics, StepRecord};
pub use train::{curve_csv, denoise, parse_curve_csv, train, Batch, TrainConfig, TrainData, TrainSettings, Trainer, Variant};

use crate::filters::FilterError;
use crate::image::ImageError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("{loss} is not finite ({value}) at iteration {iteration}")]
    NonFinite { loss: &'static str, iteration: u64, value: f64 },
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Net(NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
