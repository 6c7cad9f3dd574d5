//! The cross-modal mapper (CSI tensor → JHM + PAF), the frame generator
//! (JHM + PAF + identity frame → RGB frame), their losses and training loops.

mod generator;
pub mod gradcheck;
mod loss;
mod mapper;
mod train;

use csi2video_nn::NnError;
use thiserror::Error;

use crate::config::ConfigError;

pub use generator::{generator_forward, generator_forward_batch, generator_graph, GeneratorConfig};
pub use loss::{
    loss_background, loss_foreground, loss_generator_total, loss_jhm, loss_mapper_total, loss_paf,
    LossWeights, WeightMode,
};
pub use mapper::{
    mapper_forward, mapper_forward_batch, mapper_graph, DenseBottleneck, InputNormalization,
    MapperConfig,
};
pub use train::{
    generator_batch_loss, mapper_batch_loss, train_generator, train_mapper, EpochLog,
    GeneratorSample, MapperSample, TrainConfig, TrainOutcome, TrainingConfig,
};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: u32, batch: usize },
    #[error("non-finite gradient for `{param}` at epoch {epoch}, batch {batch}")]
    NonFiniteGradient {
        epoch: u32,
        batch: usize,
        param: String,
    },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

pub(crate) fn shape_err(detail: impl Into<String>) -> NetworkError {
    NetworkError::ShapeMismatch(detail.into())
}
