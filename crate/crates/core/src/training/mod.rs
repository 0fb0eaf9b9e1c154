//! AdamW with decoupled weight decay, a warmup-cosine learning-rate
//! schedule, early stopping and the epoch loop that ties the model to the
//! prompt sampler and the data.

mod early;
mod optim;
mod schedule;
mod trainer;

pub use early::{run_epochs, DriverSummary, EarlyStopping, EpochResult, Verdict, DEFAULT_PATIENCE};
pub use optim::{AdamW, AdamWConfig};
pub use schedule::LrSchedule;
pub use trainer::{
    train_loop, validate, EpochRecord, TrainConfig, TrainData, TrainOutcome, Trainer, LOG_HEADER,
};

use crate::config::ConfigError;
use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("learning-rate schedule exhausted at step {step} of {total}")]
    ScheduleExhausted { step: f64, total: usize },
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Model(ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(TensorError::NonFinite { op }) => {
                TrainError::Numeric(format!("non-finite value produced by {op}"))
            }
            other => TrainError::Model(other),
        }
    }
}

impl From<ConfigError> for TrainError {
    fn from(e: ConfigError) -> Self {
        TrainError::Config(e.to_string())
    }
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
