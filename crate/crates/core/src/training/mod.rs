//! Multi-task optimization of the encoder and structure learner, early
//! stopping and link-prediction evaluation.

mod config;
mod early_stop;
mod loss;
mod metrics;
mod moco;
mod trainer;

pub use config::{ModelSpec, TrainConfig};
pub use early_stop::{EarlyStopState, StopDecision};
pub use loss::{bce_link_loss, info_nce_loss, LossTerm, BCE_EPS};
pub use metrics::{accuracy, average_precision, EvalMetrics};
pub use moco::{MoCoState, DEFAULT_QUEUE};
pub use trainer::{batch_loss, Batch, Dataset, EpochLosses, EpochRecord, FitReport, Inference, LossParts, Models, Snapshot, Trainer};
