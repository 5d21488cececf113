//! Two-stage training: pretraining with a margin ramp, then large-margin
//! finetuning on longer segments.

mod config;
pub mod data;
mod optim;
mod trainer;

pub use config::TrainConfig;
pub use data::{SyntheticSpeakerSet, Trial, Utterance};
pub use optim::Sgd;
pub use trainer::{epoch_losses, init_model, metrics_csv, MetricRow, TrainOutcome, Trainer, METRICS_HEADER};
