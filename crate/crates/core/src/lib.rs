//! Conditional denoising-diffusion synthesis of daily electricity load
//! profiles: tensor autodiff, the diffusion process and its noise
//! estimator, the data pipeline, evaluation metrics, and checkpointing.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod estimator;
pub mod metrics;
pub mod seed;
pub mod tensor;

pub use checkpoint::{Checkpoint, CustomerState};
pub use config::RunConfig;
pub use data::{Condition, DailyProfile, NormalizationStats, SLOTS_PER_DAY};
pub use diffusion::{build_schedule, NoiseSchedule, TrainOptions, TrainedModel};
pub use estimator::EstimatorConfig;
pub use metrics::MetricsReport;
