//! DP-SGD at desk scale: per-example gradients for small models, the two
//! clipping rules, Gaussian noising, and Poisson lot sampling.

pub mod clip;
pub mod data;
pub mod model;
mod train;

pub use clip::{clip_auto, clip_basic, l2_norm, GradClipPolicy};
pub use data::{load_dataset, BlobSpec, Dataset, Example};
pub use model::{per_example_gradients, ModelLayout, ModelParams};
pub use train::{dpsgd_step, poisson_batch, sgd_step, train, RunRecord, SeedPolicy, StepConfig, TrainConfig};
