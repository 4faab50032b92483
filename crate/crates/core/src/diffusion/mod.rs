mod model;
mod prior;
mod schedule;
mod train;

pub use model::{DiffusionCheckpoint, DiffusionModel};
pub use prior::GaussianPrior;
pub use schedule::{NoiseSchedule, ScheduleParams};
pub use train::{train_ddpm, DdpmTrainConfig, TrainedDdpm, MIN_TRAINING_GRIDS};
