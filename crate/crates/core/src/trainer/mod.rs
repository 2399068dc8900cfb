//! Training loop with freeze plans, the learning-rate schedule and
//! checkpoint files.

mod checkpoint;
mod schedule;
mod train;

pub use checkpoint::{config_hash, Checkpoint};
pub use schedule::{lr_at, TrainConfig};
pub use train::{write_log_record, LogRecord, Trainer};
