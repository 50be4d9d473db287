//! Training: momentum SGD, learning-rate schedules, datasets and the epoch
//! loop.

mod data;
mod digits;
mod engine;
mod idx;
mod sgd;
mod synth;

pub use data::{sample_function_dataset, surface, Dataset, Targets};
pub use digits::{synth_digits, DIGIT_SIDE};
pub use engine::{evaluate, train_loop, EpochRecord, Streams};
pub use idx::{load_idx, write_idx, IdxArray};
pub use sgd::{lr_at, sgd_update, Schedule, Sgd, SgdConfig};
pub use synth::{synth_feature_maps, synth_feature_maps_with_rank, synth_feature_maps_with_spectrum};
