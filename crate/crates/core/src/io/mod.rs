//! Files and data: checkpoints, PPM images, `key=value` configs and
//! synthetic datasets.

pub mod checkpoint;
pub mod config;
pub mod ppm;
pub mod synth;

pub use checkpoint::Checkpoint;
pub use ppm::{read_image, read_image_dir, write_image};
pub use synth::{synth_dataset, Dataset, SyntheticDatasetSpec};
