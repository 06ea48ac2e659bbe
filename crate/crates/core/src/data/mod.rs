//! Patch datasets: the `DSDS` file format, synthetic generation and
//! triplet batch sampling.

mod dataset;
mod sampling;
mod synth;

pub use dataset::{PatchDataset, PointSplit, DATASET_MAGIC, DATASET_VERSION, PATCH_SIDE};
pub use sampling::{sample_triplet_batch, TripletBatch};
pub use synth::{synth_dataset, SynthConfig};
