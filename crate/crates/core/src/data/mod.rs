//! Synthetic segmentation data, PNG storage and the MIoU metric.

pub mod dataset;
pub mod io;
pub mod metrics;

pub use dataset::{
    generate_dataset, generate_sample, generate_split, Dataset, DatasetConfig, Mask, SegmentationSample, Split,
    NUM_CLASSES,
};
pub use io::{load_dir, load_sample, save_sample, save_samples};
pub use metrics::{aggregate_runs, miou, ConfusionMatrix, MiouReport};
