//! Dataset ingestion: IDX files and synthetic blobs.

pub mod dataset;
pub mod idx;
pub mod synthetic;

pub use dataset::Dataset;
pub use idx::{load_idx, write_idx};
pub use synthetic::{synth_dataset, synth_templates, SyntheticSpec};
