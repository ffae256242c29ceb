//! Procedural contact-sound simulator for the five dynamic tasks, plus dataset
//! generation and loading.

mod action;
mod dataset;
mod seed;
mod tasks;

pub use action::{sample_action, ActionParams, ActionSpec, TaskId};
pub use dataset::{
    generate_dataset, load_dataset, split_behaviors, DatasetManifest, DatasetSplit, LoadedDataset,
    plan_manifest, write_bytes_atomic, write_json_atomic, GenerateOptions, SampleRecord, SCHEMA_VERSION,
};
pub use seed::{behavior_seed, record_seed, splitmix64};
pub use tasks::{count_bursts, simulate, DEFAULT_NOISE_LEVEL};
