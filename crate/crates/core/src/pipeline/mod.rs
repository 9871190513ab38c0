//! Batch pipeline: configuration, datasets, archives and the stages that
//! connect them.

pub mod archive;
pub mod config;
pub mod dataset;
pub mod stages;
pub mod synthetic;

pub use archive::{ArchiveSource, DirArchiveSource, Trajectories, VideoArchive};
pub use config::{Mode, PipelineConfig, SelectionSettings};
pub use dataset::{load_video, DatasetManifest, VideoEntry, VideoInput};
pub use stages::{
    cmd_eval, cmd_extract, cmd_train, evaluate_on, extract_video, inspect_file, train_from_source, train_on, with_jobs,
    ExtractSummary, TrainedPipeline, TrainingSummary, WorkDir,
};
pub use synthetic::{cmd_synth, preset_items, preset_items_with, Preset};
