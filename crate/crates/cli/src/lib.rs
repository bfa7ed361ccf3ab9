//! Pipeline orchestration for semflash: the `pipeline.v1` config, stage
//! runners that leave every intermediate on disk, synthetic datasets with
//! known truth, and the loopback API used by the alignment UI.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod server;
pub mod synth;

pub use config::PipelineConfig;
pub use error::PipelineError;
pub use pipeline::{run_decode, run_pipeline, run_stitch, RunOutcome};
pub use synth::{synth_dataset, DatasetSpec};
