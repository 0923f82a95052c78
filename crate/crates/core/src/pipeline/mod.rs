//! End-to-end orchestration from dataset generation to the `p_I` sweep.

mod config;
mod dataset;
mod eval;
mod manifest;
mod regimes;
mod stages;

pub use config::{DataConfig, DictionarySettings, FingerprintConfig, NetworkConfig, OtSettings, PipelineConfig, SweepConfig};
pub use dataset::{
    fingerprint_grid, generate_dataset, identify_all, label_dataset, label_from_estimates, model_based_estimates, LabeledDataset,
};
pub use eval::{
    evaluate, localize, sweep_p_i, test_identifier, unified_localize, write_sweep_csv, CdfPoint, EvalReport, Method, RunMetadata,
    SweepOutcome, SweepRow, TestSet,
};
pub use manifest::{config_digest, provenance, FileDigest, Manifest};
pub use regimes::train_model;
pub use stages::{run_evaluate, run_generate, run_label, run_sweep, run_train, GenerateSummary, SplitSummary};
