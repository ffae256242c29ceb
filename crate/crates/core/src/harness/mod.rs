//! Configuration, evaluation metrics, the low-data sweep and the
//! content-addressed pipeline that writes reports.

mod config;
mod data;
mod experiment;
mod metrics;
mod pipeline;
mod plot;
mod sweep;

pub use config::{content_hash, DatasetConfig, EvalConfig, Method, RunConfig, Scale, SweepConfig};
pub use data::{front_end, group_key, PreparedDataset};
pub use experiment::{
    fit_direct, fit_method, fit_probe_policy, pretrain_encoder, pretrain_pooled, MethodFit, POOLED_CHANNELS,
};
pub use metrics::{
    dtw_reference, eval_dtw_rollout, eval_mse, ground_truth_dtw, mse_of, predict_test, rollout_envelope,
    rollout_scores, DtwReference, MseResult,
};
pub use pipeline::{
    run_pipeline, run_sweep, write_report_files, write_sweep_files, EvalRecord, EvalReport, GroundTruthRow, Pipeline,
    StageTiming, SummaryRow, SweepReport, SweepRow, REPORT_SCHEMA_VERSION,
};
pub use plot::{grouped_bar_svg, line_svg};
pub use sweep::{low_data_sweep, sweep_cell};
