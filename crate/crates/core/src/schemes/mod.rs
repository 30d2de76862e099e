//! Evaluation schemes: occlude features by attribution rank, update the model,
//! and measure accuracy on the manipulated test split.

mod config;
mod result;
mod run;

pub use config::{
    base_train_config, default_ratios, preset, Preset, SchemeConfig, SplitFlags, TargetRule,
    UpdateProtocol,
};
pub use result::{
    compare_report, curve_report, delta_acc, delta_acc_per_repetition, pooled_std, read_curves_csv,
    sample_std, write_curves_csv, write_results_csv, DegradationCurve, EvalResult, Provenance,
    Report, ReportRow, CURVES_HEADER, RESULTS_HEADER,
};
pub use run::{
    network_hash, run_scheme, run_scheme_cached, sample_id, AttributionCache, TEST_ID_OFFSET,
    TRAINED_MARGIN,
};
