//! Active-learning experiments on the toy problems: initial designs, the
//! round loop, ELPP/MSE metrics, summaries and CSV persistence.

mod experiment;
mod metrics;
mod persist;

pub use experiment::{
    build_test_set, initial_design, run_experiment, run_repeat, ExperimentConfig, RoundRecord, RunLog, TestSet,
};
pub use metrics::{elpp, mse_prob, summarize, SummaryRecord, PROB_CLAMP};
pub use persist::{config_hash, read_run_csv, write_run_csv, write_summary_csv, CSV_COLUMNS};
