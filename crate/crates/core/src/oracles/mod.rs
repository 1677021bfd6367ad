//! Ground-truth probability fields and the file protocol for external
//! simulators.

mod exchange;
mod toy;

pub use exchange::{
    emit_requests, ingest_results, read_requests, requests_path, results_path, write_results,
    RequestRecord, ResultRecord,
};
pub use toy::{
    hf_probability_linear, hf_probability_nonlinear, lf_boundary, lf_probability, sample_labels,
    OracleKind, OracleSpec, ToyParams,
};
