//! Batch acquisition: mutual-information scores (BPMI, LFMI), the
//! max-uncertainty and random baselines, cost-aware greedy batch
//! construction, adaptive repeats and jitter.

mod greedy;
mod scores;
mod types;

pub use greedy::{apply_jitter, greedy_batch, greedy_over_pool, repeats_for, CandidatePool};
pub use scores::{
    bpmi_from_joint, bpmi_score, lfmi_from_joint, lfmi_score, linearize_probit, max_uncertainty_from_moments,
    max_uncertainty_score, LATENT_NUGGET, PROBABILITY_NUGGET,
};
pub use types::{AcquisitionConfig, Query, QueryBatch, Strategy};
