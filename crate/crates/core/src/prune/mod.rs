//! Magnitude pruning and its mean-squared-error theory.

mod mask;
mod report;
mod theory;

pub use mask::{
    apply_mask_and_measure, build_mask, kept_count_for, mask_error_stats, MaskMatrix, MeanEstimate, PruneConfig,
    PruneMethod,
};
pub use report::{monte_carlo_errors, run_theory_report, TheoryReport, MIN_SAMPLES};
pub use theory::{
    comparison_identities, e1_closed, e2_closed, e3_closed, mse_closed_form, prune_threshold, q_function,
    standardized_threshold, ComparisonIdentities,
};
