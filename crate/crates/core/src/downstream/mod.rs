//! Downstream evaluation: next-video recommendation against popularity and
//! course-structure baselines, and linear probes of the learned
//! representations.

mod baselines;
mod classifier;
mod metrics;
mod probes;
mod rec;
mod split;

pub use baselines::{baseline_scores, kss_scores, popular_negatives, training_popularity, Baseline};
pub use classifier::{FitOptions, LinearClassifier};
pub use metrics::{accuracy, auc, average_precision, macro_prf, rank_metrics, rmse, RecReport, CUTOFFS};
pub use probes::{
    dropout_eval, kt_probe, quartile_buckets, resource_eval, resource_eval_features, resource_features,
    resource_permutation_control, resource_rates, split_811, DropoutReport, ProbeReport, ResourceLevel,
    LAMBDA_GRID,
};
pub use rec::{eval_baseline, eval_model, eval_recommendation, rank_of_target, NEGATIVES};
pub use split::{loo_split, LooSplit};

#[cfg(test)]
mod tests;
