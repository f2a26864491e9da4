//! Metrics, evaluation protocols and statistical tests.
//!
//! Fold and subset aggregates use population standard deviations. Results
//! are kept in long format ([`ExperimentResult`]) and summarized by
//! [`StatReport`].

pub mod metrics;
pub mod protocols;
pub mod results;
pub mod stats;

pub use metrics::{accuracy, auc, mean_std};
pub use protocols::{
    kfold_cv, kfold_cv_pocus, label_efficiency, partition_patients, stratified_patient_folds, Condition, CvSummary,
    LabelEfficiencyConfig,
};
pub use results::{ExperimentResult, ResultRow};
pub use stats::{
    bonferroni, paired_t_test, posthoc_paired_tests, rm_anova_two_way, rm_anova_two_way_cells, AnovaEffect,
    AnovaTable, Comparison, Family, MethodStats, PairedTest, StatReport, DEFAULT_ALPHA,
};
