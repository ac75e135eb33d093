//! Cross-validated evaluation.
//!
//! Subjects are split into folds with disjoint test blocks, a model is
//! trained per fold, test trials are scored through their Monte-Carlo
//! posteriors and the classify-or-abstain rule is swept over confidence
//! thresholds. Posterior variances of the two true classes are compared with
//! a Mann-Whitney U test.

mod cv;
mod folds;
mod metrics;
mod report;
mod stats;

pub use cv::{run_cross_validation, CvOptions, CvReport, FoldResult, UncertaintyRow};
pub use folds::{make_folds, train_val_split, Fold, FoldPlan};
pub use metrics::{alpha_sweep, binarize_label, evaluate_fold, AlphaMetrics, AlphaSweepReport, EvalRecord, ValenceClass};
pub use report::{
    confusion_csv, confusion_file_name, report_csv, summary_from_csv, uncertainty_csv, write_report,
    REPORT_FILE, SUMMARY_FILE, UNCERTAINTY_FILE,
};
pub use stats::{mann_whitney_exact, mann_whitney_normal, mann_whitney_u, MannWhitney, PValueMethod};

use thiserror::Error;

use crate::bayes::BayesError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("valence {value} outside scale ({min}, {max})")]
    OutOfScale { value: f64, min: f64, max: f64 },
    #[error("need {needed} subjects, have {available}")]
    InsufficientSubjects { needed: usize, available: usize },
    #[error("no evaluation records")]
    EmptyRecords,
    #[error("empty sample")]
    EmptyInput,
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("coverage increased from {previous} at alpha {previous_alpha} to {next} at alpha {next_alpha}")]
    CoverageNotMonotone {
        previous_alpha: f64,
        previous: f64,
        next_alpha: f64,
        next: f64,
    },
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<EvalError>,
    },
    #[error("subject `{0}` has no trials in the dataset")]
    UnknownSubject(String),
    #[error("malformed report: {0}")]
    MalformedReport(String),
    #[error(transparent)]
    Bayes(#[from] BayesError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}
