//! Self-contained numerical and statistical kernels.
//!
//! PCA via one-sided Jacobi SVD, L2- and L1-regularized logistic regression,
//! ROC-AUC, a permutation association test, the exact two-sided binomial
//! test, and percentile bootstrap confidence intervals. No external linear
//! algebra: all routines are deterministic and seed-driven.

mod binomial;
mod bootstrap;
mod lasso;
mod logistic;
mod pca;
mod permutation;
mod rank;

pub use binomial::binomial_two_sided;
pub use bootstrap::{bootstrap_ci, BootstrapCi};
pub use lasso::lasso_logistic_path;
pub use logistic::{logistic_fit, logistic_loss, predict_proba, LogisticModel};
pub use pca::{pca_fit, pca_project, PcaModel, Projection};
pub use permutation::{association_statistic, permutation_assoc_test, Choice};
pub use rank::roc_auc;

use core::fmt;

/// Errors from the numeric kernels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NumericsError {
    /// Input matrix/vector dimensions do not line up.
    DimensionMismatch,
    /// Operation needs more data than was provided.
    TooFewSamples,
    /// A binary-response routine was given a single class.
    SingleClass,
    /// Input contained NaN or infinity.
    NonFinite,
    /// A parameter was outside its valid range.
    InvalidParameter(&'static str),
    /// Statistic failed on the full dataset.
    StatisticFailed,
}

impl fmt::Display for NumericsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumericsError::DimensionMismatch => write!(f, "dimension mismatch"),
            NumericsError::TooFewSamples => write!(f, "too few samples"),
            NumericsError::SingleClass => write!(f, "labels contain a single class"),
            NumericsError::NonFinite => write!(f, "non-finite input"),
            NumericsError::InvalidParameter(p) => write!(f, "invalid parameter: {p}"),
            NumericsError::StatisticFailed => write!(f, "statistic failed on full data"),
        }
    }
}

impl core::error::Error for NumericsError {}
