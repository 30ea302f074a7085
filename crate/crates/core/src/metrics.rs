//! Evaluation harness: predictiveness (ROC-AUC of a regularized logistic
//! probe), the length-controlled Δwin-rate with bootstrap confidence
//! intervals, and judge agreement / position-bias statistics.
//!
//! Label orientation throughout: y = 1 means response A is preferred, so a
//! positive Δwin-rate says the feature's positive pole (the r_A
//! perspective) wins more often.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::corpus::{HumanLabel, JudgeChoice, PairSet};
use crate::features::{FeatureMatrix, Method};
use crate::mat::Mat;
use crate::numerics::{
    binomial_two_sided, bootstrap_ci, logistic_fit, roc_auc, NumericsError,
};
use crate::rng::CounterRng;

#[derive(Clone, Debug, PartialEq)]
pub enum MetricsError {
    NoValidLabels,
    DegenerateSplit,
    Numerics(NumericsError),
    DimensionMismatch,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::NoValidLabels => write!(f, "no valid labels"),
            MetricsError::DegenerateSplit => {
                write!(f, "train/test split degenerate after retry")
            }
            MetricsError::Numerics(e) => write!(f, "numerics: {e}"),
            MetricsError::DimensionMismatch => write!(f, "dimension mismatch"),
        }
    }
}

impl core::error::Error for MetricsError {}

impl From<NumericsError> for MetricsError {
    fn from(e: NumericsError) -> Self {
        MetricsError::Numerics(e)
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// ROC-AUC of an L2-logistic classifier predicting the judge's choice from
/// all 32 features, on a seeded 80/20 split with invalid labels dropped.
///
/// A test fold that loses one class is re-split once with the next seed.
pub fn predictiveness(
    fm: &FeatureMatrix,
    labels_a_preferred: &[Option<bool>],
    seed: u64,
) -> Result<f64, MetricsError> {
    if labels_a_preferred.len() != fm.n_pairs() {
        return Err(MetricsError::DimensionMismatch);
    }
    let valid: Vec<(usize, bool)> = labels_a_preferred
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|y| (i, y)))
        .collect();
    if valid.len() < 5 {
        return Err(MetricsError::NoValidLabels);
    }

    for attempt in 0..2 {
        let mut order: Vec<usize> = (0..valid.len()).collect();
        let mut rng = CounterRng::derive(seed.wrapping_add(attempt), 0x41C);
        rng.shuffle(&mut order);
        let n_train = ((order.len() as f64 * 0.8) as usize).clamp(1, order.len() - 1);

        let mut x_train = Mat::zeros(n_train, FeatureMatrix::N_FEATURES);
        let mut y_train = Vec::with_capacity(n_train);
        for (row, &oi) in order[..n_train].iter().enumerate() {
            let (idx, label) = valid[oi];
            x_train.row_mut(row).copy_from_slice(fm.activations.row(idx));
            y_train.push(label);
        }
        let n_test = order.len() - n_train;
        let mut x_test = Mat::zeros(n_test, FeatureMatrix::N_FEATURES);
        let mut y_test = Vec::with_capacity(n_test);
        for (row, &oi) in order[n_train..].iter().enumerate() {
            let (idx, label) = valid[oi];
            x_test.row_mut(row).copy_from_slice(fm.activations.row(idx));
            y_test.push(label);
        }

        let train_ok = y_train.iter().any(|&y| y) && !y_train.iter().all(|&y| y);
        let test_ok = y_test.iter().any(|&y| y) && !y_test.iter().all(|&y| y);
        if !(train_ok && test_ok) {
            continue;
        }

        let model = logistic_fit(&x_train, &y_train, 1.0 / n_train as f64)?;
        let scores: Vec<f64> = (0..n_test).map(|i| model.decision(x_test.row(i))).collect();
        return Ok(roc_auc(&scores, &y_test)?);
    }
    Err(MetricsError::DegenerateSplit)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EffectStatus {
    Ok,
    /// Too few entries with nonzero activation and a valid label.
    InsufficientSupport,
    /// The sign-split logistic fit failed on the full data.
    FitFailed,
}

/// Length-controlled Δwin-rate for one feature and one judge.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectReport {
    pub method: Method,
    pub feature_index: usize,
    /// Judge name, or "human".
    pub judge: String,
    pub delta_winrate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Entries with nonzero activation (before label filtering).
    pub n_active: usize,
    /// Point estimate fell outside the bootstrap interval.
    pub flagged: bool,
    pub status: EffectStatus,
}

#[derive(Clone, Debug)]
pub struct EffectOptions {
    pub n_boot: usize,
    pub quantiles: (f64, f64),
    pub seed: u64,
    /// Include the standardized word-count difference as a control.
    pub length_control: bool,
    pub min_active: usize,
}

impl Default for EffectOptions {
    fn default() -> Self {
        EffectOptions {
            n_boot: 1000,
            quantiles: (0.05, 0.95),
            seed: 0,
            length_control: true,
            min_active: 30,
        }
    }
}

/// Fit the sign-split logistic model Pr(y=1) = σ(α + β·1[a>0] + γ·x) on the
/// entries with nonzero activation and a valid label, then average the
/// predicted win-probability change from flipping the feature sign.
///
/// `len_delta` is word_count_a − word_count_b per pair, standardized
/// internally on the restricted set (and re-standardized per bootstrap
/// resample).
pub fn delta_winrate(
    method: Method,
    feature_index: usize,
    judge: &str,
    activations: &[f64],
    labels_a_preferred: &[Option<bool>],
    len_delta: &[f64],
    options: &EffectOptions,
) -> EffectReport {
    let n = activations.len();
    let mut report = EffectReport {
        method,
        feature_index,
        judge: String::from(judge),
        delta_winrate: 0.0,
        ci_lo: 0.0,
        ci_hi: 0.0,
        n_active: activations.iter().filter(|a| **a != 0.0).count(),
        flagged: false,
        status: EffectStatus::Ok,
    };
    if labels_a_preferred.len() != n || len_delta.len() != n {
        report.status = EffectStatus::FitFailed;
        return report;
    }

    // Restricted set: nonzero activation and a valid label.
    let subset: Vec<usize> = (0..n)
        .filter(|&i| activations[i] != 0.0 && labels_a_preferred[i].is_some())
        .collect();
    if subset.len() < options.min_active {
        report.status = EffectStatus::InsufficientSupport;
        return report;
    }

    let pos: Vec<f64> = subset
        .iter()
        .map(|&i| if activations[i] > 0.0 { 1.0 } else { 0.0 })
        .collect();
    let raw_len: Vec<f64> = subset.iter().map(|&i| len_delta[i]).collect();
    let y: Vec<bool> = subset
        .iter()
        .map(|&i| labels_a_preferred[i].expect("subset is labeled"))
        .collect();

    let full = fit_delta(&pos, &raw_len, &y, options.length_control);
    let point = match full {
        Some(v) => v,
        None => {
            report.status = EffectStatus::FitFailed;
            return report;
        }
    };

    let ci = bootstrap_ci(
        |idx| {
            let pos_s: Vec<f64> = idx.iter().map(|&i| pos[i]).collect();
            let len_s: Vec<f64> = idx.iter().map(|&i| raw_len[i]).collect();
            let y_s: Vec<bool> = idx.iter().map(|&i| y[i]).collect();
            fit_delta(&pos_s, &len_s, &y_s, options.length_control)
        },
        subset.len(),
        options.n_boot,
        options.quantiles,
        options.seed,
    );
    match ci {
        Ok(ci) => {
            report.delta_winrate = point;
            report.ci_lo = ci.lo;
            report.ci_hi = ci.hi;
            report.flagged = !(ci.lo <= point && point <= ci.hi);
        }
        Err(_) => {
            report.delta_winrate = point;
            report.status = EffectStatus::FitFailed;
        }
    }
    report
}

/// One sign-split fit and Δ evaluation. None when the fit is impossible
/// (single-class labels in a resample).
fn fit_delta(pos: &[f64], raw_len: &[f64], y: &[bool], length_control: bool) -> Option<f64> {
    let n = pos.len();
    // Standardize the length control on this (re)sample.
    let mean = raw_len.iter().sum::<f64>() / n as f64;
    let var = raw_len.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = if var > 0.0 { libm::sqrt(var) } else { 1.0 };
    let x_ctrl: Vec<f64> = raw_len.iter().map(|v| (v - mean) / std).collect();

    let cols = if length_control { 2 } else { 1 };
    let mut design = Mat::zeros(n, cols);
    for i in 0..n {
        design.set(i, 0, pos[i]);
        if length_control {
            design.set(i, 1, x_ctrl[i]);
        }
    }
    let model = logistic_fit(&design, y, 1.0 / n as f64).ok()?;
    let alpha = model.intercept;
    let beta = model.weights[0];
    let gamma = if length_control { model.weights[1] } else { 0.0 };

    let mut delta = 0.0;
    for xi in &x_ctrl {
        let with = sigmoid(alpha + beta + gamma * xi);
        let without = sigmoid(alpha + gamma * xi);
        delta += with - without;
    }
    Some(delta / n as f64)
}

/// Per-judge agreement and position-bias summary.
#[derive(Clone, Debug, PartialEq)]
pub struct AgreementRow {
    pub judge: String,
    /// Percent agreement with the human label, over pairs where both are
    /// valid; None when no such pairs exist.
    pub human_agreement_pct: Option<f64>,
    pub human_n: usize,
    /// Unweighted mean pairwise agreement with the other judges.
    pub other_llm_agreement_pct: Option<f64>,
    /// Percent of valid judgments choosing response B.
    pub response_b_rate_pct: f64,
    pub valid_n: usize,
    /// Exact two-sided binomial p-value against Binomial(n, 1/2).
    pub position_bias_p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgreementTable {
    pub rows: Vec<AgreementRow>,
}

/// Percent agreement between two judges over mutually valid entries.
pub fn pairwise_agreement(pairs: &PairSet, judge_a: &str, judge_b: &str) -> Option<f64> {
    let mut same = 0usize;
    let mut total = 0usize;
    for pair in &pairs.pairs {
        let (Some(a), Some(b)) = (pair.judge_labels.get(judge_a), pair.judge_labels.get(judge_b))
        else {
            continue;
        };
        if Why::valid(*a) && Why::valid(*b) {
            total += 1;
            if a == b {
                same += 1;
            }
        }
    }
    if total == 0 {
        None
    } else {
        Some(100.0 * same as f64 / total as f64)
    }
}

// Tiny helper namespace so the validity rule reads at call sites.
struct Why;
impl Why {
    #[inline]
    fn valid(c: JudgeChoice) -> bool {
        matches!(c, JudgeChoice::A | JudgeChoice::B)
    }
}

/// Agreement table over the given judges (Table-2-style layout).
pub fn agreement_stats(pairs: &PairSet, judges: &[String]) -> AgreementTable {
    let mut rows = Vec::with_capacity(judges.len());
    for judge in judges {
        let mut human_same = 0usize;
        let mut human_total = 0usize;
        let mut b_count = 0u64;
        let mut valid_n = 0u64;
        for pair in &pairs.pairs {
            let Some(&choice) = pair.judge_labels.get(judge) else {
                continue;
            };
            if !Why::valid(choice) {
                continue;
            }
            valid_n += 1;
            if choice == JudgeChoice::B {
                b_count += 1;
            }
            let human = match pair.human_label {
                HumanLabel::A => Some(JudgeChoice::A),
                HumanLabel::B => Some(JudgeChoice::B),
                HumanLabel::None => None,
            };
            if let Some(h) = human {
                human_total += 1;
                if h == choice {
                    human_same += 1;
                }
            }
        }

        let others: Vec<f64> = judges
            .iter()
            .filter(|other| *other != judge)
            .filter_map(|other| pairwise_agreement(pairs, judge, other))
            .collect();
        let other_mean = if others.is_empty() {
            None
        } else {
            Some(others.iter().sum::<f64>() / others.len() as f64)
        };

        rows.push(AgreementRow {
            judge: judge.clone(),
            human_agreement_pct: if human_total > 0 {
                Some(100.0 * human_same as f64 / human_total as f64)
            } else {
                None
            },
            human_n: human_total,
            other_llm_agreement_pct: other_mean,
            response_b_rate_pct: if valid_n > 0 {
                100.0 * b_count as f64 / valid_n as f64
            } else {
                0.0
            },
            valid_n: valid_n as usize,
            position_bias_p: binomial_two_sided(b_count, valid_n, 0.5).unwrap_or(1.0),
        });
    }
    AgreementTable { rows }
}
