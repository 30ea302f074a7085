//! ROC-AUC as the Mann-Whitney statistic, computed exactly.

use alloc::vec::Vec;

use super::NumericsError;

/// ROC-AUC: P(score⁺ > score⁻) + ½·P(score⁺ = score⁻).
///
/// Win and tie counts are accumulated as integers over the sorted scores,
/// so the result is exactly the brute-force all-pairs value.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, NumericsError> {
    if scores.len() != labels.len() {
        return Err(NumericsError::DimensionMismatch);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(NumericsError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut wins: u128 = 0; // positive strictly above negative
    let mut ties: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        // Group of equal scores.
        let mut j = i;
        let mut group_pos: u128 = 0;
        let mut group_neg: u128 = 0;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                group_pos += 1;
            } else {
                group_neg += 1;
            }
            j += 1;
        }
        wins += group_pos * neg_below;
        ties += group_pos * group_neg;
        neg_below += group_neg;
        i = j;
    }

    let numer = 2 * wins + ties;
    let denom = 2 * (n_pos as u128) * (n_neg as u128);
    Ok(numer as f64 / denom as f64)
}
