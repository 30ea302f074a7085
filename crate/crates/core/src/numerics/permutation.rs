//! Permutation test for association between categorical choices and signed
//! activations.

use alloc::vec::Vec;

use super::NumericsError;
use crate::rng::CounterRng;

/// Three-way choice emitted by a fidelity evaluator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Choice {
    A,
    B,
    Neither,
}

/// Match score of one (choice, activation) pair: +1 when the choice points
/// the same way as the activation sign, −1 when it points the other way,
/// 0 for Neither or a zero activation.
#[inline]
fn match_score(choice: Choice, activation: f64) -> i64 {
    match choice {
        Choice::Neither => 0,
        Choice::A => {
            if activation > 0.0 {
                1
            } else if activation < 0.0 {
                -1
            } else {
                0
            }
        }
        Choice::B => {
            if activation < 0.0 {
                1
            } else if activation > 0.0 {
                -1
            } else {
                0
            }
        }
    }
}

/// Sum of match scores over all entries.
pub fn association_statistic(choices: &[Choice], activations: &[f64]) -> i64 {
    choices
        .iter()
        .zip(activations)
        .map(|(&c, &a)| match_score(c, a))
        .sum()
}

/// One-sided permutation p-value for the association statistic.
///
/// The null distribution permutes the activation list against the fixed
/// choices; each replicate shuffles a fresh copy with a derived seed, so
/// the result is independent of evaluation order. Add-one smoothing:
/// p = (1 + #{S_perm ≥ S_obs}) / (1 + n_perm).
pub fn permutation_assoc_test(
    choices: &[Choice],
    activations: &[f64],
    n_perm: usize,
    seed: u64,
) -> Result<f64, NumericsError> {
    if choices.len() != activations.len() {
        return Err(NumericsError::DimensionMismatch);
    }
    if n_perm < 1000 {
        return Err(NumericsError::InvalidParameter("n_perm"));
    }
    if activations.iter().any(|a| !a.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    if choices.iter().all(|&c| c == Choice::Neither) {
        return Ok(1.0);
    }

    let observed = association_statistic(choices, activations);
    let mut at_least: usize = 0;
    for rep in 0..n_perm {
        let mut rng = CounterRng::derive(seed, rep as u64);
        let mut permuted: Vec<f64> = activations.to_vec();
        rng.shuffle(&mut permuted);
        if association_statistic(choices, &permuted) >= observed {
            at_least += 1;
        }
    }
    Ok((1 + at_least) as f64 / (1 + n_perm) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_agreement_hits_the_floor() {
        let n = 100;
        let choices: Vec<Choice> = (0..n)
            .map(|i| if i % 2 == 0 { Choice::A } else { Choice::B })
            .collect();
        let acts: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let p = permutation_assoc_test(&choices, &acts, 10_000, 7).unwrap();
        assert!(p <= 1.0 / 10_000.0 + 1e-12, "p = {p}");
    }

    #[test]
    fn all_neither_gives_one() {
        let choices = [Choice::Neither; 10];
        let acts = [1.0; 10];
        assert_eq!(permutation_assoc_test(&choices, &acts, 1000, 1).unwrap(), 1.0);
    }

    #[test]
    fn zero_activations_score_zero() {
        assert_eq!(match_score(Choice::A, 0.0), 0);
        assert_eq!(match_score(Choice::B, 0.0), 0);
        assert_eq!(match_score(Choice::A, 2.0), 1);
        assert_eq!(match_score(Choice::B, 2.0), -1);
        assert_eq!(match_score(Choice::A, -2.0), -1);
        assert_eq!(match_score(Choice::B, -2.0), 1);
    }

    #[test]
    fn too_few_permutations_rejected() {
        let r = permutation_assoc_test(&[Choice::A], &[1.0], 10, 0);
        assert_eq!(r.unwrap_err(), NumericsError::InvalidParameter("n_perm"));
    }

    #[test]
    fn deterministic_given_seed() {
        let choices = [Choice::A, Choice::B, Choice::A, Choice::Neither, Choice::B];
        let acts = [0.3, -0.2, 0.9, 0.1, 0.4];
        let a = permutation_assoc_test(&choices, &acts, 1000, 99).unwrap();
        let b = permutation_assoc_test(&choices, &acts, 1000, 99).unwrap();
        assert_eq!(a, b);
    }
}
