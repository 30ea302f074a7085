//! Feature interpretation: pick exemplar pairs, describe the axis they
//! span, and validate the description against held-out entries with a
//! permutation test.
//!
//! The external describer and fidelity evaluator appear here only as
//! closures; all selection rules, orientation handling and statistics are
//! pure and seed-driven.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::features::{FeatureMatrix, Method};
use crate::numerics::{permutation_assoc_test, Choice};
use crate::rng::CounterRng;

/// Outcome carrier for one feature of one method.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureInterpretation {
    pub method: Method,
    pub target_judge: Option<String>,
    pub feature_index: usize,
    pub description: Option<String>,
    pub top_example_ids: Vec<String>,
    pub heldout_ids: Vec<String>,
    pub fidelity_choices: Vec<Choice>,
    pub p_raw: f64,
    pub p_bonferroni: f64,
    pub interpretable: bool,
    pub status: InterpretStatus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterpretStatus {
    Ok,
    /// Feature never activates; skipped.
    Dead,
    /// The describer returned nothing twice.
    DescriptionFailed,
    /// Fewer than the minimum held-out candidates with large |a|.
    InsufficientSupport,
}

impl fmt::Display for InterpretStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InterpretStatus::Ok => "ok",
            InterpretStatus::Dead => "dead",
            InterpretStatus::DescriptionFailed => "description-failed",
            InterpretStatus::InsufficientSupport => "insufficient-support",
        };
        f.write_str(s)
    }
}

/// One exemplar row for the describer.
#[derive(Clone, Debug, PartialEq)]
pub struct TopExample {
    /// Row index into the feature matrix.
    pub index: usize,
    pub pair_id: String,
    pub activation: f64,
}

/// An exemplar oriented for presentation: when `flipped` the responses are
/// shown swapped so the exhibited direction is uniformly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientedExample {
    pub index: usize,
    pub pair_id: String,
    pub flipped: bool,
    pub magnitude: f64,
}

/// The `n` entries with the largest |activation| for feature `j`, ties
/// broken by pair id. None when the feature never activates (dead).
pub fn top_examples(fm: &FeatureMatrix, j: usize, n: usize) -> Option<Vec<TopExample>> {
    let col = fm.column(j);
    let mut nonzero: Vec<TopExample> = col
        .iter()
        .enumerate()
        .filter(|(_, a)| **a != 0.0)
        .map(|(i, a)| TopExample {
            index: i,
            pair_id: fm.pair_ids[i].clone(),
            activation: *a,
        })
        .collect();
    if nonzero.is_empty() {
        return None;
    }
    nonzero.sort_by(|a, b| {
        libm::fabs(b.activation)
            .total_cmp(&libm::fabs(a.activation))
            .then(a.pair_id.cmp(&b.pair_id))
    });
    nonzero.truncate(n);
    Some(nonzero)
}

/// Orient examples so the describer always sees the positive pole first.
pub fn orient_examples(examples: &[TopExample]) -> Vec<OrientedExample> {
    examples
        .iter()
        .map(|e| OrientedExample {
            index: e.index,
            pair_id: e.pair_id.clone(),
            flipped: e.activation < 0.0,
            magnitude: libm::fabs(e.activation),
        })
        .collect()
}

/// Ask the describer (at most twice) for a non-empty description of the
/// axis exhibited by the oriented examples.
pub fn describe_feature<F>(examples: &[TopExample], mut call: F) -> Option<String>
where
    F: FnMut(&[OrientedExample]) -> Option<String>,
{
    let oriented = orient_examples(examples);
    for _attempt in 0..2 {
        if let Some(text) = call(&oriented) {
            if !text.trim().is_empty() {
                return Some(text);
            }
        }
    }
    None
}

/// Tuning knobs for the fidelity validation.
#[derive(Clone, Debug)]
pub struct FidelityConfig {
    /// Held-out sample size (the protocol default is 100).
    pub heldout_n: usize,
    /// Candidates come from this top fraction of entries by |activation|.
    pub decile: f64,
    /// Features needing fewer candidates than this are marked
    /// insufficient-support.
    pub min_support: usize,
    pub n_perm: usize,
    /// Bonferroni multiplier: features tested per method.
    pub n_features_tested: usize,
    pub seed: u64,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        FidelityConfig {
            heldout_n: 100,
            decile: 0.1,
            min_support: 20,
            n_perm: 10_000,
            n_features_tested: FeatureMatrix::N_FEATURES,
            seed: 0,
        }
    }
}

/// Seeded held-out draw: rows from the top `decile` of |a| for feature `j`,
/// excluding `exclude`, sampled without replacement up to `n`.
pub fn draw_heldout(
    fm: &FeatureMatrix,
    j: usize,
    exclude: &[usize],
    decile: f64,
    n: usize,
    seed: u64,
) -> Vec<usize> {
    let col = fm.column(j);
    let mut nonzero: Vec<(usize, f64)> = col
        .iter()
        .enumerate()
        .filter(|(_, a)| **a != 0.0)
        .map(|(i, a)| (i, libm::fabs(*a)))
        .collect();
    nonzero.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    // Decile size is taken over all rows, a floor of 1 keeps tiny sets
    // alive; the describer's exemplars leave the pool afterwards.
    let cutoff = ((fm.n_pairs() as f64 * decile) as usize).max(1);
    nonzero.truncate(cutoff);
    let mut candidates: Vec<usize> = nonzero
        .into_iter()
        .map(|(i, _)| i)
        .filter(|i| !exclude.contains(i))
        .collect();
    let mut rng = CounterRng::derive(seed, 0xF1DE ^ j as u64);
    rng.shuffle(&mut candidates);
    candidates.truncate(n);
    candidates
}

/// Validate a described feature on held-out entries.
///
/// `evaluate` maps a row index to the evaluator's choice for that pair.
/// The permutation test checks the association between choices and the
/// signed activations; Bonferroni multiplies by the features-per-method
/// count, and the feature is interpretable iff the corrected p stays
/// under 0.05.
pub fn validate_fidelity<F>(
    fm: &FeatureMatrix,
    j: usize,
    description: String,
    top: &[TopExample],
    config: &FidelityConfig,
    mut evaluate: F,
) -> FeatureInterpretation
where
    F: FnMut(usize) -> Choice,
{
    let exclude: Vec<usize> = top.iter().map(|e| e.index).collect();
    let heldout = draw_heldout(fm, j, &exclude, config.decile, config.heldout_n, config.seed);
    let mut interp = FeatureInterpretation {
        method: fm.method,
        target_judge: fm.target_judge.clone(),
        feature_index: j,
        description: Some(description),
        top_example_ids: top.iter().map(|e| e.pair_id.clone()).collect(),
        heldout_ids: heldout.iter().map(|&i| fm.pair_ids[i].clone()).collect(),
        fidelity_choices: Vec::new(),
        p_raw: 1.0,
        p_bonferroni: 1.0,
        interpretable: false,
        status: InterpretStatus::Ok,
    };
    if heldout.len() < config.min_support {
        interp.status = InterpretStatus::InsufficientSupport;
        return interp;
    }

    let choices: Vec<Choice> = heldout.iter().map(|&i| evaluate(i)).collect();
    let activations: Vec<f64> = {
        let col = fm.column(j);
        heldout.iter().map(|&i| col[i]).collect()
    };
    let p_raw = permutation_assoc_test(&choices, &activations, config.n_perm, config.seed)
        .unwrap_or(1.0);
    let p_bonferroni = (p_raw * config.n_features_tested as f64).min(1.0);
    interp.fidelity_choices = choices;
    interp.p_raw = p_raw;
    interp.p_bonferroni = p_bonferroni;
    interp.interpretable = p_bonferroni < 0.05;
    interp
}

/// A skip record for features that never reached validation.
pub fn skipped(fm: &FeatureMatrix, j: usize, status: InterpretStatus) -> FeatureInterpretation {
    FeatureInterpretation {
        method: fm.method,
        target_judge: fm.target_judge.clone(),
        feature_index: j,
        description: None,
        top_example_ids: Vec::new(),
        heldout_ids: Vec::new(),
        fidelity_choices: Vec::new(),
        p_raw: 1.0,
        p_bonferroni: 1.0,
        interpretable: false,
        status,
    }
}

/// Number of interpretable features (the per-method score, max 32).
pub fn interpretability_score(interps: &[FeatureInterpretation]) -> usize {
    interps.iter().filter(|i| i.interpretable).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;
    use alloc::string::ToString;
    use alloc::vec;

    fn fm_with_column(col: Vec<f64>) -> FeatureMatrix {
        let n = col.len();
        let mut acts = Mat::zeros(n, FeatureMatrix::N_FEATURES);
        for (i, v) in col.iter().enumerate() {
            acts.set(i, 0, *v);
        }
        FeatureMatrix::new(
            Method::DiffSae,
            None,
            (0..n).map(|i| alloc::format!("p{i:04}")).collect(),
            acts,
            (0..FeatureMatrix::N_FEATURES)
                .map(|_| crate::features::FeatureMeta::default())
                .collect(),
        )
    }

    #[test]
    fn top_examples_returns_all_when_exactly_n() {
        let fm = fm_with_column(vec![0.1, -0.2, 0.3, -0.4, 0.5]);
        let top = top_examples(&fm, 0, 5).unwrap();
        assert_eq!(top.len(), 5);
        assert_eq!(top[0].pair_id, "p0004");
        assert_eq!(top[4].pair_id, "p0000");
    }

    #[test]
    fn dead_feature_is_none() {
        let fm = fm_with_column(vec![0.0; 10]);
        assert!(top_examples(&fm, 0, 5).is_none());
    }

    #[test]
    fn top_examples_matches_sort_oracle() {
        let mut rng = crate::rng::CounterRng::new(3);
        let col: Vec<f64> = (0..200).map(|_| rng.normal()).collect();
        let fm = fm_with_column(col.clone());
        let top = top_examples(&fm, 0, 7).unwrap();
        // Oracle: full sort by |a| desc then id.
        let mut all: Vec<(usize, f64)> = col.iter().cloned().enumerate().collect();
        all.sort_by(|a, b| {
            b.1.abs()
                .total_cmp(&a.1.abs())
                .then(alloc::format!("p{:04}", a.0).cmp(&alloc::format!("p{:04}", b.0)))
        });
        for (got, want) in top.iter().zip(all.iter()) {
            assert_eq!(got.index, want.0);
        }
    }

    #[test]
    fn orientation_flips_negative_examples() {
        let fm = fm_with_column(vec![1.0, -2.0, 0.5]);
        let top = top_examples(&fm, 0, 3).unwrap();
        let oriented = orient_examples(&top);
        let flipped: Vec<bool> = oriented.iter().map(|o| o.flipped).collect();
        // Sorted by |a|: -2.0 (flipped), 1.0, 0.5.
        assert_eq!(flipped, vec![true, false, false]);
    }

    #[test]
    fn describe_retries_once_then_fails() {
        let fm = fm_with_column(vec![1.0, -2.0, 0.5, 0.7, -0.3]);
        let top = top_examples(&fm, 0, 5).unwrap();
        let mut calls = 0;
        let result = describe_feature(&top, |_| {
            calls += 1;
            None
        });
        assert_eq!(result, None);
        assert_eq!(calls, 2);

        let mut calls = 0;
        let result = describe_feature(&top, |_| {
            calls += 1;
            if calls == 1 {
                Some("  ".to_string())
            } else {
                Some("contrasts apples with oranges".to_string())
            }
        });
        assert_eq!(result.as_deref(), Some("contrasts apples with oranges"));
        assert_eq!(calls, 2);
    }

    fn big_fm(n: usize, seed: u64) -> FeatureMatrix {
        let mut rng = crate::rng::CounterRng::new(seed);
        fm_with_column((0..n).map(|_| rng.normal()).collect())
    }

    #[test]
    fn heldout_is_disjoint_from_describer_examples() {
        let fm = big_fm(2000, 5);
        let top = top_examples(&fm, 0, 5).unwrap();
        let exclude: Vec<usize> = top.iter().map(|e| e.index).collect();
        let heldout = draw_heldout(&fm, 0, &exclude, 0.1, 100, 42);
        assert_eq!(heldout.len(), 100);
        for idx in &heldout {
            assert!(!exclude.contains(idx));
        }
        // All draws come from the top decile by |a|.
        let col = fm.column(0);
        let mut mags: Vec<f64> = col.iter().map(|a| libm::fabs(*a)).collect();
        mags.sort_by(|a, b| b.total_cmp(a));
        let decile_floor = mags[199];
        for idx in &heldout {
            assert!(libm::fabs(col[*idx]) >= decile_floor);
        }
    }

    #[test]
    fn perfect_evaluator_is_interpretable() {
        let fm = big_fm(2000, 6);
        let top = top_examples(&fm, 0, 5).unwrap();
        let col = fm.column(0);
        let config = FidelityConfig {
            seed: 9,
            ..FidelityConfig::default()
        };
        let interp = validate_fidelity(&fm, 0, "axis".to_string(), &top, &config, |i| {
            if col[i] > 0.0 {
                Choice::A
            } else {
                Choice::B
            }
        });
        assert_eq!(interp.status, InterpretStatus::Ok);
        assert!(interp.interpretable);
        assert!(interp.p_raw <= 1.0 / 10_000.0 + 1e-12);
        assert_eq!(interp.heldout_ids.len(), 100);
        // Disjointness invariant.
        for id in &interp.heldout_ids {
            assert!(!interp.top_example_ids.contains(id));
        }
    }

    #[test]
    fn random_evaluator_is_rarely_interpretable() {
        let mut interpretable_count = 0;
        for trial in 0..20 {
            let fm = big_fm(1500, 100 + trial);
            let top = top_examples(&fm, 0, 5).unwrap();
            let config = FidelityConfig {
                n_perm: 1000,
                seed: trial,
                ..FidelityConfig::default()
            };
            let mut rng = crate::rng::CounterRng::new(999 + trial);
            let interp = validate_fidelity(&fm, 0, "noise".to_string(), &top, &config, |_| {
                match rng.below(3) {
                    0 => Choice::A,
                    1 => Choice::B,
                    _ => Choice::Neither,
                }
            });
            if interp.interpretable {
                interpretable_count += 1;
            }
        }
        assert!(interpretable_count <= 1, "{interpretable_count} of 20 null trials passed");
    }

    #[test]
    fn bonferroni_arithmetic() {
        // p_raw = 0.002 over 32 features → 0.064, not interpretable.
        let p_raw: f64 = 0.002;
        let p_bonf = (p_raw * 32.0).min(1.0);
        assert!((p_bonf - 0.064).abs() < 1e-12);
        assert!(p_bonf >= 0.05);

        // The full path: a scripted evaluator with mild agreement can land
        // near there, but the arithmetic invariants always hold.
        let fm = big_fm(800, 7);
        let top = top_examples(&fm, 0, 5).unwrap();
        let col = fm.column(0);
        let mut rng = crate::rng::CounterRng::new(31);
        let config = FidelityConfig {
            n_perm: 2000,
            seed: 3,
            ..FidelityConfig::default()
        };
        let interp = validate_fidelity(&fm, 0, "weak axis".to_string(), &top, &config, |i| {
            if rng.bernoulli(0.6) {
                if col[i] > 0.0 {
                    Choice::A
                } else {
                    Choice::B
                }
            } else {
                Choice::Neither
            }
        });
        assert!(interp.p_bonferroni >= interp.p_raw);
        assert_eq!(interp.interpretable, interp.p_bonferroni < 0.05);
        if interp.interpretable {
            assert!(interp.p_raw < 0.05 / 32.0 + 1e-12);
        }
    }

    #[test]
    fn sparse_features_marked_insufficient() {
        let mut col = vec![0.0; 500];
        // Only 12 nonzero entries: 5 go to the describer, 7 remain.
        for (slot, v) in col.iter_mut().take(12).enumerate() {
            *v = 1.0 + slot as f64;
        }
        let fm = fm_with_column(col);
        let top = top_examples(&fm, 0, 5).unwrap();
        let config = FidelityConfig::default();
        let interp = validate_fidelity(&fm, 0, "rare".to_string(), &top, &config, |_| Choice::A);
        assert_eq!(interp.status, InterpretStatus::InsufficientSupport);
        assert!(!interp.interpretable);
    }

    #[test]
    fn score_counts_interpretable() {
        let fm = big_fm(100, 8);
        let mut interps: Vec<FeatureInterpretation> = (0..32)
            .map(|j| skipped(&fm, j, InterpretStatus::Dead))
            .collect();
        assert_eq!(interpretability_score(&interps), 0);
        for i in interps.iter_mut().take(18) {
            i.interpretable = true;
        }
        assert_eq!(interpretability_score(&interps), 18);
        for i in interps.iter_mut() {
            i.interpretable = true;
        }
        assert_eq!(interpretability_score(&interps), 32);
    }

    #[test]
    fn validation_is_deterministic() {
        let fm = big_fm(1200, 9);
        let top = top_examples(&fm, 0, 5).unwrap();
        let col = fm.column(0);
        let config = FidelityConfig {
            n_perm: 1000,
            seed: 77,
            ..FidelityConfig::default()
        };
        let eval = |i: usize| if col[i] > 0.2 { Choice::A } else { Choice::Neither };
        let a = validate_fidelity(&fm, 0, "axis".to_string(), &top, &config, eval);
        let b = validate_fidelity(&fm, 0, "axis".to_string(), &top, &config, eval);
        assert_eq!(a, b);
    }
}
