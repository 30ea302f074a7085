//! Paired preference data: domain types plus the deterministic
//! normalization and split operations every downstream stage relies on.
//!
//! A/B assignment is fixed here once, at normalization time, by a seeded
//! coin flip per pair; nothing downstream may reshuffle it.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::rng::CounterRng;

/// Human preference over a pair; `None` when no annotation exists.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HumanLabel {
    A,
    B,
    None,
}

/// An LLM judge's verdict; `Invalid` covers refusals and unparseable
/// replies, and such pairs are excluded per-judge downstream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum JudgeChoice {
    A,
    B,
    Invalid,
}

/// A later conversation turn retained only until normalization truncates
/// the pair to its first turn.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    pub role: String,
    pub text: String,
}

/// One prompt with two candidate responses in fixed A/B positions.
#[derive(Clone, Debug, PartialEq)]
pub struct PreferencePair {
    pub id: String,
    pub prompt: String,
    pub response_a: String,
    pub response_b: String,
    pub human_label: HumanLabel,
    pub judge_labels: BTreeMap<String, JudgeChoice>,
    pub word_count_a: usize,
    pub word_count_b: usize,
    pub source: String,
    pub extra_turns: Vec<Turn>,
    pub flags: Vec<String>,
}

impl PreferencePair {
    pub fn new(
        id: String,
        prompt: String,
        response_a: String,
        response_b: String,
        human_label: HumanLabel,
        source: String,
    ) -> Result<Self, CorpusError> {
        if response_a == response_b {
            return Err(CorpusError::IdenticalResponses);
        }
        let word_count_a = word_count(&response_a);
        let word_count_b = word_count(&response_b);
        Ok(PreferencePair {
            id,
            prompt,
            response_a,
            response_b,
            human_label,
            judge_labels: BTreeMap::new(),
            word_count_a,
            word_count_b,
            source,
            extra_turns: Vec::new(),
            flags: Vec::new(),
        })
    }

    /// Swap the two responses and remap every label consistently.
    pub fn swap_responses(&mut self) {
        core::mem::swap(&mut self.response_a, &mut self.response_b);
        core::mem::swap(&mut self.word_count_a, &mut self.word_count_b);
        self.human_label = match self.human_label {
            HumanLabel::A => HumanLabel::B,
            HumanLabel::B => HumanLabel::A,
            HumanLabel::None => HumanLabel::None,
        };
        for choice in self.judge_labels.values_mut() {
            *choice = match *choice {
                JudgeChoice::A => JudgeChoice::B,
                JudgeChoice::B => JudgeChoice::A,
                JudgeChoice::Invalid => JudgeChoice::Invalid,
            };
        }
    }
}

/// Ordered collection of pairs with the seed that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<PreferencePair>,
    pub seed: u64,
}

impl PairSet {
    /// Ids must be unique.
    pub fn new(pairs: Vec<PreferencePair>, seed: u64) -> Result<Self, CorpusError> {
        let mut seen = alloc::collections::BTreeSet::new();
        for p in &pairs {
            if !seen.insert(p.id.clone()) {
                return Err(CorpusError::DuplicateId(p.id.clone()));
            }
        }
        Ok(PairSet { pairs, seed })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Prompt/response embeddings attached to a pair. All three vectors share
/// one dimension d.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub pair_id: String,
    pub e_prompt: Vec<f64>,
    pub e_a: Vec<f64>,
    pub e_b: Vec<f64>,
}

impl EmbeddingRecord {
    pub fn dim(&self) -> usize {
        self.e_prompt.len()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let d = self.e_prompt.len();
        if d == 0 || self.e_a.len() != d || self.e_b.len() != d {
            return Err(CorpusError::EmbeddingDimension(self.pair_id.clone()));
        }
        let finite = self
            .e_prompt
            .iter()
            .chain(&self.e_a)
            .chain(&self.e_b)
            .all(|v| v.is_finite());
        if !finite {
            return Err(CorpusError::EmbeddingDimension(self.pair_id.clone()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CorpusError {
    IdenticalResponses,
    DuplicateId(String),
    EmptyResult,
    TooFewPairs,
    InvalidRatio,
    EmbeddingDimension(String),
}

impl fmt::Display for CorpusError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusError::IdenticalResponses => write!(f, "responses are identical"),
            CorpusError::DuplicateId(id) => write!(f, "duplicate pair id {id}"),
            CorpusError::EmptyResult => write!(f, "operation left no pairs"),
            CorpusError::TooFewPairs => write!(f, "fewer than 2 pairs"),
            CorpusError::InvalidRatio => write!(f, "split ratio must lie in (0, 1)"),
            CorpusError::EmbeddingDimension(id) => {
                write!(f, "embedding dimensions invalid for pair {id}")
            }
        }
    }
}

impl core::error::Error for CorpusError {}

/// Whitespace-token count; the length control downstream is defined on it.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Normalize a pair set: deduplicate identical prompts (one uniformly
/// random survivor each), truncate to the first turn, apply the pluggable
/// keep predicate to the prompt, then swap each pair's responses with
/// probability 1/2, remapping labels consistently.
pub fn normalize<F>(pairs: PairSet, seed: u64, keep_predicate: F) -> Result<PairSet, CorpusError>
where
    F: Fn(&str) -> bool,
{
    let mut rng = CounterRng::derive(seed, 0x4E52); // normalize stream

    // Group by trimmed prompt in first-occurrence order.
    let mut group_of: BTreeMap<String, usize> = BTreeMap::new();
    let mut groups: Vec<Vec<PreferencePair>> = Vec::new();
    for pair in pairs.pairs {
        let key = String::from(pair.prompt.trim());
        match group_of.get(&key) {
            Some(&g) => groups[g].push(pair),
            None => {
                group_of.insert(key, groups.len());
                groups.push(alloc::vec![pair]);
            }
        }
    }

    let mut kept: Vec<PreferencePair> = Vec::with_capacity(groups.len());
    for group in groups {
        let survivor = if group.len() > 1 {
            let pick = rng.below(group.len());
            group.into_iter().nth(pick).expect("index in range")
        } else {
            group.into_iter().next().expect("nonempty group")
        };
        kept.push(survivor);
    }

    // First-turn truncation, then the pluggable filter.
    for pair in &mut kept {
        pair.extra_turns.clear();
    }
    kept.retain(|pair| keep_predicate(&pair.prompt));

    // Randomized A/B assignment.
    for pair in &mut kept {
        if rng.bernoulli(0.5) {
            pair.swap_responses();
        }
    }

    if kept.is_empty() {
        return Err(CorpusError::EmptyResult);
    }
    PairSet::new(kept, seed)
}

/// Parse a subjective-filter reply. `Some(true)` iff the reply contains the
/// exact token sequence `<answer>Yes</answer>`; `None` when no verdict tag
/// is present (the pair is then retained and flagged).
pub fn parse_subjective_reply(reply: &str) -> Option<bool> {
    if reply.contains("<answer>Yes</answer>") {
        Some(true)
    } else if reply.contains("<answer>No</answer>") {
        Some(false)
    } else {
        None
    }
}

/// Seeded shuffle then prefix split. The first set receives
/// floor(ratio·n) pairs, clamped so neither side is empty.
pub fn split(pairs: &PairSet, ratio: f64, seed: u64) -> Result<(PairSet, PairSet), CorpusError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::InvalidRatio);
    }
    let n = pairs.len();
    if n < 2 {
        return Err(CorpusError::TooFewPairs);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = CounterRng::derive(seed, 0x5154); // split stream
    rng.shuffle(&mut order);
    let take = ((ratio * n as f64) as usize).clamp(1, n - 1);
    let first: Vec<PreferencePair> = order[..take].iter().map(|&i| pairs.pairs[i].clone()).collect();
    let second: Vec<PreferencePair> = order[take..].iter().map(|&i| pairs.pairs[i].clone()).collect();
    Ok((PairSet::new(first, seed)?, PairSet::new(second, seed)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn pair(id: &str, prompt: &str) -> PreferencePair {
        PreferencePair::new(
            id.to_string(),
            prompt.to_string(),
            alloc::format!("answer one for {id}"),
            alloc::format!("answer two for {id}"),
            HumanLabel::A,
            "test".to_string(),
        )
        .unwrap()
    }

    #[test]
    fn identical_responses_rejected() {
        let r = PreferencePair::new(
            "x".to_string(),
            "p".to_string(),
            "same".to_string(),
            "same".to_string(),
            HumanLabel::None,
            "t".to_string(),
        );
        assert_eq!(r.unwrap_err(), CorpusError::IdenticalResponses);
    }

    #[test]
    fn word_counts_are_whitespace_tokens() {
        let p = PreferencePair::new(
            "x".to_string(),
            "p".to_string(),
            "one  two\tthree".to_string(),
            "just one".to_string(),
            HumanLabel::None,
            "t".to_string(),
        )
        .unwrap();
        assert_eq!(p.word_count_a, 3);
        assert_eq!(p.word_count_b, 2);
    }

    #[test]
    fn duplicate_prompts_leave_one_survivor() {
        let set = PairSet::new(
            alloc::vec![pair("a", "same prompt"), pair("b", "  same prompt  ")],
            0,
        )
        .unwrap();
        let out = normalize(set, 7, |_| true).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn swap_remaps_labels() {
        let mut p = pair("a", "p");
        p.human_label = HumanLabel::A;
        p.judge_labels.insert("j1".to_string(), JudgeChoice::B);
        p.judge_labels.insert("j2".to_string(), JudgeChoice::Invalid);
        let (wa, wb) = (p.word_count_a, p.word_count_b);
        let ra = p.response_a.clone();
        p.swap_responses();
        assert_eq!(p.human_label, HumanLabel::B);
        assert_eq!(p.judge_labels["j1"], JudgeChoice::A);
        assert_eq!(p.judge_labels["j2"], JudgeChoice::Invalid);
        assert_eq!(p.response_b, ra);
        assert_eq!((p.word_count_a, p.word_count_b), (wb, wa));
    }

    #[test]
    fn swap_is_an_involution() {
        let mut p = pair("a", "p");
        p.human_label = HumanLabel::B;
        p.judge_labels.insert("j".to_string(), JudgeChoice::A);
        let original = p.clone();
        p.swap_responses();
        p.swap_responses();
        assert_eq!(p, original);
    }

    #[test]
    fn swap_fraction_is_near_half() {
        let pairs: Vec<PreferencePair> = (0..10_000)
            .map(|i| pair(&alloc::format!("id{i}"), &alloc::format!("prompt {i}")))
            .collect();
        let set = PairSet::new(pairs, 0).unwrap();
        let out = normalize(set, 123, |_| true).unwrap();
        // Every input had human_label A; swapped pairs now read B.
        let swapped = out
            .pairs
            .iter()
            .filter(|p| p.human_label == HumanLabel::B)
            .count();
        let frac = swapped as f64 / out.len() as f64;
        assert!((0.47..=0.53).contains(&frac), "swap fraction {frac}");
    }

    #[test]
    fn normalize_truncates_extra_turns() {
        let mut p = pair("a", "p");
        p.extra_turns.push(Turn {
            role: "user".to_string(),
            text: "follow-up".to_string(),
        });
        let set = PairSet::new(alloc::vec![p], 0).unwrap();
        let out = normalize(set, 1, |_| true).unwrap();
        assert!(out.pairs[0].extra_turns.is_empty());
    }

    #[test]
    fn normalize_is_structurally_idempotent() {
        let pairs: Vec<PreferencePair> = (0..50)
            .map(|i| pair(&alloc::format!("id{i}"), &alloc::format!("prompt {}", i % 20)))
            .collect();
        let set = PairSet::new(pairs, 0).unwrap();
        let once = normalize(set, 9, |_| true).unwrap();
        assert_eq!(once.len(), 20);
        let twice = normalize(once.clone(), 10, |_| true).unwrap();
        // No further dedup or truncation: same cardinality, single-turn.
        assert_eq!(twice.len(), once.len());
        assert!(twice.pairs.iter().all(|p| p.extra_turns.is_empty()));
    }

    #[test]
    fn keep_predicate_filters() {
        let set = PairSet::new(alloc::vec![pair("a", "keep me"), pair("b", "drop me")], 0).unwrap();
        let out = normalize(set, 3, |prompt| prompt.starts_with("keep")).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.pairs[0].id, "a");
    }

    #[test]
    fn normalize_empty_result_is_an_error() {
        let set = PairSet::new(alloc::vec![pair("a", "x")], 0).unwrap();
        assert_eq!(
            normalize(set, 3, |_| false).unwrap_err(),
            CorpusError::EmptyResult
        );
    }

    #[test]
    fn split_sizes_follow_floor_convention() {
        let pairs: Vec<PreferencePair> = (0..10)
            .map(|i| pair(&alloc::format!("id{i}"), &alloc::format!("p{i}")))
            .collect();
        let set = PairSet::new(pairs, 0).unwrap();
        let (train, test) = split(&set, 0.8, 42).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
    }

    #[test]
    fn split_at_corpus_scale() {
        // floor(27734 · 0.8) = 22187, leaving 5547.
        let n: usize = 27_734;
        let take = ((0.8 * n as f64) as usize).clamp(1, n - 1);
        assert_eq!(take, 22_187);
        assert_eq!(n - take, 5_547);
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let pairs: Vec<PreferencePair> = (0..37)
            .map(|i| pair(&alloc::format!("id{i}"), &alloc::format!("p{i}")))
            .collect();
        let set = PairSet::new(pairs, 0).unwrap();
        let (a1, b1) = split(&set, 0.6, 11).unwrap();
        let (a2, b2) = split(&set, 0.6, 11).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        let mut ids: Vec<&str> = a1
            .pairs
            .iter()
            .chain(&b1.pairs)
            .map(|p| p.id.as_str())
            .collect();
        ids.sort_unstable();
        let mut want: Vec<String> = (0..37).map(|i| alloc::format!("id{i}")).collect();
        want.sort();
        assert_eq!(ids, want.iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn split_needs_two_pairs() {
        let set = PairSet::new(alloc::vec![pair("only", "p")], 0).unwrap();
        assert_eq!(split(&set, 0.5, 0).unwrap_err(), CorpusError::TooFewPairs);
    }

    #[test]
    fn subjective_reply_parsing() {
        assert_eq!(parse_subjective_reply("<answer>Yes</answer>"), Some(true));
        assert_eq!(parse_subjective_reply("ok\n<answer>No</answer>"), Some(false));
        assert_eq!(parse_subjective_reply("I think yes"), None);
        assert_eq!(parse_subjective_reply("<answer>maybe</answer>"), None);
    }

    #[test]
    fn embedding_record_validation() {
        let good = EmbeddingRecord {
            pair_id: "a".to_string(),
            e_prompt: alloc::vec![0.0, 1.0],
            e_a: alloc::vec![1.0, 0.0],
            e_b: alloc::vec![0.5, 0.5],
        };
        good.validate().unwrap();
        let bad = EmbeddingRecord {
            e_b: alloc::vec![0.5],
            ..good.clone()
        };
        assert!(bad.validate().is_err());
        let nan = EmbeddingRecord {
            e_a: alloc::vec![f64::NAN, 0.0],
            ..good
        };
        assert!(nan.validate().is_err());
    }
}
