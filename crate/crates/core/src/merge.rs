//! Post-processing of per-token ensemble output into answer spans.

use serde::{Deserialize, Serialize};

use crate::data::{HardSpan, SoftSpan};
use crate::features::max_overlap_score;
use crate::judge::WordToken;

/// Absorbs float noise so a difference of exactly `max_prob_diff` still merges.
const PROB_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergePolicy {
    /// Spans merge only when fewer than this many word positions apart.
    pub max_word_gap: usize,
    pub max_prob_diff: f64,
    pub hard_threshold: f64,
}

impl Default for MergePolicy {
    fn default() -> Self {
        Self { max_word_gap: 3, max_prob_diff: 0.15, hard_threshold: 0.5 }
    }
}

impl MergePolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_word_gap == 0 {
            return Err("max_word_gap must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.max_prob_diff) {
            return Err(format!("max_prob_diff {} outside [0, 1]", self.max_prob_diff));
        }
        if !(0.0..=1.0).contains(&self.hard_threshold) {
            return Err(format!("hard_threshold {} outside [0, 1]", self.hard_threshold));
        }
        Ok(())
    }

    fn mergeable(&self, a: &WordSpan, b: &WordSpan) -> bool {
        b.first_word.saturating_sub(a.last_word) < self.max_word_gap
            && (a.prob - b.prob).abs() <= self.max_prob_diff + PROB_SLACK
    }
}

/// A run of answer words `first_word..=last_word` covering chars `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordSpan {
    pub first_word: usize,
    pub last_word: usize,
    pub start: usize,
    pub end: usize,
    pub prob: f64,
}

impl WordSpan {
    pub fn to_soft(self) -> SoftSpan {
        SoftSpan::new(self.start, self.end, self.prob)
    }
}

fn merge_pass(spans: &[WordSpan], policy: &MergePolicy) -> (Vec<WordSpan>, bool) {
    let mut out: Vec<WordSpan> = Vec::with_capacity(spans.len());
    let mut changed = false;
    for &s in spans {
        match out.last_mut() {
            Some(cur) if policy.mergeable(cur, &s) => {
                cur.last_word = cur.last_word.max(s.last_word);
                cur.end = cur.end.max(s.end);
                cur.prob = cur.prob.max(s.prob);
                changed = true;
            }
            _ => out.push(s),
        }
    }
    (out, changed)
}

/// Greedy left-to-right merging of positive spans, repeated until nothing
/// changes. Input is sorted by word position; zero-probability spans drop out.
pub fn merge_spans(spans: &[WordSpan], policy: &MergePolicy) -> Vec<WordSpan> {
    let mut current: Vec<WordSpan> = spans.iter().copied().filter(|s| s.prob > 0.0).collect();
    current.sort_by_key(|s| (s.first_word, s.last_word));
    loop {
        let (next, changed) = merge_pass(&current, policy);
        if !changed {
            return next;
        }
        current = next;
    }
}

/// Spans strictly above the hard threshold.
pub fn to_hard(soft: &[SoftSpan], policy: &MergePolicy) -> Vec<HardSpan> {
    soft.iter().filter(|s| s.prob > policy.hard_threshold).map(|s| HardSpan::new(s.start, s.end)).collect()
}

/// Word-level spans from per-token predictions: each answer word takes the
/// highest prediction among tokens overlapping it.
pub fn word_spans_from_tokens(words: &[WordToken], tokens: &[(usize, usize, f64)]) -> Vec<WordSpan> {
    words
        .iter()
        .enumerate()
        .map(|(i, w)| WordSpan {
            first_word: i,
            last_word: i,
            start: w.start,
            end: w.end,
            prob: max_overlap_score(tokens, (w.start, w.end)),
        })
        .collect()
}

/// Merged soft spans and thresholded hard spans for one answer.
pub fn postprocess(
    words: &[WordToken],
    tokens: &[(usize, usize, f64)],
    policy: &MergePolicy,
) -> (Vec<SoftSpan>, Vec<HardSpan>) {
    let merged = merge_spans(&word_spans_from_tokens(words, tokens), policy);
    let soft: Vec<SoftSpan> = merged.into_iter().map(WordSpan::to_soft).collect();
    let hard = crate::data::normalize_hard(&to_hard(&soft, policy));
    (soft, hard)
}
