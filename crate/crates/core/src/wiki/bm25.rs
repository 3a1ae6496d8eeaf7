//! Okapi BM25 over a small sentence collection.
//!
//! The candidate sentences themselves form the collection for document
//! frequencies. IDF uses the non-negative `ln(1 + (N - df + 0.5) / (df + 0.5))`
//! form, so every score is finite and `>= 0`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

/// Unicode word segmentation, lowercased, no stemming.
pub fn tokenize(text: &str) -> Vec<String> {
    text.unicode_words().map(|w| w.to_lowercase()).collect()
}

/// A sentence eligible as evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub page_title: String,
    #[serde(default)]
    pub intro: bool,
}

impl Candidate {
    pub fn new(text: impl Into<String>, page_title: impl Into<String>) -> Self {
        Self { text: text.into(), page_title: page_title.into(), intro: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSentence {
    pub text: String,
    pub bm25_score: f64,
    pub page_title: String,
    pub intro: bool,
}

/// Scores of every document for one query, in document order.
pub fn bm25_scores(query: &[String], docs: &[Vec<String>], params: Bm25Params) -> Vec<f64> {
    let n = docs.len();
    if n == 0 {
        return Vec::new();
    }
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n as f64;
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in docs {
        let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let idf = |term: &str| {
        let d = df.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n as f64 - d + 0.5) / (d + 0.5)).ln()
    };
    docs.iter()
        .map(|doc| {
            if avgdl == 0.0 {
                return 0.0;
            }
            let mut tf: HashMap<&str, usize> = HashMap::new();
            for t in doc {
                *tf.entry(t.as_str()).or_insert(0) += 1;
            }
            let norm = params.k1 * (1.0 - params.b + params.b * doc.len() as f64 / avgdl);
            query
                .iter()
                .map(|q| match tf.get(q.as_str()) {
                    Some(&f) => {
                        let f = f as f64;
                        idf(q) * f * (params.k1 + 1.0) / (f + norm)
                    }
                    None => 0.0,
                })
                .sum()
        })
        .collect()
}

/// Rank candidates against `query`, best first; ties keep input order.
pub fn bm25_rank(query: &str, candidates: &[Candidate]) -> Vec<ScoredSentence> {
    bm25_rank_with(query, candidates, Bm25Params::default())
}

pub fn bm25_rank_with(query: &str, candidates: &[Candidate], params: Bm25Params) -> Vec<ScoredSentence> {
    let q = tokenize(query);
    let docs: Vec<Vec<String>> = candidates.iter().map(|c| tokenize(&c.text)).collect();
    let scores = bm25_scores(&q, &docs, params);
    let mut ranked: Vec<ScoredSentence> = candidates
        .iter()
        .zip(scores)
        .map(|(c, s)| ScoredSentence {
            text: c.text.clone(),
            bm25_score: s,
            page_title: c.page_title.clone(),
            intro: c.intro,
        })
        .collect();
    // stable sort keeps original order among ties
    ranked.sort_by(|a, b| b.bm25_score.total_cmp(&a.bm25_score));
    ranked
}
