//! Evidence selection: plain top-n or maximal marginal relevance.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::bm25::{tokenize, ScoredSentence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    TopN,
    Mmr,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "top_n" | "topn" => Ok(Strategy::TopN),
            "mmr" => Ok(Strategy::Mmr),
            other => Err(format!("unknown selection strategy `{other}` (expected top_n or mmr)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub strategy: Strategy,
    pub top_n: usize,
    pub lambda: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { strategy: Strategy::Mmr, top_n: 4, lambda: 0.7 }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.top_n == 0 {
            return Err("top_n must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(format!("lambda {} outside [0, 1]", self.lambda));
        }
        Ok(())
    }
}

/// Drop later copies of identical sentence text.
fn distinct(scored: &[ScoredSentence]) -> Vec<&ScoredSentence> {
    let mut seen = HashSet::new();
    scored.iter().filter(|s| seen.insert(s.text.trim())).collect()
}

fn tf_vector(text: &str) -> HashMap<String, f64> {
    let mut v = HashMap::new();
    for t in tokenize(text) {
        *v.entry(t).or_insert(0.0) += 1.0;
    }
    v
}

/// Cosine similarity of two term-frequency vectors; 0 when either is empty.
pub fn tf_cosine(a: &HashMap<String, f64>, b: &HashMap<String, f64>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(t, x)| b.get(t).map(|y| x * y)).sum();
    let na: f64 = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Pick evidence from `scored`, which must already be sorted best-first
/// (as returned by [`super::bm25::bm25_rank`]). Duplicate texts count once.
pub fn select_evidence(scored: &[ScoredSentence], config: &SelectionConfig) -> Vec<ScoredSentence> {
    let pool = distinct(scored);
    let k = config.top_n.min(pool.len());
    match config.strategy {
        Strategy::TopN => pool.into_iter().take(k).cloned().collect(),
        Strategy::Mmr => mmr(&pool, k, config.lambda),
    }
}

fn mmr(pool: &[&ScoredSentence], k: usize, lambda: f64) -> Vec<ScoredSentence> {
    if k == 0 {
        return Vec::new();
    }
    let max = pool.iter().map(|s| s.bm25_score).fold(f64::NEG_INFINITY, f64::max);
    let min = pool.iter().map(|s| s.bm25_score).fold(f64::INFINITY, f64::min);
    let relevance: Vec<f64> =
        pool.iter().map(|s| if max > min { (s.bm25_score - min) / (max - min) } else { 1.0 }).collect();
    let vectors: Vec<HashMap<String, f64>> = pool.iter().map(|s| tf_vector(&s.text)).collect();

    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut taken = vec![false; pool.len()];
    // highest similarity of each candidate to anything chosen so far
    let mut max_sim = vec![0.0f64; pool.len()];
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..pool.len()).filter(|&i| !taken[i]) {
            let score = lambda * relevance[i] - (1.0 - lambda) * max_sim[i];
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        let Some((pick, _)) = best else { break };
        taken[pick] = true;
        chosen.push(pick);
        for i in (0..pool.len()).filter(|&i| !taken[i]) {
            max_sim[i] = max_sim[i].max(tf_cosine(&vectors[i], &vectors[pick]));
        }
    }
    chosen.into_iter().map(|i| pool[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(items: &[(&str, f64)]) -> Vec<ScoredSentence> {
        items
            .iter()
            .map(|(t, s)| ScoredSentence { text: t.to_string(), bm25_score: *s, page_title: "p".into(), intro: false })
            .collect()
    }

    fn texts(v: &[ScoredSentence]) -> Vec<&str> {
        v.iter().map(|s| s.text.as_str()).collect()
    }

    #[test]
    fn lambda_one_is_top_n() {
        let s = scored(&[("a b", 3.0), ("a c", 2.0), ("d", 2.0), ("e", 0.5), ("f", 0.1)]);
        let top = select_evidence(&s, &SelectionConfig { strategy: Strategy::TopN, top_n: 3, lambda: 0.7 });
        let m = select_evidence(&s, &SelectionConfig { strategy: Strategy::Mmr, top_n: 3, lambda: 1.0 });
        assert_eq!(top, m);
    }

    #[test]
    fn duplicates_are_displaced() {
        let s = scored(&[("einstein born ulm", 5.0), ("einstein born ulm", 5.0), ("einstein moved munich", 1.0)]);
        let m = select_evidence(&s, &SelectionConfig { strategy: Strategy::Mmr, top_n: 2, lambda: 0.7 });
        assert_eq!(texts(&m), ["einstein born ulm", "einstein moved munich"]);
    }

    #[test]
    fn truncates_to_pool() {
        let s = scored(&[("a", 1.0), ("b", 0.5), ("c", 0.2)]);
        for strategy in [Strategy::TopN, Strategy::Mmr] {
            let m = select_evidence(&s, &SelectionConfig { strategy, top_n: 4, lambda: 0.7 });
            assert_eq!(m.len(), 3);
        }
    }

    #[test]
    fn diversity_changes_second_pick() {
        let s = scored(&[("x y z", 4.0), ("x y z w", 3.9), ("q r s", 3.0)]);
        let m = select_evidence(&s, &SelectionConfig { strategy: Strategy::Mmr, top_n: 2, lambda: 0.3 });
        assert_eq!(texts(&m), ["x y z", "q r s"]);
    }

    #[test]
    fn validation() {
        assert!(SelectionConfig { strategy: Strategy::Mmr, top_n: 0, lambda: 0.5 }.validate().is_err());
        assert!(SelectionConfig { strategy: Strategy::Mmr, top_n: 1, lambda: 1.5 }.validate().is_err());
        assert!(SelectionConfig::default().validate().is_ok());
    }
}
