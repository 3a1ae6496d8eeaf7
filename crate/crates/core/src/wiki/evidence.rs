//! Per-fact evidence: pool page sentences for every search term, rank them
//! against the fact and keep a small, diverse selection.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::bm25::{bm25_rank, Candidate};
use super::select::{select_evidence, SelectionConfig};
use super::{PageHit, WikiClient, WikiError};
use crate::concurrency::parallel_map;
use crate::facts::SearchTermSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    /// English fact the evidence was gathered for.
    pub sentence: String,
    pub facts: Vec<String>,
    pub page_intro: Vec<String>,
    pub page_title: String,
}

impl EvidenceBundle {
    /// Shape handed to the token judge.
    pub fn to_prompt_value(&self) -> Value {
        json!({
            "sentence": self.sentence,
            "wikipedia_facts": {
                "facts": self.facts,
                "facts_page_intro": self.page_intro,
                "page_title": self.page_title,
            }
        })
    }
}

/// Collect hits for every term. Errors only when every term failed.
fn hits_for(set: &SearchTermSet, client: &WikiClient) -> Result<Vec<PageHit>, WikiError> {
    let mut hits = Vec::new();
    let mut last_err = None;
    let mut any_ok = false;
    let mut titles = HashSet::new();
    for term in &set.search_terms {
        match client.search_page(term) {
            Ok(found) => {
                any_ok = true;
                hits.extend(found.into_iter().filter(|h| titles.insert(h.title.clone())));
            }
            Err(e) => {
                log::warn!("lookup of `{term}` failed: {e}");
                last_err = Some(e);
            }
        }
    }
    match last_err {
        Some(e) if !any_ok => Err(e),
        _ => Ok(hits),
    }
}

pub fn bundle_from_hits(sentence: &str, hits: &[PageHit], config: &SelectionConfig) -> EvidenceBundle {
    let candidates: Vec<Candidate> = hits
        .iter()
        .flat_map(|h| {
            h.sentences.iter().enumerate().map(move |(i, s)| Candidate {
                text: s.clone(),
                page_title: h.title.clone(),
                intro: i < h.intro_len,
            })
        })
        .collect();
    let ranked = bm25_rank(sentence, &candidates);
    let selected = select_evidence(&ranked, config);
    let page_title = selected.first().map(|s| s.page_title.clone()).unwrap_or_default();
    let page_intro = hits
        .iter()
        .find(|h| h.title == page_title)
        .map(|h| h.intro().iter().take(config.top_n).cloned().collect())
        .unwrap_or_default();
    EvidenceBundle {
        sentence: sentence.to_string(),
        facts: selected.into_iter().map(|s| s.text).collect(),
        page_intro,
        page_title,
    }
}

/// One bundle per term set, in input order.
pub fn gather_evidence(
    term_sets: &[SearchTermSet],
    config: &SelectionConfig,
    client: &WikiClient,
    parallelism: usize,
) -> Vec<Result<EvidenceBundle, WikiError>> {
    parallel_map(term_sets, parallelism, |_, set| {
        hits_for(set, client).map(|hits| bundle_from_hits(&set.sentence, &hits, config))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::TransportError;
    use crate::wiki::{HitKind, WikiCache, WikiTransport};
    use std::sync::Arc;

    struct Offline;
    impl WikiTransport for Offline {
        fn get(&self, _: &[(&str, &str)]) -> Result<String, TransportError> {
            Err(TransportError::Protocol("offline".into()))
        }
    }

    fn hit(title: &str, intro: &[&str], body: &[&str]) -> PageHit {
        let mut sentences: Vec<String> = intro.iter().map(|s| s.to_string()).collect();
        sentences.extend(body.iter().map(|s| s.to_string()));
        PageHit {
            title: title.into(),
            source_term: title.into(),
            kind: HitKind::Exact,
            sentences,
            intro_len: intro.len(),
        }
    }

    #[test]
    fn bundle_takes_title_of_best_sentence() {
        let hits = [
            hit("Ulm", &["Ulm is a city in Germany."], &["Ulm has a cathedral."]),
            hit(
                "Albert Einstein",
                &["Albert Einstein was a physicist.", "He was born in Ulm."],
                &["Einstein was born in Ulm in 1879."],
            ),
        ];
        let cfg = SelectionConfig::default();
        let b = bundle_from_hits("Einstein was born in Ulm in 1879.", &hits, &cfg);
        assert_eq!(b.page_title, "Albert Einstein");
        assert_eq!(b.facts[0], "Einstein was born in Ulm in 1879.");
        assert_eq!(b.page_intro.len(), 2);
        assert!(b.facts.len() <= 4);
        let v = b.to_prompt_value();
        assert_eq!(v["wikipedia_facts"]["page_title"], "Albert Einstein");
    }

    #[test]
    fn empty_hits_give_empty_bundle() {
        let b = bundle_from_hits("x", &[], &SelectionConfig::default());
        assert!(b.facts.is_empty() && b.page_title.is_empty() && b.page_intro.is_empty());
    }

    #[test]
    fn cached_terms_need_no_network() {
        let cache = WikiCache::in_memory();
        cache.seed("Ulm", true, &[("Ulm", "Ulm is a city on the Danube.\n== History ==\nIt is old.")]).unwrap();
        let client = WikiClient::new(Arc::new(Offline), cache);
        let sets = vec![
            SearchTermSet { sentence: "Ulm lies on the Danube.".into(), search_terms: vec!["ulm".into()] },
            SearchTermSet { sentence: "Unknown.".into(), search_terms: vec!["nowhere".into()] },
        ];
        let out = gather_evidence(&sets, &SelectionConfig::default(), &client, 2);
        let first = out[0].as_ref().unwrap();
        assert_eq!(first.page_title, "Ulm");
        assert_eq!(first.page_intro, vec!["Ulm is a city on the Danube."]);
        assert!(out[1].is_err());
        assert_eq!(client.request_count(), 1);
    }
}
