//! Word-level judging of each answer sentence against retrieved evidence,
//! and aggregation into answer-level soft spans.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use unicode_segmentation::UnicodeSegmentation;

use crate::concurrency::parallel_map;
use crate::data::{mask_to_soft_spans, CharMask, QaSample, SoftSpan};
use crate::facts::{
    complete_with_reprompt, extract_atomic_facts, generate_search_terms, AtomicFact, FactError, SearchTermSet,
};
use crate::llm::{LlmGateway, Stage, TemplateVars};
use crate::text::CharOffsets;
use crate::wiki::{gather_evidence, sentence_spans, EvidenceBundle, SelectionConfig, WikiClient};

/// A word of the answer. `start..end` are char offsets into the answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordToken {
    pub id: usize,
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenPrediction {
    pub word: WordToken,
    pub prob: f64,
}

const PREDICTION_REMINDER: &str = "Return only a valid JSON list with one object per word of the subsequence, each with the keys \"id\" (integer), \"word\" (string) and \"prediction\" (number between 0 and 1).";

fn is_unspaced_script(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF       // hiragana, katakana
        | 0x3400..=0x4DBF     // CJK extension A
        | 0x4E00..=0x9FFF     // CJK unified ideographs
        | 0xF900..=0xFAFF     // compatibility ideographs
        | 0x20000..=0x2FA1F)
}

/// Unicode word segmentation with punctuation kept as separate tokens and
/// whitespace dropped. Han and kana text becomes one token per character.
/// Ids number the whole answer from 0.
pub fn tokenize_answer_words(answer: &str, _lang: &str) -> Vec<WordToken> {
    let offsets = CharOffsets::new(answer);
    let mut out = Vec::new();
    for (byte, seg) in answer.split_word_bound_indices() {
        if seg.chars().all(char::is_whitespace) {
            continue;
        }
        let start = offsets.char_at_byte(byte);
        if seg.chars().any(is_unspaced_script) {
            for (k, c) in seg.chars().enumerate() {
                out.push(WordToken { id: out.len(), surface: c.to_string(), start: start + k, end: start + k + 1 });
            }
        } else {
            let len = seg.chars().count();
            out.push(WordToken { id: out.len(), surface: seg.to_string(), start, end: start + len });
        }
    }
    out
}

/// Split answer words by sentence. Every word lands in exactly one group and
/// ids inside each group are renumbered from 0.
pub fn group_by_sentence(answer: &str, words: &[WordToken]) -> Vec<Vec<WordToken>> {
    let offsets = CharOffsets::new(answer);
    let starts: Vec<usize> = sentence_spans(answer).iter().map(|r| offsets.char_at_byte(r.start)).collect();
    let mut groups: Vec<Vec<WordToken>> = vec![Vec::new(); starts.len().max(1)];
    for w in words {
        let idx = starts.iter().rposition(|&s| s <= w.start).unwrap_or(0);
        groups[idx].push(w.clone());
    }
    groups.retain(|g| !g.is_empty());
    for g in &mut groups {
        for (i, w) in g.iter_mut().enumerate() {
            w.id = i;
        }
    }
    groups
}

fn prob_value(v: Option<&Value>) -> Option<f64> {
    let p = match v? {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => s.trim().parse().ok()?,
        Value::Bool(b) => f64::from(u8::from(*b)),
        _ => return None,
    };
    p.is_finite().then(|| p.clamp(0.0, 1.0))
}

/// Match a response to the subsequence by (id, word). Unmatched words get 0.
pub(crate) fn parse_predictions(v: &Value, subseq: &[WordToken]) -> Result<Vec<f64>, String> {
    let items = match v {
        Value::Array(items) => items,
        Value::Object(map) => {
            map.values().find_map(Value::as_array).ok_or_else(|| "expected a JSON list of predictions".to_string())?
        }
        _ => return Err("expected a JSON list of predictions".into()),
    };
    let mut probs: Vec<Option<f64>> = vec![None; subseq.len()];
    for item in items {
        let Some(id) = item.get("id").and_then(Value::as_u64).map(|i| i as usize) else { continue };
        let Some(word) = subseq.get(id) else { continue };
        let said = item.get("word").and_then(Value::as_str).map(str::trim);
        if said != Some(word.surface.trim()) {
            continue;
        }
        if let Some(p) = prob_value(item.get("prediction")) {
            probs[id].get_or_insert(p);
        }
    }
    let missing = probs.iter().filter(|p| p.is_none()).count();
    if missing > 0 {
        log::warn!("{missing} of {} words missing from judge response; assuming not hallucinated", subseq.len());
    }
    Ok(probs.into_iter().map(|p| p.unwrap_or(0.0)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceJudgement {
    pub probs: Vec<f64>,
    /// Set when the sentence could not be judged and all probs default to 0.
    pub degraded: Option<String>,
}

pub fn judge_sentence(
    question: &str,
    answer: &str,
    subseq: &[WordToken],
    bundles: &[EvidenceBundle],
    gateway: &LlmGateway,
) -> SentenceJudgement {
    let degraded = |reason: String| {
        log::warn!("sentence judged as degraded: {reason}");
        SentenceJudgement { probs: vec![0.0; subseq.len()], degraded: Some(reason) }
    };
    let vars: TemplateVars = [
        ("question".to_string(), json!(question)),
        ("answer".to_string(), json!(answer)),
        (
            "subsequence".to_string(),
            Value::Array(subseq.iter().map(|w| json!({"id": w.id, "word": w.surface})).collect()),
        ),
        ("wikipedia_facts".to_string(), Value::Array(bundles.iter().map(EvidenceBundle::to_prompt_value).collect())),
    ]
    .into_iter()
    .collect();
    let request = match gateway.render(Stage::HallucinationPrediction, &vars) {
        Ok(r) => r,
        Err(e) => return degraded(e.to_string()),
    };
    match complete_with_reprompt(gateway, &request, PREDICTION_REMINDER, |v| parse_predictions(v, subseq)) {
        Ok(probs) => SentenceJudgement { probs, degraded: None },
        Err(e) => degraded(e.to_string()),
    }
}

/// Char-level soft spans from word probabilities. Whitespace between two
/// words takes the smaller neighbour; equal adjacent values form one span.
pub fn word_probs_to_spans(answer_len: usize, words: &[(usize, usize, f64)]) -> Vec<SoftSpan> {
    let mut mask = CharMask::zeros(answer_len);
    for (i, &(start, end, p)) in words.iter().enumerate() {
        for v in &mut mask.values[start.min(answer_len)..end.min(answer_len)] {
            *v = p;
        }
        if let Some(&(next_start, _, q)) = words.get(i + 1) {
            for v in &mut mask.values[end.min(answer_len)..next_start.min(answer_len)] {
                *v = p.min(q);
            }
        }
    }
    mask_to_soft_spans(&mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfvmResult {
    pub sample_id: String,
    /// One entry per answer word; ids are answer-global.
    pub predictions: Vec<TokenPrediction>,
    pub soft_spans: Vec<SoftSpan>,
    /// Indices of sentences that fell back to all-zero probabilities.
    pub degraded_sentences: Vec<usize>,
    pub facts: Vec<AtomicFact>,
    pub search_terms: Vec<SearchTermSet>,
    pub evidence: Vec<EvidenceBundle>,
}

impl RfvmResult {
    pub fn empty(sample_id: &str) -> Self {
        Self {
            sample_id: sample_id.to_string(),
            predictions: Vec::new(),
            soft_spans: Vec::new(),
            degraded_sentences: Vec::new(),
            facts: Vec::new(),
            search_terms: Vec::new(),
            evidence: Vec::new(),
        }
    }

    /// `(start, end, prob)` for every word, in answer order.
    pub fn word_spans(&self) -> Vec<(usize, usize, f64)> {
        self.predictions.iter().map(|p| (p.word.start, p.word.end, p.prob)).collect()
    }
}

#[derive(Debug, thiserror::Error)]
#[error("verification failed for sample {sample_id}: fact extraction failed and every sentence degraded ({cause})")]
pub struct RfvmError {
    pub sample_id: String,
    #[source]
    pub cause: FactError,
}

impl RfvmError {
    pub fn is_transport(&self) -> bool {
        matches!(&self.cause, FactError::Llm(e) if e.is_transport())
    }
}

pub struct RfvmDeps<'a> {
    pub gateway: &'a LlmGateway,
    pub wiki: &'a WikiClient,
    pub selection: SelectionConfig,
    /// Concurrent judge calls per answer.
    pub judge_parallelism: usize,
    /// Concurrent evidence lookups per answer.
    pub wiki_parallelism: usize,
}

/// Full verification of one sample: facts, search terms, evidence, then one
/// judge call per answer sentence.
pub fn run_rfvm(sample: &QaSample, deps: &RfvmDeps<'_>) -> Result<RfvmResult, RfvmError> {
    let mut result = RfvmResult::empty(&sample.id);
    let words = tokenize_answer_words(&sample.answer, &sample.lang);
    if words.is_empty() {
        return Ok(result);
    }

    let fact_failure = match extract_atomic_facts(sample, deps.gateway) {
        Ok(facts) => {
            result.facts = facts;
            None
        }
        Err(e) => {
            log::warn!("{}: fact extraction failed: {e}", sample.id);
            Some(e)
        }
    };
    if !result.facts.is_empty() {
        match generate_search_terms(&sample.question, &result.facts, deps.gateway) {
            Ok(terms) => result.search_terms = terms,
            Err(e) => log::warn!("{}: search term generation failed: {e}", sample.id),
        }
    }
    for (set, bundle) in result.search_terms.iter().zip(gather_evidence(
        &result.search_terms,
        &deps.selection,
        deps.wiki,
        deps.wiki_parallelism,
    )) {
        match bundle {
            Ok(b) => result.evidence.push(b),
            Err(e) => log::warn!("{}: no evidence for \"{}\": {e}", sample.id, set.sentence),
        }
    }

    let groups = group_by_sentence(&sample.answer, &words);
    let judgements = parallel_map(&groups, deps.judge_parallelism, |_, subseq| {
        judge_sentence(&sample.question, &sample.answer, subseq, &result.evidence, deps.gateway)
    });

    let mut global = words.into_iter();
    for (idx, judgement) in judgements.into_iter().enumerate() {
        if judgement.degraded.is_some() {
            result.degraded_sentences.push(idx);
        }
        for prob in judgement.probs {
            let word = global.next().expect("groups partition the answer words");
            result.predictions.push(TokenPrediction { word, prob });
        }
    }

    if let Some(cause) = fact_failure {
        if result.degraded_sentences.len() == groups.len() {
            return Err(RfvmError { sample_id: sample.id.clone(), cause });
        }
    }
    result.soft_spans = word_probs_to_spans(sample.answer_len(), &result.word_spans());
    Ok(result)
}
