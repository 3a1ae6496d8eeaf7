//! Splitting an answer into atomic facts and generating Wikipedia search
//! terms for each fact.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::QaSample;
use crate::llm::{LlmError, LlmGateway, Stage, TemplateError, TemplateVars};
use crate::text::normalize_key;

#[derive(Debug, thiserror::Error)]
pub enum FactError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{stage}: response violates output schema: {message}")]
    Schema { stage: Stage, message: String },
}

/// A self-contained statement from the answer plus its English rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicFact {
    pub fact: String,
    pub english_translation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchTermSet {
    /// English text of the fact.
    pub sentence: String,
    pub search_terms: Vec<String>,
}

const FACTS_REMINDER: &str =
    "Return only a valid JSON list of objects, each with the string keys \"fact\" and \"english_translation\".";
const TERMS_REMINDER: &str = "Return only a valid JSON list with one object per input fact, in input order, each with the keys \"sentence\" (string) and \"search_terms\" (list of strings).";

fn is_english(lang: &str) -> bool {
    lang.eq_ignore_ascii_case("en")
}

/// Unwrap `{"facts": [...]}`-style objects to their first array member.
fn as_list(v: &Value) -> Option<&Vec<Value>> {
    match v {
        Value::Array(items) => Some(items),
        Value::Object(map) => map.values().find_map(Value::as_array),
        _ => None,
    }
}

fn non_empty_str(v: Option<&Value>) -> Option<String> {
    v.and_then(Value::as_str).map(str::trim).filter(|s| !s.is_empty()).map(str::to_string)
}

pub(crate) fn parse_facts(v: &Value, english: bool) -> Result<Vec<AtomicFact>, String> {
    let items = as_list(v).ok_or_else(|| "expected a JSON list of facts".to_string())?;
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let (fact, translation) = match item {
            Value::String(s) => (non_empty_str(Some(item)), english.then(|| s.trim().to_string())),
            Value::Object(map) => (non_empty_str(map.get("fact")), non_empty_str(map.get("english_translation"))),
            _ => return Err(format!("unexpected fact entry {item}")),
        };
        let Some(fact) = fact else {
            log::warn!("dropping fact entry without text: {item}");
            continue;
        };
        let english_translation = if english {
            fact.clone()
        } else {
            match translation {
                Some(t) => t,
                None => {
                    log::warn!("dropping fact without english_translation: {fact}");
                    continue;
                }
            }
        };
        out.push(AtomicFact { fact, english_translation });
    }
    Ok(out)
}

/// Run `request`, parse with `parse`, and re-prompt once with `reminder` on
/// a schema violation.
pub(crate) fn complete_with_reprompt<T>(
    gateway: &LlmGateway,
    request: &crate::llm::ChatRequest,
    reminder: &str,
    parse: impl Fn(&Value) -> Result<T, String>,
) -> Result<T, FactError> {
    let stage = request.stage;
    let attempt = |req: &crate::llm::ChatRequest| -> Result<Result<T, String>, FactError> {
        let resp = gateway.complete(req)?;
        Ok(match resp.parsed {
            Some(v) => parse(&v),
            None => Err(format!("unparseable output: {}", truncate(&resp.raw_text, 200))),
        })
    };
    match attempt(request)? {
        Ok(v) => Ok(v),
        Err(first) => {
            log::warn!("{stage}: {first}; re-prompting with format reminder");
            attempt(&request.with_reminder(reminder))?.map_err(|message| FactError::Schema { stage, message })
        }
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((b, _)) => &s[..b],
        None => s,
    }
}

pub fn extract_atomic_facts(sample: &QaSample, gateway: &LlmGateway) -> Result<Vec<AtomicFact>, FactError> {
    if sample.answer.trim().is_empty() {
        return Ok(Vec::new());
    }
    let vars: TemplateVars =
        [("question".to_string(), json!(sample.question)), ("answer".to_string(), json!(sample.answer))]
            .into_iter()
            .collect();
    let request = gateway.render(Stage::FactExtraction, &vars)?;
    let english = is_english(&sample.lang);
    let facts = complete_with_reprompt(gateway, &request, FACTS_REMINDER, |v| parse_facts(v, english))?;
    if facts.is_empty() {
        log::warn!("sample {}: no atomic facts extracted from a non-empty answer", sample.id);
    }
    Ok(facts)
}

#[derive(Deserialize)]
struct RawTermSet {
    #[serde(default)]
    sentence: String,
    #[serde(default)]
    search_terms: Vec<Value>,
}

fn clean_terms(raw: &[Value]) -> Vec<String> {
    raw.iter().filter_map(Value::as_str).map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}

/// Align model output with the input facts: by position when the counts
/// match, otherwise by normalized sentence text.
pub(crate) fn parse_term_sets(v: &Value, facts: &[String]) -> Result<Vec<SearchTermSet>, String> {
    let items = as_list(v).ok_or_else(|| "expected a JSON list of term sets".to_string())?;
    let raw: Vec<RawTermSet> = items
        .iter()
        .map(|i| serde_json::from_value(i.clone()).map_err(|e| format!("bad term set {i}: {e}")))
        .collect::<Result<_, _>>()?;
    if raw.len() == facts.len() {
        return Ok(facts
            .iter()
            .zip(&raw)
            .map(|(fact, r)| SearchTermSet { sentence: fact.clone(), search_terms: clean_terms(&r.search_terms) })
            .collect());
    }
    let keyed: Vec<(String, &RawTermSet)> = raw.iter().map(|r| (normalize_key(&r.sentence), r)).collect();
    facts
        .iter()
        .map(|fact| {
            let key = normalize_key(fact);
            keyed
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, r)| SearchTermSet { sentence: fact.clone(), search_terms: clean_terms(&r.search_terms) })
                .ok_or_else(|| format!("{} term sets for {} facts; no entry for \"{fact}\"", raw.len(), facts.len()))
        })
        .collect()
}

pub fn generate_search_terms(
    question: &str,
    facts: &[AtomicFact],
    gateway: &LlmGateway,
) -> Result<Vec<SearchTermSet>, FactError> {
    if facts.is_empty() {
        return Ok(Vec::new());
    }
    let english: Vec<String> = facts.iter().map(|f| f.english_translation.clone()).collect();
    let vars: TemplateVars =
        [("question".to_string(), json!(question)), ("facts".to_string(), json!(english))].into_iter().collect();
    let request = gateway.render(Stage::SearchTerms, &vars)?;
    complete_with_reprompt(gateway, &request, TERMS_REMINDER, |v| parse_term_sets(v, &english))
}
