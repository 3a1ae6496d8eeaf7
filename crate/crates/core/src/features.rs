//! Per-token ensemble inputs, built from the annotator sidecar and the
//! verification result.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::judge::RfvmResult;

pub const SIDECAR_SCHEMA: &str = "mikani-sidecar";
pub const SIDECAR_VERSION: u32 = 1;
pub const EMBEDDING_DIM: usize = 16;

/// Universal POS tags followed by the catch-all `UNK`.
pub const POS_TAGS: [&str; 18] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN", "PUNCT", "SCONJ",
    "SYM", "VERB", "X", "UNK",
];
pub const UNK_POS: usize = POS_TAGS.len() - 1;
/// POS one-hot, entity flag, verification score, encoder annotation, encoder score, embedding.
pub const FEATURE_DIM: usize = POS_TAGS.len() + 4 + EMBEDDING_DIM;

pub fn pos_index(tag: &str) -> Option<usize> {
    POS_TAGS.iter().position(|t| t.eq_ignore_ascii_case(tag.trim()))
}

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("sidecar line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("sidecar has no tokens for sample {0}")]
    EmptySample(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarHeader {
    pub schema: String,
    pub version: u32,
    pub embedding_dim: usize,
}

impl Default for SidecarHeader {
    fn default() -> Self {
        Self { schema: SIDECAR_SCHEMA.into(), version: SIDECAR_VERSION, embedding_dim: EMBEDDING_DIM }
    }
}

/// One encoder token of an answer. `start..end` are answer char offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarToken {
    pub sample_id: String,
    pub token_index: usize,
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub pos: String,
    pub bm_score: f64,
    pub bert_annotation: f64,
    pub bm_embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionEntities {
    pub sample_id: String,
    pub question_entities: Vec<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SidecarLine {
    Token(SidecarToken),
    Entities(QuestionEntities),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sidecar {
    pub tokens: BTreeMap<String, Vec<SidecarToken>>,
    pub entities: BTreeMap<String, Vec<String>>,
}

impl Sidecar {
    pub fn tokens_for(&self, sample_id: &str) -> &[SidecarToken] {
        self.tokens.get(sample_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn entities_for(&self, sample_id: &str) -> &[String] {
        self.entities.get(sample_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn token_count(&self) -> usize {
        self.tokens.values().map(Vec::len).sum()
    }
}

fn schema_err(line: usize, message: impl fmt::Display) -> FeatureError {
    FeatureError::Schema { line, message: message.to_string() }
}

fn check_token(t: &mut SidecarToken, prev: Option<&SidecarToken>, line: usize) -> Result<(), FeatureError> {
    if t.bm_embedding.len() != EMBEDDING_DIM {
        return Err(schema_err(
            line,
            format!("bm_embedding has {} values, expected {EMBEDDING_DIM}", t.bm_embedding.len()),
        ));
    }
    if t.start > t.end {
        return Err(schema_err(line, format!("span [{}, {}) is reversed", t.start, t.end)));
    }
    if !(0.0..=1.0).contains(&t.bm_score) {
        return Err(schema_err(line, format!("bm_score {} outside [0, 1]", t.bm_score)));
    }
    if !t.bert_annotation.is_finite() || t.bm_embedding.iter().any(|x| !x.is_finite()) {
        return Err(schema_err(line, "non-finite feature value"));
    }
    let expected = prev.map_or(0, |p| p.token_index + 1);
    if t.token_index != expected {
        return Err(schema_err(
            line,
            format!("token_index {} for {}, expected {expected}", t.token_index, t.sample_id),
        ));
    }
    if prev.is_some_and(|p| t.start < p.end) {
        return Err(schema_err(line, format!("token {} of {} overlaps its predecessor", t.token_index, t.sample_id)));
    }
    if pos_index(&t.pos).is_none() {
        log::warn!("sidecar line {line}: unknown POS tag `{}`, using UNK", t.pos);
        t.pos = "UNK".into();
    }
    Ok(())
}

pub fn parse_sidecar<R: BufRead>(reader: R) -> Result<Sidecar, FeatureError> {
    let mut out = Sidecar::default();
    let mut header_seen = false;
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| schema_err(n, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            let h: SidecarHeader =
                serde_json::from_str(&line).map_err(|e| schema_err(n, format!("bad header: {e}")))?;
            if h.schema != SIDECAR_SCHEMA || h.version != SIDECAR_VERSION {
                return Err(schema_err(
                    n,
                    format!(
                        "unsupported sidecar {} v{} (expected {SIDECAR_SCHEMA} v{SIDECAR_VERSION})",
                        h.schema, h.version
                    ),
                ));
            }
            if h.embedding_dim != EMBEDDING_DIM {
                return Err(schema_err(n, format!("embedding_dim {} (expected {EMBEDDING_DIM})", h.embedding_dim)));
            }
            header_seen = true;
            continue;
        }
        match serde_json::from_str::<SidecarLine>(&line).map_err(|e| schema_err(n, e))? {
            SidecarLine::Token(mut t) => {
                let list = out.tokens.entry(t.sample_id.clone()).or_default();
                check_token(&mut t, list.last(), n)?;
                list.push(t);
            }
            SidecarLine::Entities(e) => {
                out.entities.entry(e.sample_id).or_default().extend(e.question_entities);
            }
        }
    }
    if !header_seen {
        return Err(schema_err(1, "missing header line"));
    }
    Ok(out)
}

pub fn load_sidecar(path: &Path) -> Result<Sidecar, FeatureError> {
    let file = File::open(path).map_err(|source| FeatureError::Io { path: path.to_path_buf(), source })?;
    parse_sidecar(BufReader::new(file))
}

pub fn write_sidecar(path: &Path, sidecar: &Sidecar) -> Result<(), FeatureError> {
    let io = |source| FeatureError::Io { path: path.to_path_buf(), source };
    let mut f = std::io::BufWriter::new(File::create(path).map_err(io)?);
    let mut emit = |v: String| writeln!(f, "{v}").map_err(io);
    emit(serde_json::to_string(&SidecarHeader::default()).expect("header serializes"))?;
    for (id, ents) in &sidecar.entities {
        let e = QuestionEntities { sample_id: id.clone(), question_entities: ents.clone() };
        emit(serde_json::to_string(&e).expect("entities serialize"))?;
    }
    for t in sidecar.tokens.values().flatten() {
        emit(serde_json::to_string(t).expect("token serializes"))?;
    }
    f.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub pos_onehot: [f64; POS_TAGS.len()],
    pub qa_entity: f64,
    pub rfvm_score: f64,
    pub bert_annotation: f64,
    pub bm_score: f64,
    pub bm_embedding: Vec<f64>,
}

impl FeatureRow {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(FEATURE_DIM);
        v.extend_from_slice(&self.pos_onehot);
        v.extend([self.qa_entity, self.rfvm_score, self.bert_annotation, self.bm_score]);
        v.extend_from_slice(&self.bm_embedding);
        v
    }
}

/// Char ranges in `answer` matching any entity, compared case-insensitively
/// one char at a time so offsets stay aligned.
fn entity_occurrences(entities: &[String], answer: &str) -> Vec<(usize, usize)> {
    let fold = |c: char| c.to_lowercase().next().unwrap_or(c);
    let hay: Vec<char> = answer.chars().map(fold).collect();
    let mut out = Vec::new();
    for e in entities {
        let needle: Vec<char> = e.trim().chars().map(fold).collect();
        if needle.is_empty() || needle.len() > hay.len() {
            continue;
        }
        for s in 0..=hay.len() - needle.len() {
            if hay[s..s + needle.len()] == needle[..] {
                out.push((s, s + needle.len()));
            }
        }
    }
    out
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// 1 for tokens overlapping an occurrence of a question entity in the answer.
pub fn qa_entity_flags(entities: &[String], tokens: &[SidecarToken], answer: &str) -> Vec<f64> {
    let occ = entity_occurrences(entities, answer);
    tokens.iter().map(|t| f64::from(u8::from(occ.iter().any(|&o| overlaps(o, (t.start, t.end)))))).collect()
}

/// Highest word probability among words overlapping `span`; 0 if none.
pub fn max_overlap_score(words: &[(usize, usize, f64)], span: (usize, usize)) -> f64 {
    words.iter().filter(|w| overlaps((w.0, w.1), span)).map(|w| w.2).fold(0.0, f64::max)
}

pub fn assemble_features(
    sample_id: &str,
    tokens: &[SidecarToken],
    rfvm: &RfvmResult,
    flags: &[f64],
) -> Result<Vec<FeatureRow>, FeatureError> {
    if tokens.is_empty() {
        return Err(FeatureError::EmptySample(sample_id.to_string()));
    }
    let words = rfvm.word_spans();
    Ok(tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut pos_onehot = [0.0; POS_TAGS.len()];
            pos_onehot[pos_index(&t.pos).unwrap_or(UNK_POS)] = 1.0;
            FeatureRow {
                pos_onehot,
                qa_entity: flags.get(i).copied().unwrap_or(0.0),
                rfvm_score: max_overlap_score(&words, (t.start, t.end)),
                bert_annotation: t.bert_annotation,
                bm_score: t.bm_score,
                bm_embedding: t.bm_embedding.clone(),
            }
        })
        .collect())
}
