//! Canonical data model: QA samples, character spans, dense masks, and the
//! Mu-SHROOM JSONL reader/writer.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::text::char_len;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("sample {id}: span [{start}, {end}) out of bounds for answer of {len} chars")]
    OutOfBounds { id: String, start: usize, end: usize, len: usize },
    #[error("sample {id}: invalid span [{start}, {end}) prob {prob}")]
    InvalidSpan { id: String, start: usize, end: usize, prob: f64 },
    #[error("span [{start}, {end}) exceeds mask length {len}")]
    SpanExceedsLength { start: usize, end: usize, len: usize },
}

/// Character span with a hallucination probability. `end` is exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftSpan {
    pub start: usize,
    pub end: usize,
    pub prob: f64,
}

impl SoftSpan {
    pub fn new(start: usize, end: usize, prob: f64) -> Self {
        Self { start, end, prob }
    }
}

/// Binary character span, serialized as a `[start, end]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HardSpan {
    pub start: usize,
    pub end: usize,
}

impl HardSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

impl Serialize for HardSpan {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.start, self.end].serialize(s)
    }
}

impl<'de> Deserialize<'de> for HardSpan {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [start, end] = <[usize; 2]>::deserialize(d)?;
        Ok(Self { start, end })
    }
}

/// One question/answer pair with optional gold annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct QaSample {
    pub id: String,
    /// Lowercased ISO-639-1 code.
    pub lang: String,
    pub question: String,
    pub answer: String,
    pub gold_soft: Option<Vec<SoftSpan>>,
    pub gold_hard: Option<Vec<HardSpan>>,
}

impl QaSample {
    pub fn new(id: impl Into<String>, lang: &str, question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            lang: lang.trim().to_lowercase(),
            question: question.into(),
            answer: answer.into(),
            gold_soft: None,
            gold_hard: None,
        }
    }

    pub fn answer_len(&self) -> usize {
        char_len(&self.answer)
    }

    /// Checks every gold span against the answer length.
    pub fn validate(&self) -> Result<(), DataError> {
        let len = self.answer_len();
        for s in self.gold_soft.iter().flatten() {
            check_span(&self.id, s.start, s.end, s.prob, len)?;
        }
        for h in self.gold_hard.iter().flatten() {
            check_span(&self.id, h.start, h.end, 1.0, len)?;
        }
        Ok(())
    }

    /// Gold soft labels as a dense mask. Falls back to hard labels at
    /// probability 1 when no soft labels are present.
    pub fn gold_soft_mask(&self) -> CharMask {
        let len = self.answer_len();
        match (&self.gold_soft, &self.gold_hard) {
            (Some(soft), _) => spans_to_mask(soft, len).unwrap_or_else(|_| CharMask::zeros(len)),
            (None, Some(hard)) => hard_to_mask(hard, len),
            (None, None) => CharMask::zeros(len),
        }
    }

    /// Gold hard labels, sorted and merged.
    pub fn gold_hard_normalized(&self) -> Vec<HardSpan> {
        normalize_hard(self.gold_hard.as_deref().unwrap_or(&[]))
    }

    pub fn to_record(&self) -> MuShroomRecord {
        MuShroomRecord {
            id: Some(self.id.clone()),
            lang: Some(self.lang.to_uppercase()),
            model_input: Some(self.question.clone()),
            model_output_text: Some(self.answer.clone()),
            model_id: None,
            soft_labels: self.gold_soft.clone(),
            hard_labels: self.gold_hard.clone(),
        }
    }
}

fn check_span(id: &str, start: usize, end: usize, prob: f64, len: usize) -> Result<(), DataError> {
    if start >= end || !(0.0..=1.0).contains(&prob) {
        return Err(DataError::InvalidSpan { id: id.to_string(), start, end, prob });
    }
    if end > len {
        return Err(DataError::OutOfBounds { id: id.to_string(), start, end, len });
    }
    Ok(())
}

/// On-disk shape of one Mu-SHROOM line. Unknown keys (logits, tokens) are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MuShroomRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default)]
    pub lang: Option<String>,
    #[serde(default)]
    pub model_input: Option<String>,
    #[serde(default)]
    pub model_output_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_labels: Option<Vec<SoftSpan>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_labels: Option<Vec<HardSpan>>,
}

impl MuShroomRecord {
    fn into_sample(self, line: usize) -> Result<QaSample, DataError> {
        let missing = |key: &str| DataError::Malformed { line, message: format!("missing key `{key}`") };
        let question = self.model_input.ok_or_else(|| missing("model_input"))?;
        let answer = self.model_output_text.ok_or_else(|| missing("model_output_text"))?;
        let lang = self.lang.ok_or_else(|| missing("lang"))?;
        let id = self.id.unwrap_or_else(|| format!("line-{line}"));
        let mut sample = QaSample::new(id, &lang, question, answer);
        sample.gold_soft = self.soft_labels;
        sample.gold_hard = self.hard_labels;
        sample.validate()?;
        Ok(sample)
    }
}

/// Parse Mu-SHROOM JSONL from a reader. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Vec<QaSample>, DataError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DataError::Malformed { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MuShroomRecord =
            serde_json::from_str(&line).map_err(|e| DataError::Malformed { line: line_no, message: e.to_string() })?;
        out.push(record.into_sample(line_no)?);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<QaSample>, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    parse_dataset(BufReader::new(file))
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub soft_labels: Vec<SoftSpan>,
    pub hard_labels: Vec<HardSpan>,
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), DataError> {
    let io_err = |source| DataError::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("prediction records always serialize");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DataError::Malformed { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| DataError::Malformed { line: line_no, message: e.to_string() })?,
        );
    }
    Ok(out)
}

/// Dense per-character probabilities over an answer.
#[derive(Debug, Clone, PartialEq)]
pub struct CharMask {
    pub values: Vec<f64>,
}

impl CharMask {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Self { values: vec![value; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Rasterize soft spans; overlapping spans resolve by per-character max.
pub fn spans_to_mask(spans: &[SoftSpan], len: usize) -> Result<CharMask, DataError> {
    let mut mask = CharMask::zeros(len);
    for s in spans {
        if s.end > len || s.start > s.end {
            return Err(DataError::SpanExceedsLength { start: s.start, end: s.end, len });
        }
        for v in &mut mask.values[s.start..s.end] {
            *v = v.max(s.prob);
        }
    }
    Ok(mask)
}

/// Rasterize hard spans at probability 1. Out-of-range tails are clipped.
pub fn hard_to_mask(spans: &[HardSpan], len: usize) -> CharMask {
    let mut mask = CharMask::zeros(len);
    for s in spans {
        let end = s.end.min(len);
        for v in mask.values[s.start.min(end)..end].iter_mut() {
            *v = 1.0;
        }
    }
    mask
}

/// Maximal runs of positions strictly above `threshold`.
pub fn mask_to_spans(mask: &CharMask, threshold: f64) -> Vec<HardSpan> {
    let mut out = Vec::new();
    let mut run_start = None;
    for (i, &v) in mask.values.iter().enumerate() {
        match (v > threshold, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                out.push(HardSpan::new(s, i));
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        out.push(HardSpan::new(s, mask.len()));
    }
    out
}

/// Maximal runs of equal, nonzero values.
pub fn mask_to_soft_spans(mask: &CharMask) -> Vec<SoftSpan> {
    let mut out: Vec<SoftSpan> = Vec::new();
    for (i, &v) in mask.values.iter().enumerate() {
        if v <= 0.0 {
            continue;
        }
        match out.last_mut() {
            Some(last) if last.end == i && last.prob == v => last.end = i + 1,
            _ => out.push(SoftSpan::new(i, i + 1, v)),
        }
    }
    out
}

/// Sort and merge overlapping or touching hard spans; drops empty spans.
pub fn normalize_hard(spans: &[HardSpan]) -> Vec<HardSpan> {
    let mut sorted: Vec<HardSpan> = spans.iter().copied().filter(|s| !s.is_empty()).collect();
    sorted.sort();
    let mut out: Vec<HardSpan> = Vec::with_capacity(sorted.len());
    for s in sorted {
        match out.last_mut() {
            Some(last) if s.start <= last.end => last.end = last.end.max(s.end),
            _ => out.push(s),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_minimal_line() {
        let line = r#"{"id":"x1","lang":"EN","model_input":"Q?","model_output_text":"Paris.","hard_labels":[[0,5]]}"#;
        let samples = parse_dataset(line.as_bytes()).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].lang, "en");
        assert_eq!(samples[0].gold_hard, Some(vec![HardSpan::new(0, 5)]));
        assert_eq!(samples[0].gold_soft, None);
    }

    #[test]
    fn missing_answer_reports_line() {
        let text = "{\"id\":\"a\",\"lang\":\"en\",\"model_input\":\"Q\",\"model_output_text\":\"A\"}\n\
                    {\"id\":\"b\",\"lang\":\"en\",\"model_input\":\"Q\"}\n";
        match parse_dataset(text.as_bytes()) {
            Err(DataError::Malformed { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("model_output_text"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_bounds_names_sample() {
        let line = r#"{"id":"zz","lang":"en","model_input":"Q","model_output_text":"ab","soft_labels":[{"start":0,"end":3,"prob":0.5}]}"#;
        match parse_dataset(line.as_bytes()) {
            Err(DataError::OutOfBounds { id, .. }) => assert_eq!(id, "zz"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn char_indexing_not_bytes() {
        // "Ä" is 2 bytes but one char; the span [0,3) must fit.
        let line = r#"{"id":"d","lang":"de","model_input":"Q","model_output_text":"Äbc","hard_labels":[[0,3]]}"#;
        assert!(parse_dataset(line.as_bytes()).is_ok());
    }

    #[test]
    fn mask_examples() {
        let m = spans_to_mask(&[SoftSpan::new(0, 3, 0.5)], 5).unwrap();
        assert_eq!(m.values, vec![0.5, 0.5, 0.5, 0.0, 0.0]);
        assert_eq!(spans_to_mask(&[], 4).unwrap().values, vec![0.0; 4]);
        let m = spans_to_mask(&[SoftSpan::new(0, 2, 0.4), SoftSpan::new(1, 3, 0.9)], 3).unwrap();
        assert_eq!(m.values, vec![0.4, 0.9, 0.9]);
        assert!(spans_to_mask(&[SoftSpan::new(2, 6, 0.1)], 5).is_err());
    }

    #[test]
    fn mask_to_spans_examples() {
        let m = CharMask { values: vec![0.0, 0.9, 0.9, 0.0] };
        assert_eq!(mask_to_spans(&m, 0.5), vec![HardSpan::new(1, 3)]);
        assert!(mask_to_spans(&CharMask::zeros(7), 0.5).is_empty());
        let m = CharMask { values: vec![0.6, 0.6] };
        assert_eq!(mask_to_spans(&m, 0.5), vec![HardSpan::new(0, 2)]);
    }

    #[test]
    fn soft_runs() {
        let m = CharMask { values: vec![0.0, 0.3, 0.3, 0.7, 0.0, 0.7] };
        assert_eq!(
            mask_to_soft_spans(&m),
            vec![SoftSpan::new(1, 3, 0.3), SoftSpan::new(3, 4, 0.7), SoftSpan::new(5, 6, 0.7)]
        );
    }

    #[test]
    fn normalize_merges_overlaps() {
        let spans = [HardSpan::new(5, 8), HardSpan::new(0, 2), HardSpan::new(1, 3), HardSpan::new(8, 9)];
        assert_eq!(normalize_hard(&spans), vec![HardSpan::new(0, 3), HardSpan::new(5, 9)]);
    }

    fn disjoint_spans(len: usize) -> impl Strategy<Value = Vec<SoftSpan>> {
        proptest::collection::vec((0..len, 1..6usize, 0.01f64..=1.0), 0..8).prop_map(move |raw| {
            let mut out: Vec<SoftSpan> = Vec::new();
            let mut cursor = 0;
            let mut starts: Vec<_> = raw;
            starts.sort_by_key(|r| r.0);
            for (start, width, prob) in starts {
                let start = start.max(cursor);
                let end = (start + width).min(len);
                if start < end {
                    out.push(SoftSpan::new(start, end, prob));
                    cursor = end + 1;
                }
            }
            out
        })
    }

    proptest! {
        #[test]
        fn mask_round_trip_preserves_support(spans in disjoint_spans(40)) {
            let mask = spans_to_mask(&spans, 40).unwrap();
            let back = mask_to_spans(&mask, 0.0);
            let support: Vec<HardSpan> = normalize_hard(
                &spans.iter().map(|s| HardSpan::new(s.start, s.end)).collect::<Vec<_>>(),
            );
            prop_assert_eq!(back, support);
        }

        #[test]
        fn record_round_trip_is_lossless(spans in disjoint_spans(30)) {
            let mut s = QaSample::new("r", "en", "q", "x".repeat(30));
            s.gold_soft = Some(spans.clone());
            s.gold_hard = Some(spans.iter().map(|s| HardSpan::new(s.start, s.end)).collect());
            let line = serde_json::to_string(&s.to_record()).unwrap();
            let back = parse_dataset(line.as_bytes()).unwrap().remove(0);
            prop_assert_eq!(back, s);
        }
    }
}
