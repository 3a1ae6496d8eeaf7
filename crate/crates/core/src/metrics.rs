//! Character-level IoU, Spearman correlation, baselines and reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{
    mask_to_spans, normalize_hard, spans_to_mask, CharMask, DataError, HardSpan, PredictionRecord, QaSample, SoftSpan,
};
use crate::features::Sidecar;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("span [{start}, {end}) outside answer of length {len}")]
    OutOfBounds { start: usize, end: usize, len: usize },
    #[error("mask lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sample {id}: {source}")]
    Sample { id: String, source: Box<MetricError> },
}

fn check_bounds(spans: &[HardSpan], len: usize) -> Result<(), MetricError> {
    match spans.iter().find(|s| s.start > s.end || s.end > len) {
        Some(s) => Err(MetricError::OutOfBounds { start: s.start, end: s.end, len }),
        None => Ok(()),
    }
}

fn covered(spans: &[HardSpan]) -> usize {
    spans.iter().map(HardSpan::len).sum()
}

/// Intersection over union of the character sets covered by two span lists.
/// Two empty sets score 1.
pub fn iou(pred: &[HardSpan], gold: &[HardSpan], answer_len: usize) -> Result<f64, MetricError> {
    check_bounds(pred, answer_len)?;
    check_bounds(gold, answer_len)?;
    let a = normalize_hard(pred);
    let b = normalize_hard(gold);
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        let lo = a[i].start.max(b[j].start);
        let hi = a[i].end.min(b[j].end);
        inter += hi.saturating_sub(lo);
        if a[i].end < b[j].end {
            i += 1;
        } else {
            j += 1;
        }
    }
    let union = covered(&a) + covered(&b) - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut k = 0;
    while k < order.len() {
        let mut e = k + 1;
        while e < order.len() && values[order[e]] == values[order[k]] {
            e += 1;
        }
        let avg = (k + e + 1) as f64 / 2.0;
        for &idx in &order[k..e] {
            ranks[idx] = avg;
        }
        k = e;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

fn is_constant(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

/// Score when a mask has no variance: 1 if both are constant, 0 if only one is.
pub fn degenerate_correlation(pred_constant: bool, gold_constant: bool) -> f64 {
    if pred_constant && gold_constant {
        1.0
    } else {
        0.0
    }
}

/// Spearman rank correlation over per-character probabilities.
pub fn spearman_cor(pred: &CharMask, gold: &CharMask) -> Result<f64, MetricError> {
    if pred.len() != gold.len() {
        return Err(MetricError::LengthMismatch(pred.len(), gold.len()));
    }
    let (pc, gc) = (is_constant(&pred.values), is_constant(&gold.values));
    if pc || gc {
        return Ok(degenerate_correlation(pc, gc));
    }
    Ok(pearson(&average_ranks(&pred.values), &average_ranks(&gold.values)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    MarkAll,
    MarkNone,
}

impl std::str::FromStr for Baseline {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "mark_all" => Ok(Baseline::MarkAll),
            "mark_none" => Ok(Baseline::MarkNone),
            other => Err(format!("unknown baseline `{other}` (expected mark_all or mark_none)")),
        }
    }
}

pub fn baseline(kind: Baseline, sample: &QaSample) -> PredictionRecord {
    let len = sample.answer_len();
    match kind {
        Baseline::MarkAll if len > 0 => PredictionRecord {
            id: sample.id.clone(),
            soft_labels: vec![SoftSpan::new(0, len, 1.0)],
            hard_labels: vec![HardSpan::new(0, len)],
        },
        _ => PredictionRecord { id: sample.id.clone(), soft_labels: Vec::new(), hard_labels: Vec::new() },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub lang: String,
    pub iou: f64,
    pub spearman: f64,
}

/// Gold hard spans, derived from soft labels (majority, `> 0.5`) when absent.
pub fn gold_hard(sample: &QaSample) -> Vec<HardSpan> {
    match &sample.gold_hard {
        Some(_) => sample.gold_hard_normalized(),
        None => mask_to_spans(&sample.gold_soft_mask(), 0.5),
    }
}

pub fn score_sample(pred: &PredictionRecord, sample: &QaSample) -> Result<SampleScore, MetricError> {
    let wrap = |e: MetricError| MetricError::Sample { id: sample.id.clone(), source: Box::new(e) };
    let len = sample.answer_len();
    let iou = iou(&pred.hard_labels, &gold_hard(sample), len).map_err(wrap)?;
    let pred_mask = spans_to_mask(&pred.soft_labels, len).map_err(|e| match e {
        DataError::SpanExceedsLength { start, end, len } => wrap(MetricError::OutOfBounds { start, end, len }),
        other => unreachable!("spans_to_mask only reports bounds errors: {other}"),
    })?;
    let spearman = spearman_cor(&pred_mask, &sample.gold_soft_mask()).map_err(wrap)?;
    Ok(SampleScore { sample_id: sample.id.clone(), lang: sample.lang.clone(), iou, spearman })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageReport {
    pub lang: String,
    pub mean_iou: f64,
    pub mean_cor: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: Vec<SampleScore>,
    /// Sorted by mean IoU, best first.
    pub languages: Vec<LanguageReport>,
    /// Gold samples with no prediction, scored as `mark_none`.
    pub missing: usize,
    /// Predictions whose id is not in the gold set.
    pub unknown: usize,
}

pub fn evaluate(predictions: &[PredictionRecord], gold: &[QaSample]) -> Result<EvalReport, MetricError> {
    let by_id: HashMap<&str, &PredictionRecord> = predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    let gold_ids: std::collections::HashSet<&str> = gold.iter().map(|s| s.id.as_str()).collect();
    let unknown = predictions.iter().filter(|p| !gold_ids.contains(p.id.as_str())).count();
    let mut missing = 0;
    let mut samples = Vec::with_capacity(gold.len());
    for s in gold {
        let score = match by_id.get(s.id.as_str()) {
            Some(p) => score_sample(p, s)?,
            None => {
                missing += 1;
                score_sample(&baseline(Baseline::MarkNone, s), s)?
            }
        };
        samples.push(score);
    }
    if missing > 0 {
        log::warn!("{missing} gold samples have no prediction; scored as mark_none");
    }
    if unknown > 0 {
        log::warn!("{unknown} predictions do not match any gold sample and were ignored");
    }
    Ok(EvalReport { languages: per_language(&samples), samples, missing, unknown })
}

pub fn per_language(samples: &[SampleScore]) -> Vec<LanguageReport> {
    let mut groups: BTreeMap<&str, Vec<&SampleScore>> = BTreeMap::new();
    for s in samples {
        groups.entry(s.lang.as_str()).or_default().push(s);
    }
    let mut out: Vec<LanguageReport> = groups
        .into_iter()
        .map(|(lang, v)| {
            let n = v.len() as f64;
            LanguageReport {
                lang: lang.to_string(),
                mean_iou: v.iter().map(|s| s.iou).sum::<f64>() / n,
                mean_cor: v.iter().map(|s| s.spearman).sum::<f64>() / n,
                count: v.len(),
            }
        })
        .collect();
    out.sort_by(|a, b| b.mean_iou.total_cmp(&a.mean_iou).then_with(|| a.lang.cmp(&b.lang)));
    out
}

impl EvalReport {
    pub fn overall(&self) -> Option<LanguageReport> {
        let n = self.samples.len();
        (n > 0).then(|| LanguageReport {
            lang: "all".into(),
            mean_iou: self.samples.iter().map(|s| s.iou).sum::<f64>() / n as f64,
            mean_cor: self.samples.iter().map(|s| s.spearman).sum::<f64>() / n as f64,
            count: n,
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("lang\tcount\tiou\tcor\n");
        for r in self.languages.iter().chain(self.overall().as_ref()) {
            let _ = writeln!(out, "{}\t{}\t{:.6}\t{:.6}", r.lang, r.count, r.mean_iou, r.mean_cor);
        }
        out
    }

    pub fn to_table(&self) -> String {
        let rows: Vec<&LanguageReport> = self.languages.iter().collect();
        let overall = self.overall();
        let width = rows.iter().map(|r| r.lang.len()).max().unwrap_or(4).max(4);
        let mut out = format!("{:<width$}  {:>6}  {:>7}  {:>7}\n", "lang", "n", "IoU", "Cor");
        let line = |out: &mut String, r: &LanguageReport| {
            let _ = writeln!(out, "{:<width$}  {:>6}  {:>7.4}  {:>7.4}", r.lang, r.count, r.mean_iou, r.mean_cor);
        };
        for r in rows {
            line(&mut out, r);
        }
        if let Some(o) = &overall {
            let _ = writeln!(out, "{}", "-".repeat(width + 28));
            line(&mut out, o);
        }
        if self.missing > 0 {
            let _ = writeln!(out, "{} samples without prediction scored as mark_none", self.missing);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallucinationStat {
    pub key: String,
    pub hallucinated: usize,
    pub clean: usize,
    pub ratio: f64,
}

fn finish_stats(counts: BTreeMap<String, (usize, usize)>) -> Vec<HallucinationStat> {
    let mut out: Vec<HallucinationStat> = counts
        .into_iter()
        .map(|(key, (h, c))| HallucinationStat {
            key,
            hallucinated: h,
            clean: c,
            ratio: if h + c == 0 { 0.0 } else { h as f64 / (h + c) as f64 },
        })
        .collect();
    out.sort_by(|a, b| b.ratio.total_cmp(&a.ratio).then_with(|| a.key.cmp(&b.key)));
    out
}

/// Per-tag and per-language counts of sidecar tokens overlapping a gold hard
/// span, each sorted by hallucination ratio.
pub fn pos_hallucination_stats(
    samples: &[QaSample],
    sidecar: &Sidecar,
) -> (Vec<HallucinationStat>, Vec<HallucinationStat>) {
    let mut by_pos: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut by_lang: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for s in samples {
        let gold = gold_hard(s);
        for t in sidecar.tokens_for(&s.id) {
            let hit = gold.iter().any(|g| g.start < t.end && t.start < g.end);
            for (map, key) in [(&mut by_pos, &t.pos), (&mut by_lang, &s.lang)] {
                let e = map.entry(key.clone()).or_default();
                if hit {
                    e.0 += 1;
                } else {
                    e.1 += 1;
                }
            }
        }
    }
    (finish_stats(by_pos), finish_stats(by_lang))
}

pub fn render_stats(title: &str, stats: &[HallucinationStat]) -> String {
    let width = stats.iter().map(|s| s.key.len()).max().unwrap_or(0).max(title.len());
    let mut out = format!("{title:<width$}  {:>8}  {:>8}  {:>6}\n", "halluc", "clean", "ratio");
    for s in stats {
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>6.3}", s.key, s.hallucinated, s.clean, s.ratio);
    }
    out
}
