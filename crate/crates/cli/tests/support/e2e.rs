#![allow(dead_code)]

//! Builds the replay fixture set: dataset, sidecar, recorded LLM
//! transcripts, a seeded Wikipedia cache, a config and a trained model.
//!
//! Transcripts come from a scripted model that flags numbers and
//! capitalized words missing from the retrieved evidence, so the recorded
//! answers depend on what retrieval actually selected.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use mikani_core::config::PipelineConfig;
use mikani_core::features::{write_sidecar, Sidecar, SidecarToken, EMBEDDING_DIM};
use mikani_core::judge::tokenize_answer_words;
use mikani_core::llm::{
    ChatRequest, ChatTransport, LlmGateway, Mode, PromptLibrary, Stage, TranscriptStore, TransportError,
};
use mikani_core::pipeline::{Branch, Pipeline};
use mikani_core::wiki::{WikiCache, WikiClient, WikiTransport};
use mikani_core::{write_predictions, HardSpan, QaSample, SoftSpan};
use serde_json::{json, Value};

pub struct Case {
    pub id: &'static str,
    pub lang: &'static str,
    pub question: &'static str,
    pub answer: &'static str,
    /// (fact, English translation, search term)
    pub facts: &'static [(&'static str, &'static str, &'static str)],
    pub page: (&'static str, &'static str),
    pub entities: &'static [&'static str],
    /// Gold hallucinated substrings of the answer.
    pub gold: &'static [&'static str],
}

pub const CASES: [Case; 5] = [
    Case {
        id: "e2e-en-1",
        lang: "en",
        question: "When was the Sydney Opera House opened?",
        answer: "The Sydney Opera House was opened in 1975. It was designed by Jørn Utzon.",
        facts: &[
            ("The Sydney Opera House was opened in 1975.", "The Sydney Opera House was opened in 1975.", "Sydney Opera House"),
            ("The Sydney Opera House was designed by Jørn Utzon.", "The Sydney Opera House was designed by Jørn Utzon.", "Sydney Opera House"),
        ],
        page: (
            "Sydney Opera House",
            "The Sydney Opera House is a multi-venue performing arts centre in Sydney. It was designed by the Danish architect Jørn Utzon. The building was formally opened in 1973 by Queen Elizabeth II. It sits on Bennelong Point in Sydney Harbour.",
        ),
        entities: &["Sydney Opera House"],
        gold: &["1975"],
    },
    Case {
        id: "e2e-sv-1",
        lang: "sv",
        question: "Vilken stad är Sveriges huvudstad?",
        answer: "Sveriges huvudstad är Göteborg.",
        facts: &[("Sveriges huvudstad är Göteborg.", "The capital of Sweden is Gothenburg.", "Sweden")],
        page: (
            "Sweden",
            "Sweden is a Nordic country in Northern Europe. Its capital and largest city is Stockholm. Gothenburg is the second largest city.",
        ),
        entities: &["Sveriges"],
        gold: &["Göteborg"],
    },
    Case {
        id: "e2e-de-1",
        lang: "de",
        question: "Wer schrieb Faust?",
        answer: "Faust wurde von Friedrich Schiller geschrieben.",
        facts: &[("Faust wurde von Friedrich Schiller geschrieben.", "Faust was written by Friedrich Schiller.", "Faust")],
        page: (
            "Goethe's Faust",
            "Faust is a tragic play in two parts by Johann Wolfgang von Goethe. It is considered a major work of German literature. The first part was published in 1808.",
        ),
        entities: &["Faust"],
        gold: &["Friedrich Schiller"],
    },
    Case {
        id: "e2e-fi-1",
        lang: "fi",
        question: "Mikä on Suomen pisin joki?",
        answer: "Suomen pisin joki on Kemijoki.",
        facts: &[("Suomen pisin joki on Kemijoki.", "The longest river in Finland is the Kemijoki.", "Kemijoki")],
        page: (
            "Kemijoki",
            "The Kemijoki is the longest river in Finland. It flows from Lapland to the Gulf of Bothnia near Kemi. Kemijoki is about 550 kilometres long.",
        ),
        entities: &["Suomen"],
        gold: &[],
    },
    Case {
        id: "e2e-fr-1",
        lang: "fr",
        question: "Quelle est la hauteur de la tour Eiffel ?",
        answer: "La tour Eiffel mesure 330 mètres. Elle a été construite en 1899.",
        facts: &[
            ("La tour Eiffel mesure 330 mètres.", "The Eiffel Tower is 330 metres tall.", "Eiffel Tower"),
            ("La tour Eiffel a été construite en 1899.", "The Eiffel Tower was built in 1899.", "Eiffel Tower"),
        ],
        page: (
            "Eiffel Tower",
            "The Eiffel Tower is a wrought-iron lattice tower in Paris. The tower is 330 metres tall. It was constructed from 1887 to 1889 as the entrance arch to the 1889 World's Fair.",
        ),
        entities: &["tour Eiffel"],
        gold: &["1899"],
    },
];

fn char_offset(text: &str, needle: &str) -> (usize, usize) {
    let byte = text.find(needle).expect("gold substring present");
    let start = text[..byte].chars().count();
    (start, start + needle.chars().count())
}

pub fn samples() -> Vec<QaSample> {
    CASES
        .iter()
        .map(|c| {
            let mut s = QaSample::new(c.id, c.lang, c.question, c.answer);
            let spans: Vec<(usize, usize)> = c.gold.iter().map(|g| char_offset(c.answer, g)).collect();
            s.gold_soft = Some(spans.iter().map(|&(a, b)| SoftSpan::new(a, b, 0.9)).collect());
            s.gold_hard = Some(spans.iter().map(|&(a, b)| HardSpan::new(a, b)).collect());
            s
        })
        .collect()
}

fn pos_guess(surface: &str) -> &'static str {
    let first = surface.chars().next().unwrap_or(' ');
    if surface.chars().all(|c| c.is_ascii_digit()) {
        "NUM"
    } else if !first.is_alphanumeric() {
        "PUNCT"
    } else if first.is_uppercase() {
        "PROPN"
    } else if surface.chars().count() <= 3 {
        "ADP"
    } else {
        "NOUN"
    }
}

/// FNV-1a over the surface, spread into a fixed-length vector in [-1, 1].
fn embedding(surface: &str) -> Vec<f64> {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in surface.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    (0..EMBEDDING_DIM)
        .map(|i| {
            let x = h.rotate_left(4 * i as u32) & 0xffff;
            (x as f64 / 65535.0) * 2.0 - 1.0
        })
        .collect()
}

/// Encoder tokens that score gold words high, mimicking a decent annotator.
pub fn sidecar(samples: &[QaSample]) -> Sidecar {
    let mut sc = Sidecar::default();
    for (case, s) in CASES.iter().zip(samples) {
        let gold: Vec<(usize, usize)> = case.gold.iter().map(|g| char_offset(case.answer, g)).collect();
        let tokens = tokenize_answer_words(&s.answer, &s.lang)
            .into_iter()
            .enumerate()
            .map(|(i, w)| {
                let hit = gold.iter().any(|&(a, b)| w.start < b && a < w.end);
                let bm = if hit { 0.72 } else { 0.08 + 0.01 * (i % 5) as f64 };
                SidecarToken {
                    sample_id: s.id.clone(),
                    token_index: i,
                    pos: pos_guess(&w.surface).into(),
                    bm_embedding: embedding(&w.surface),
                    surface: w.surface,
                    start: w.start,
                    end: w.end,
                    bm_score: bm,
                    bert_annotation: if hit { 1.0 } else { 0.0 },
                }
            })
            .collect();
        sc.tokens.insert(s.id.clone(), tokens);
        sc.entities.insert(s.id.clone(), case.entities.iter().map(|e| e.to_string()).collect());
    }
    sc
}

struct ScriptedModel;

fn evidence_text(bundles: &Value) -> String {
    let mut out = String::new();
    for b in bundles.as_array().into_iter().flatten() {
        let w = &b["wikipedia_facts"];
        for f in w["facts"].as_array().into_iter().flatten() {
            out.push_str(f.as_str().unwrap_or_default());
            out.push('\n');
        }
        out.push_str(w["facts_page_intro"].as_str().unwrap_or_default());
        out.push('\n');
        out.push_str(w["page_title"].as_str().unwrap_or_default());
        out.push('\n');
    }
    out
}

impl ChatTransport for ScriptedModel {
    fn send(&self, req: &ChatRequest) -> Result<String, TransportError> {
        let payload: Value = serde_json::from_str(req.user_payload.lines().next().unwrap_or_default())
            .map_err(|e| TransportError::Protocol(e.to_string()))?;
        let reply = match req.stage {
            Stage::FactExtraction => {
                let case = CASES.iter().find(|c| payload["answer"] == c.answer).expect("known answer");
                let facts: Vec<Value> =
                    case.facts.iter().map(|(f, e, _)| json!({"fact": f, "english_translation": e})).collect();
                Value::Array(facts)
            }
            Stage::SearchTerms => {
                let sets: Vec<Value> = payload["facts"]
                    .as_array()
                    .expect("facts list")
                    .iter()
                    .map(|f| {
                        let (_, _, term) =
                            CASES.iter().flat_map(|c| c.facts.iter()).find(|(_, e, _)| f == e).expect("known fact");
                        json!({"sentence": f, "search_terms": [term]})
                    })
                    .collect();
                Value::Array(sets)
            }
            Stage::HallucinationPrediction => {
                let evidence = evidence_text(&payload["wikipedia_facts"]);
                let preds: Vec<Value> = payload["subsequence"]
                    .as_array()
                    .expect("subsequence")
                    .iter()
                    .map(|w| {
                        let word = w["word"].as_str().unwrap_or_default();
                        let first = word.chars().next().unwrap_or(' ');
                        let p = if w["id"] == 0 || evidence.contains(word) {
                            0.0
                        } else if first.is_ascii_digit() {
                            0.85
                        } else if first.is_uppercase() {
                            0.6
                        } else {
                            0.0
                        };
                        json!({"id": w["id"], "word": word, "prediction": p})
                    })
                    .collect();
                Value::Array(preds)
            }
            Stage::Coreference => json!({"text": payload["text"]}),
        };
        Ok(reply.to_string())
    }
}

struct SeededOnly;

impl WikiTransport for SeededOnly {
    fn get(&self, params: &[(&str, &str)]) -> Result<String, TransportError> {
        panic!("fixture lookup outside the seeded cache: {params:?}");
    }
}

pub const CONFIG: &str = r#"seed = 13

[llm]
mode = "replay"
fixtures_dir = "llm"
max_retries = 0

[wiki]
cache_dir = "wiki"

[paths]
sidecar = "sidecar.jsonl"
model = "model.json"
"#;

/// Write the full fixture set into `dir`.
pub fn generate(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let samples = samples();
    let dataset: String = samples.iter().map(|s| serde_json::to_string(&s.to_record()).unwrap() + "\n").collect();
    fs::write(dir.join("dataset.jsonl"), dataset).unwrap();
    let sc = sidecar(&samples);
    write_sidecar(&dir.join("sidecar.jsonl"), &sc).unwrap();
    fs::write(dir.join("config.toml"), CONFIG).unwrap();

    let cache = WikiCache::on_disk(dir.join("wiki"));
    for c in &CASES {
        cache.seed(c.facts[0].2, true, &[c.page]).unwrap();
    }
    let mut cfg = PipelineConfig::load(&dir.join("config.toml")).unwrap();
    cfg.llm.mode = Mode::Record;
    let store = TranscriptStore::on_disk(dir.join("llm"), Mode::Record);
    let gateway = LlmGateway::new(PromptLibrary::builtin(), store, Some(Arc::new(ScriptedModel)));
    let wiki = WikiClient::new(Arc::new(SeededOnly), cache);
    let pipeline = Pipeline::with_parts(cfg, Arc::new(gateway), wiki);
    let (model, _) = pipeline.train_svr(&samples, &sc).unwrap();
    model.save(&dir.join("model.json")).unwrap();
    let preds = pipeline.annotate(&samples, Branch::Ensemble, Some(&sc), Some(&model)).unwrap();
    write_predictions(&dir.join("expected_predictions.jsonl"), &preds).unwrap();
}

/// Relative paths of every file under `dir`, sorted.
pub fn list_files(dir: &Path) -> Vec<String> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<String>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.push(p.strip_prefix(base).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

pub fn copy_tree(from: &Path, to: &Path) {
    for rel in list_files(from) {
        let dst = to.join(&rel);
        fs::create_dir_all(dst.parent().unwrap()).unwrap();
        fs::copy(from.join(&rel), dst).unwrap();
    }
}
