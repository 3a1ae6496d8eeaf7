//! Stage templates: system prompt, few-shot examples and the input slots
//! each stage's user payload is built from.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Which prompt produced a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    FactExtraction,
    SearchTerms,
    HallucinationPrediction,
    /// Optional page rewriting used by the LLM coreference resolver.
    Coreference,
}

impl Stage {
    pub const ALL: [Stage; 4] =
        [Stage::FactExtraction, Stage::SearchTerms, Stage::HallucinationPrediction, Stage::Coreference];

    pub fn id(self) -> &'static str {
        match self {
            Stage::FactExtraction => "fact_extraction",
            Stage::SearchTerms => "search_terms",
            Stage::HallucinationPrediction => "hallucination_prediction",
            Stage::Coreference => "coreference",
        }
    }

    /// Payload keys, in the order they are rendered.
    pub fn slots(self) -> &'static [&'static str] {
        match self {
            Stage::FactExtraction => &["question", "answer"],
            Stage::SearchTerms => &["question", "facts"],
            Stage::HallucinationPrediction => &["question", "answer", "subsequence", "wikipedia_facts"],
            Stage::Coreference => &["text"],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("{stage}: missing template slot `{slot}`")]
    MissingSlot { stage: Stage, slot: String },
    #[error("{stage}: unexpected template slot `{slot}`")]
    UnexpectedSlot { stage: Stage, slot: String },
    #[error("prompt asset {path}: {message}")]
    Asset { path: PathBuf, message: String },
}

pub type TemplateVars = BTreeMap<String, Value>;

/// Chat message role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// A fully rendered request for one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub stage: Stage,
    pub system_prompt: String,
    pub few_shot: Vec<(String, String)>,
    pub user_payload: String,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn messages(&self) -> Vec<Message> {
        let mut out = Vec::with_capacity(2 + 2 * self.few_shot.len());
        out.push(Message { role: Role::System, content: self.system_prompt.clone() });
        for (user, assistant) in &self.few_shot {
            out.push(Message { role: Role::User, content: user.clone() });
            out.push(Message { role: Role::Assistant, content: assistant.clone() });
        }
        out.push(Message { role: Role::User, content: self.user_payload.clone() });
        out
    }

    /// SHA-256 over the stage id and every rendered message, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.stage.id().as_bytes());
        for m in self.messages() {
            h.update([0x1e]);
            h.update(match m.role {
                Role::System => b"system".as_slice(),
                Role::User => b"user".as_slice(),
                Role::Assistant => b"assistant".as_slice(),
            });
            h.update([0x1f]);
            h.update(m.content.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Same request with a formatting reminder appended to the user payload.
    pub fn with_reminder(&self, reminder: &str) -> ChatRequest {
        let mut out = self.clone();
        out.user_payload = format!("{}\n\n{}", self.user_payload, reminder);
        out
    }
}

#[derive(Debug, Clone, Deserialize)]
struct ExampleAsset {
    user: Value,
    assistant: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTemplate {
    pub system_prompt: String,
    pub few_shot: Vec<(String, String)>,
}

/// Templates for every stage.
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: BTreeMap<Stage, StageTemplate>,
}

fn builtin_assets(stage: Stage) -> (&'static str, &'static str) {
    match stage {
        Stage::FactExtraction => (
            include_str!("../../assets/prompts/fact_extraction.system.txt"),
            include_str!("../../assets/prompts/fact_extraction.examples.json"),
        ),
        Stage::SearchTerms => (
            include_str!("../../assets/prompts/search_terms.system.txt"),
            include_str!("../../assets/prompts/search_terms.examples.json"),
        ),
        Stage::HallucinationPrediction => (
            include_str!("../../assets/prompts/hallucination_prediction.system.txt"),
            include_str!("../../assets/prompts/hallucination_prediction.examples.json"),
        ),
        Stage::Coreference => (
            include_str!("../../assets/prompts/coreference.system.txt"),
            include_str!("../../assets/prompts/coreference.examples.json"),
        ),
    }
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => serde_json::to_string(other).expect("json value serializes"),
    }
}

fn parse_examples(raw: &str, origin: &Path) -> Result<Vec<(String, String)>, TemplateError> {
    let examples: Vec<ExampleAsset> = serde_json::from_str(raw)
        .map_err(|e| TemplateError::Asset { path: origin.to_path_buf(), message: e.to_string() })?;
    Ok(examples.iter().map(|e| (value_text(&e.user), value_text(&e.assistant))).collect())
}

impl PromptLibrary {
    /// Templates compiled into the binary.
    pub fn builtin() -> Self {
        let templates = Stage::ALL
            .iter()
            .map(|&stage| {
                let (system, examples) = builtin_assets(stage);
                let origin = PathBuf::from(format!("<builtin>/{}.examples.json", stage.id()));
                let few_shot = parse_examples(examples, &origin).expect("builtin prompt examples are valid");
                (stage, StageTemplate { system_prompt: system.trim_end().to_string(), few_shot })
            })
            .collect();
        Self { templates }
    }

    /// Builtin templates, overridden by `<stage>.system.txt` and
    /// `<stage>.examples.json` files found in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut lib = Self::builtin();
        for stage in Stage::ALL {
            let t = lib.templates.get_mut(&stage).expect("all stages present");
            let system_path = dir.join(format!("{}.system.txt", stage.id()));
            if system_path.exists() {
                let text = std::fs::read_to_string(&system_path)
                    .map_err(|e| TemplateError::Asset { path: system_path.clone(), message: e.to_string() })?;
                t.system_prompt = text.trim_end().to_string();
            }
            let examples_path = dir.join(format!("{}.examples.json", stage.id()));
            if examples_path.exists() {
                let text = std::fs::read_to_string(&examples_path)
                    .map_err(|e| TemplateError::Asset { path: examples_path.clone(), message: e.to_string() })?;
                t.few_shot = parse_examples(&text, &examples_path)?;
            }
        }
        Ok(lib)
    }

    pub fn template(&self, stage: Stage) -> &StageTemplate {
        &self.templates[&stage]
    }

    /// Render a stage. `vars` must hold exactly the stage's slots.
    pub fn render(&self, stage: Stage, vars: &TemplateVars) -> Result<ChatRequest, TemplateError> {
        for key in vars.keys() {
            if !stage.slots().contains(&key.as_str()) {
                return Err(TemplateError::UnexpectedSlot { stage, slot: key.clone() });
            }
        }
        let mut payload = Map::new();
        for &slot in stage.slots() {
            let v = vars.get(slot).ok_or_else(|| TemplateError::MissingSlot { stage, slot: slot.to_string() })?;
            payload.insert(slot.to_string(), v.clone());
        }
        let t = self.template(stage);
        Ok(ChatRequest {
            stage,
            system_prompt: t.system_prompt.clone(),
            few_shot: t.few_shot.clone(),
            user_payload: serde_json::to_string(&Value::Object(payload)).expect("json value serializes"),
            temperature: 0.0,
        })
    }
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Render with the builtin templates.
pub fn render_prompt(stage: Stage, vars: &TemplateVars) -> Result<ChatRequest, TemplateError> {
    PromptLibrary::builtin().render(stage, vars)
}
