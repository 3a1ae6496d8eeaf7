//! Coreference resolution hook applied to whole pages before sentence
//! splitting. The default resolver returns its input unchanged.

use std::sync::Arc;

use serde_json::{json, Value};

use crate::llm::{LlmGateway, Stage, TemplateVars};

pub trait CorefResolver: Send + Sync {
    fn resolve(&self, text: &str) -> Result<String, String>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityResolver;

impl CorefResolver for IdentityResolver {
    fn resolve(&self, text: &str) -> Result<String, String> {
        Ok(text.to_string())
    }
}

/// Rewrites pronouns through the chat model.
pub struct LlmCorefResolver {
    gateway: Arc<LlmGateway>,
}

impl LlmCorefResolver {
    pub fn new(gateway: Arc<LlmGateway>) -> Self {
        Self { gateway }
    }
}

impl CorefResolver for LlmCorefResolver {
    fn resolve(&self, text: &str) -> Result<String, String> {
        let vars: TemplateVars = [("text".to_string(), json!(text))].into_iter().collect();
        let req = self.gateway.render(Stage::Coreference, &vars).map_err(|e| e.to_string())?;
        let resp = self.gateway.complete(&req).map_err(|e| e.to_string())?;
        match resp.parsed {
            Some(Value::Object(map)) => map
                .get("text")
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| "response has no `text` key".to_string()),
            _ => Err("response is not a JSON object".to_string()),
        }
    }
}

/// Apply `resolver`, falling back to the original text if it fails.
pub fn resolve_coreferences(text: &str, resolver: &dyn CorefResolver) -> String {
    if text.is_empty() {
        return String::new();
    }
    match resolver.resolve(text) {
        Ok(resolved) => resolved,
        Err(e) => {
            log::warn!("coreference resolution failed ({e}); using original text");
            text.to_string()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Mode, TranscriptStore};

    struct Broken;
    impl CorefResolver for Broken {
        fn resolve(&self, _: &str) -> Result<String, String> {
            Err("boom".into())
        }
    }

    #[test]
    fn identity_and_empty() {
        assert_eq!(resolve_coreferences("He left.", &IdentityResolver), "He left.");
        assert_eq!(resolve_coreferences("", &IdentityResolver), "");
    }

    #[test]
    fn failure_falls_back() {
        assert_eq!(resolve_coreferences("He left.", &Broken), "He left.");
    }

    #[test]
    fn llm_resolver_replays_fixture() {
        let text = "Einstein was born in Ulm. He moved to Munich.";
        let store = TranscriptStore::in_memory(Mode::Replay);
        let gw = Arc::new(LlmGateway::replay(store));
        let vars: TemplateVars = [("text".to_string(), json!(text))].into_iter().collect();
        let req = gw.render(Stage::Coreference, &vars).unwrap();
        gw.store()
            .put(
                Stage::Coreference,
                &req.fingerprint(),
                r#"{"text": "Einstein was born in Ulm. Einstein moved to Munich."}"#,
            )
            .unwrap();
        let out = resolve_coreferences(text, &LlmCorefResolver::new(gw.clone()));
        assert_eq!(out, "Einstein was born in Ulm. Einstein moved to Munich.");
        // a miss falls back to identity
        assert_eq!(resolve_coreferences("Other.", &LlmCorefResolver::new(gw)), "Other.");
    }
}
