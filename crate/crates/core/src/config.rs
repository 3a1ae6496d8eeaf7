//! Pipeline configuration: TOML file, environment, then caller overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::llm::Mode;
use crate::merge::MergePolicy;
use crate::svr::SvrConfig;
use crate::wiki::{SelectionConfig, DEFAULT_BASE_URL};

pub const ENV_API_KEY: &str = "MIKANI_API_KEY";
pub const ENV_ENDPOINT: &str = "MIKANI_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "MIKANI_LLM_MODEL";
pub const ENV_MODE: &str = "MIKANI_MODE";
pub const ENV_WIKI_URL: &str = "MIKANI_WIKI_URL";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub endpoint: String,
    pub model: String,
    pub mode: Mode,
    /// Transcript directory used by record and replay.
    pub fixtures_dir: Option<PathBuf>,
    /// Directory with replacement prompt assets.
    pub prompts_dir: Option<PathBuf>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Never written to disk; comes from the environment.
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            mode: Mode::Live,
            fixtures_dir: None,
            prompts_dir: None,
            timeout_secs: 60,
            max_retries: 3,
            api_key: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WikiSettings {
    pub base_url: String,
    pub requests_per_second: f64,
    pub timeout_secs: u64,
    pub cache_dir: Option<PathBuf>,
    /// Rewrite page pronouns through the chat model before splitting.
    pub coreference: bool,
}

impl Default for WikiSettings {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.into(),
            requests_per_second: 5.0,
            timeout_secs: 30,
            cache_dir: None,
            coreference: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Parallelism {
    /// Concurrent judge calls per answer.
    pub judge: usize,
    /// Concurrent evidence lookups per answer.
    pub wiki: usize,
    /// Samples processed at once.
    pub samples: usize,
}

impl Default for Parallelism {
    fn default() -> Self {
        Self { judge: 4, wiki: 4, samples: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Per-sample verification results, reused across commands.
    pub rfvm_cache_dir: Option<PathBuf>,
    pub sidecar: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub llm: LlmSettings,
    pub wiki: WikiSettings,
    pub selection: SelectionConfig,
    pub svr: SvrConfig,
    pub merge: MergePolicy,
    pub parallelism: Parallelism,
    pub paths: Paths,
    /// Seed for the train/holdout split.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            llm: LlmSettings::default(),
            wiki: WikiSettings::default(),
            selection: SelectionConfig::default(),
            svr: SvrConfig::default(),
            merge: MergePolicy::default(),
            parallelism: Parallelism::default(),
            paths: Paths::default(),
            seed: 13,
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Invalid { key: "config".into(), message: e.to_string() })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Read a config file. Relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let file_err = |message: String| ConfigError::File { path: path.to_path_buf(), message };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.llm.fixtures_dir,
            &mut cfg.llm.prompts_dir,
            &mut cfg.wiki.cache_dir,
            &mut cfg.paths.rfvm_cache_dir,
            &mut cfg.paths.sidecar,
            &mut cfg.paths.model,
        ] {
            rebase(base, p);
        }
        Ok(cfg)
    }

    /// Overlay environment variables read through `get`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(key) = get(ENV_API_KEY).filter(|k| !k.is_empty()) {
            self.llm.api_key = Some(key);
        }
        if let Some(v) = get(ENV_ENDPOINT) {
            self.llm.endpoint = v;
        }
        if let Some(v) = get(ENV_MODEL) {
            self.llm.model = v;
        }
        if let Some(v) = get(ENV_WIKI_URL) {
            self.wiki.base_url = v;
        }
        if let Some(v) = get(ENV_MODE) {
            self.llm.mode = v.parse().map_err(|message| ConfigError::Invalid { key: ENV_MODE.into(), message })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, message: String| Err(ConfigError::Invalid { key: key.into(), message });
        if let Err(m) = self.selection.validate() {
            return invalid("selection", m);
        }
        if let Err(m) = self.merge.validate() {
            return invalid("merge", m);
        }
        if let Err(e) = self.svr.validate() {
            return invalid("svr", e.to_string());
        }
        if self.llm.mode != Mode::Live && self.llm.fixtures_dir.is_none() {
            return invalid("llm.fixtures_dir", format!("required in {} mode", self.llm.mode));
        }
        if self.parallelism.judge == 0 || self.parallelism.wiki == 0 || self.parallelism.samples == 0 {
            return invalid("parallelism", "limits must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wiki::Strategy;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml();
        assert!(text.contains("strategy = \"mmr\""));
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = PipelineConfig::from_toml("[selection]\ntop_n = 6\n[svr]\nc = 2.0\n").unwrap();
        assert_eq!(cfg.selection.top_n, 6);
        assert_eq!(cfg.selection.strategy, Strategy::Mmr);
        assert_eq!(cfg.svr.c, 2.0);
        assert_eq!(cfg.svr.weight_pos, 100.0);
    }

    #[test]
    fn env_overrides_file() {
        let mut cfg = PipelineConfig::from_toml("[llm]\nmodel = \"from-file\"\n").unwrap();
        cfg.apply_env(|k| match k {
            ENV_MODEL => Some("from-env".into()),
            ENV_API_KEY => Some("secret".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(cfg.llm.model, "from-env");
        assert_eq!(cfg.llm.api_key.as_deref(), Some("secret"));
        assert!(!cfg.to_toml().contains("secret"));
        assert!(cfg.apply_env(|k| (k == ENV_MODE).then(|| "sideways".into())).is_err());
    }

    #[test]
    fn relative_paths_follow_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mikani.toml");
        std::fs::write(&p, "[llm]\nmode = \"replay\"\nfixtures_dir = \"llm\"\n").unwrap();
        let cfg = PipelineConfig::load(&p).unwrap();
        assert_eq!(cfg.llm.fixtures_dir.unwrap(), dir.path().join("llm"));
    }

    #[test]
    fn replay_needs_fixtures() {
        let mut cfg = PipelineConfig::default();
        cfg.llm.mode = Mode::Replay;
        assert!(cfg.validate().is_err());
        cfg.llm.fixtures_dir = Some("x".into());
        assert!(cfg.validate().is_ok());
    }
}
