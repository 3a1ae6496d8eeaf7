//! Wiring of the verification branch, the annotator sidecar and the SVR
//! ensemble into dataset-level operations.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::concurrency::parallel_map;
use crate::config::{ConfigError, PipelineConfig};
use crate::data::{normalize_hard, PredictionRecord, QaSample};
use crate::features::{assemble_features, qa_entity_flags, FeatureError, Sidecar};
use crate::judge::{run_rfvm, tokenize_answer_words, RfvmDeps, RfvmError, RfvmResult};
use crate::llm::{
    write_atomic, ChatTransport, HttpChatTransport, LlmGateway, Mode, PromptLibrary, RetryPolicy, TemplateError,
    TranscriptStore, TransportError,
};
use crate::merge::{postprocess, to_hard};
use crate::svr::{svr_predict, train_with_report, SvrError, SvrModel};
use crate::wiki::{HttpWikiTransport, LlmCorefResolver, WikiCache, WikiClient, WikiTransport};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Prompts(#[from] TemplateError),
    #[error(transparent)]
    Rfvm(#[from] RfvmError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Svr(#[from] SvrError),
    #[error("verification cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
    #[error("no sidecar annotations; run the Python bm-annotator to produce a sidecar JSONL and pass --sidecar (or set paths.sidecar), or use --rfvm-only")]
    MissingSidecar,
    #[error("no trained SVR model; run `mikani train-svr` first or pass --rfvm-only / --bm-only")]
    MissingModel,
    #[error("no training rows: none of the samples has sidecar tokens")]
    EmptyTrainingSet,
}

impl PipelineError {
    /// True when the failure came from an unreachable or rejecting service.
    pub fn is_transport(&self) -> bool {
        matches!(self, PipelineError::Rfvm(e) if e.is_transport())
    }
}

/// Stands in for Wikipedia when replaying: every uncached lookup fails.
pub struct OfflineWikiTransport;

impl WikiTransport for OfflineWikiTransport {
    fn get(&self, params: &[(&str, &str)]) -> Result<String, TransportError> {
        let what = params.iter().find(|(k, _)| *k == "titles" || *k == "srsearch").map_or("", |(_, v)| v);
        Err(TransportError::Protocol(format!("replay mode: no cached Wikipedia response for `{what}`")))
    }
}

/// Which signal produces the final spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Ensemble,
    RfvmOnly,
    BmOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Index into the sample list for each row.
    pub sample_of_row: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub train_rows: usize,
    pub holdout_rows: usize,
    pub holdout_mse: Option<f64>,
    /// Holdout MSE of always predicting the training mean.
    pub baseline_mse: Option<f64>,
    pub iterations: usize,
}

pub struct Pipeline {
    config: PipelineConfig,
    gateway: Arc<LlmGateway>,
    wiki: WikiClient,
}

impl Pipeline {
    pub fn from_config(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let llm = &config.llm;
        let store = match &llm.fixtures_dir {
            Some(dir) => TranscriptStore::on_disk(dir, llm.mode),
            None => TranscriptStore::in_memory(llm.mode),
        };
        let prompts = match &llm.prompts_dir {
            Some(dir) => PromptLibrary::with_overrides(dir)?,
            None => PromptLibrary::builtin(),
        };
        let retry = RetryPolicy { max_retries: llm.max_retries, ..RetryPolicy::default() };
        let transport: Option<Arc<dyn ChatTransport>> = (llm.mode != Mode::Replay).then(|| {
            Arc::new(HttpChatTransport::new(
                &llm.endpoint,
                &llm.model,
                llm.api_key.clone(),
                Duration::from_secs(llm.timeout_secs),
            )) as Arc<dyn ChatTransport>
        });
        let gateway = Arc::new(LlmGateway::new(prompts, store, transport).with_retry(retry));

        let w = &config.wiki;
        let wiki_transport: Arc<dyn WikiTransport> = if llm.mode == Mode::Replay {
            Arc::new(OfflineWikiTransport)
        } else {
            Arc::new(HttpWikiTransport::new(&w.base_url, w.requests_per_second, Duration::from_secs(w.timeout_secs)))
        };
        let cache = match &w.cache_dir {
            Some(dir) => WikiCache::on_disk(dir),
            None => WikiCache::in_memory(),
        };
        let mut wiki = WikiClient::new(wiki_transport, cache).with_retry(retry);
        if w.coreference {
            wiki = wiki.with_coref(Arc::new(LlmCorefResolver::new(gateway.clone())));
        }
        Ok(Self { config, gateway, wiki })
    }

    /// Assemble from prebuilt parts.
    pub fn with_parts(config: PipelineConfig, gateway: Arc<LlmGateway>, wiki: WikiClient) -> Self {
        Self { config, gateway, wiki }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &LlmGateway {
        &self.gateway
    }

    pub fn wiki(&self) -> &WikiClient {
        &self.wiki
    }

    fn cache_path(&self, sample: &QaSample) -> Option<PathBuf> {
        let dir = self.config.paths.rfvm_cache_dir.as_ref()?;
        let key = json!({
            "id": sample.id,
            "lang": sample.lang,
            "question": sample.question,
            "answer": sample.answer,
            "selection": self.config.selection,
            "model": self.config.llm.model,
        });
        let digest = hex::encode(Sha256::digest(key.to_string().as_bytes()));
        Some(dir.join(format!("{digest}.json")))
    }

    fn cached(&self, path: &Path) -> Result<Option<RfvmResult>, PipelineError> {
        if !path.exists() {
            return Ok(None);
        }
        let err = |message: String| PipelineError::Cache { path: path.to_path_buf(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map(Some).map_err(|e| err(e.to_string()))
    }

    /// Verification result for one sample, reusing the on-disk cache.
    pub fn verify(&self, sample: &QaSample) -> Result<RfvmResult, PipelineError> {
        let path = self.cache_path(sample);
        if let Some(p) = &path {
            if let Some(hit) = self.cached(p)? {
                return Ok(hit);
            }
        }
        let deps = RfvmDeps {
            gateway: &self.gateway,
            wiki: &self.wiki,
            selection: self.config.selection,
            judge_parallelism: self.config.parallelism.judge,
            wiki_parallelism: self.config.parallelism.wiki,
        };
        let result = run_rfvm(sample, &deps)?;
        // degraded results are not cached so a later run can retry them
        if let (Some(p), true) = (&path, result.degraded_sentences.is_empty()) {
            let body = serde_json::to_string_pretty(&result).expect("result serializes");
            write_atomic(p, body.as_bytes())
                .map_err(|e| PipelineError::Cache { path: p.clone(), message: e.to_string() })?;
        }
        Ok(result)
    }

    pub fn verify_all(&self, samples: &[QaSample]) -> Vec<Result<RfvmResult, PipelineError>> {
        parallel_map(samples, self.config.parallelism.samples, |_, s| self.verify(s))
    }

    /// Soft and hard spans for every sample, in input order.
    pub fn annotate(
        &self,
        samples: &[QaSample],
        branch: Branch,
        sidecar: Option<&Sidecar>,
        model: Option<&SvrModel>,
    ) -> Result<Vec<PredictionRecord>, PipelineError> {
        let policy = self.config.merge;
        if branch != Branch::RfvmOnly && sidecar.is_none() {
            return Err(PipelineError::MissingSidecar);
        }
        if branch == Branch::Ensemble && model.is_none() {
            return Err(PipelineError::MissingModel);
        }
        let rfvm: Vec<Option<RfvmResult>> = match branch {
            Branch::BmOnly => samples.iter().map(|_| None).collect(),
            _ => self.verify_all(samples).into_iter().map(|r| r.map(Some)).collect::<Result<_, _>>()?,
        };
        let mut out = Vec::with_capacity(samples.len());
        for (sample, rfvm) in samples.iter().zip(rfvm) {
            let record = match (branch, rfvm) {
                (Branch::RfvmOnly, Some(r)) => {
                    let hard = normalize_hard(&to_hard(&r.soft_spans, &policy));
                    PredictionRecord { id: sample.id.clone(), soft_labels: r.soft_spans, hard_labels: hard }
                }
                (_, rfvm) => {
                    let tokens = sidecar.expect("checked above").tokens_for(&sample.id);
                    let words = tokenize_answer_words(&sample.answer, &sample.lang);
                    let probs: Vec<f64> = match (rfvm, model) {
                        (Some(r), Some(m)) if !tokens.is_empty() => {
                            let flags = qa_entity_flags(
                                sidecar.expect("checked above").entities_for(&sample.id),
                                tokens,
                                &sample.answer,
                            );
                            let rows: Vec<Vec<f64>> = assemble_features(&sample.id, tokens, &r, &flags)?
                                .iter()
                                .map(|row| row.to_vec())
                                .collect();
                            svr_predict(m, &rows)?
                        }
                        _ => {
                            if tokens.is_empty() {
                                log::warn!("{}: no sidecar tokens; emitting no spans", sample.id);
                            }
                            tokens.iter().map(|t| t.bm_score).collect()
                        }
                    };
                    let scored: Vec<(usize, usize, f64)> =
                        tokens.iter().zip(&probs).map(|(t, &p)| (t.start, t.end, p)).collect();
                    let (soft, hard) = postprocess(&words, &scored, &policy);
                    PredictionRecord { id: sample.id.clone(), soft_labels: soft, hard_labels: hard }
                }
            };
            out.push(record);
        }
        Ok(out)
    }

    /// Feature rows and per-token targets (highest gold probability over each
    /// token's characters).
    pub fn training_set(&self, samples: &[QaSample], sidecar: &Sidecar) -> Result<TrainingSet, PipelineError> {
        let with_tokens: Vec<usize> =
            (0..samples.len()).filter(|&i| !sidecar.tokens_for(&samples[i].id).is_empty()).collect();
        let skipped = samples.len() - with_tokens.len();
        if skipped > 0 {
            log::warn!("{skipped} samples have no sidecar tokens and are left out of training");
        }
        let subset: Vec<QaSample> = with_tokens.iter().map(|&i| samples[i].clone()).collect();
        let results = self.verify_all(&subset);
        let mut set = TrainingSet { rows: Vec::new(), targets: Vec::new(), sample_of_row: Vec::new() };
        for ((&idx, sample), rfvm) in with_tokens.iter().zip(&subset).zip(results) {
            let rfvm = rfvm?;
            let tokens = sidecar.tokens_for(&sample.id);
            let flags = qa_entity_flags(sidecar.entities_for(&sample.id), tokens, &sample.answer);
            let gold = sample.gold_soft_mask();
            for (row, t) in assemble_features(&sample.id, tokens, &rfvm, &flags)?.iter().zip(tokens) {
                let end = t.end.min(gold.len());
                let target = gold.values[t.start.min(end)..end].iter().copied().fold(0.0, f64::max);
                set.rows.push(row.to_vec());
                set.targets.push(target);
                set.sample_of_row.push(idx);
            }
        }
        if set.rows.is_empty() {
            return Err(PipelineError::EmptyTrainingSet);
        }
        Ok(set)
    }

    /// Train on a seeded 90/10 sample-level split and report holdout error.
    pub fn train_svr(
        &self,
        samples: &[QaSample],
        sidecar: &Sidecar,
    ) -> Result<(SvrModel, TrainSummary), PipelineError> {
        let set = self.training_set(samples, sidecar)?;
        let holdout = holdout_samples(samples.len(), self.config.seed);
        let (mut train_x, mut train_y, mut hold_x, mut hold_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for ((row, &y), &s) in set.rows.iter().zip(&set.targets).zip(&set.sample_of_row) {
            if holdout[s] {
                hold_x.push(row.clone());
                hold_y.push(y);
            } else {
                train_x.push(row.clone());
                train_y.push(y);
            }
        }
        let (model, report) = train_with_report(&train_x, &train_y, &self.config.svr)?;
        let (holdout_mse, baseline_mse) = if hold_x.is_empty() {
            (None, None)
        } else {
            let mean = train_y.iter().sum::<f64>() / train_y.len() as f64;
            let pred = svr_predict(&model, &hold_x)?;
            let mse = |p: &mut dyn Iterator<Item = f64>| {
                p.zip(&hold_y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / hold_y.len() as f64
            };
            (Some(mse(&mut pred.into_iter())), Some(mse(&mut std::iter::repeat(mean))))
        };
        let summary = TrainSummary {
            train_rows: train_x.len(),
            holdout_rows: hold_x.len(),
            holdout_mse,
            baseline_mse,
            iterations: report.iterations,
        };
        Ok((model, summary))
    }
}

/// Mark a tenth of the samples (rounded down) as held out, chosen by a
/// seeded shuffle.
pub fn holdout_samples(n: usize, seed: u64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut mask = vec![false; n];
    for &i in &order[..n / 10] {
        mask[i] = true;
    }
    mask
}
