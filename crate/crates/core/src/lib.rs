//! Token-level hallucination annotation for question answering output.
//!
//! Verification ([`judge::run_rfvm`]) splits an answer into atomic facts,
//! retrieves Wikipedia evidence and has a chat model score every word. An
//! ε-SVR ([`svr`]) combines that score with per-token encoder features from
//! a sidecar file, and [`merge`] turns token scores into character spans.

pub mod concurrency;
pub mod config;
pub mod data;
pub mod facts;
pub mod features;
pub mod judge;
pub mod llm;
pub mod merge;
pub mod metrics;
pub mod pipeline;
pub mod svr;
pub mod text;
pub mod wiki;

pub use config::PipelineConfig;
pub use data::{
    load_dataset, mask_to_spans, read_predictions, spans_to_mask, write_predictions, CharMask, HardSpan,
    PredictionRecord, QaSample, SoftSpan,
};
pub use features::{load_sidecar, FeatureRow, Sidecar, SidecarToken};
pub use judge::{run_rfvm, RfvmResult, TokenPrediction, WordToken};
pub use llm::{LlmGateway, Mode, Stage};
pub use merge::{merge_spans, to_hard, MergePolicy, WordSpan};
pub use metrics::{evaluate, iou, spearman_cor, Baseline, EvalReport, LanguageReport};
pub use pipeline::{Branch, Pipeline, PipelineError};
pub use svr::{svr_predict, svr_train, SvrConfig, SvrModel};
pub use wiki::{SelectionConfig, Strategy};
