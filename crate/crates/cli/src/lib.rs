//! Command implementations behind the `mikani` binary.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mikani_core::config::PipelineConfig;
use mikani_core::data::{load_dataset, read_predictions, write_predictions, QaSample};
use mikani_core::features::load_sidecar;
use mikani_core::judge::RfvmResult;
use mikani_core::merge::to_hard;
use mikani_core::metrics::{baseline, evaluate, pos_hallucination_stats, render_stats, Baseline};
use mikani_core::pipeline::{Branch, Pipeline, PipelineError};
use mikani_core::svr::SvrModel;
use mikani_core::text::CharOffsets;
use mikani_core::{HardSpan, Mode, SoftSpan, Strategy};

/// Exit status for an unreachable or rejecting LLM or Wikipedia endpoint.
pub const EXIT_TRANSPORT: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "mikani", version, about = "Token-level hallucination annotation for QA answers")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// LLM mode: live, record or replay.
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    /// Evidence selection: top_n or mmr.
    #[arg(long, global = true)]
    pub strategy: Option<Strategy>,
    /// Evidence sentences kept per fact.
    #[arg(long = "top-n", global = true)]
    pub top_n: Option<usize>,
    /// MMR trade-off between relevance and diversity.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Hard-label threshold on span probability (strictly greater).
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Concurrent judge calls per answer.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Verify a single question/answer pair and print word probabilities.
    Verify(VerifyArgs),
    /// Annotate every sample of a dataset and write predictions JSONL.
    Annotate(AnnotateArgs),
    /// Train the SVR ensemble on a labeled dataset.
    TrainSvr(TrainArgs),
    /// Score predictions (or a baseline) against a labeled dataset.
    Eval(EvalArgs),
    /// Hallucination ratios per POS tag and per language.
    Stats(StatsArgs),
    /// Inspect or clear managed cache directories.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub question: String,
    #[arg(long)]
    pub answer: String,
    #[arg(long, default_value = "en")]
    pub lang: String,
    #[arg(long, default_value = "cli")]
    pub id: String,
    /// Also write an HTML page with highlighted spans.
    #[arg(long)]
    pub html: Option<PathBuf>,
    /// Print the full verification result as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Emit the verification branch alone.
    #[arg(long, conflicts_with = "bm_only")]
    pub rfvm_only: bool,
    /// Emit the encoder branch alone.
    #[arg(long)]
    pub bm_only: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, required_unless_present = "baseline")]
    pub predictions: Option<PathBuf>,
    /// Score a baseline instead of a predictions file.
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,
    /// Write the per-language report as TSV.
    #[arg(long)]
    pub tsv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineArg {
    MarkAll,
    MarkNone,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CacheAction {
    List,
    Clear,
}

/// File config, then environment, then command-line flags.
pub fn resolve_config(global: &GlobalArgs, env: impl Fn(&str) -> Option<String>) -> Result<PipelineConfig> {
    let mut cfg = match &global.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env(env)?;
    if let Some(m) = global.mode {
        cfg.llm.mode = m;
    }
    if let Some(s) = global.strategy {
        cfg.selection.strategy = s;
    }
    if let Some(n) = global.top_n {
        cfg.selection.top_n = n;
    }
    if let Some(l) = global.lambda {
        cfg.selection.lambda = l;
    }
    if let Some(t) = global.threshold {
        cfg.merge.hard_threshold = t;
    }
    if let Some(p) = global.parallelism {
        cfg.parallelism.judge = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run one command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(&cli.global, |k| std::env::var(k).ok())?;
    match cli.command {
        Command::Verify(a) => cmd_verify(cfg, &a, out),
        Command::Annotate(a) => cmd_annotate(cfg, &a, out),
        Command::TrainSvr(a) => cmd_train_svr(cfg, &a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Stats(a) => cmd_stats(&cfg, &a, out),
        Command::Cache { action } => cmd_cache(&cfg, action, out),
    }
}

/// Exit status for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let transport = err.chain().any(|e| e.downcast_ref::<PipelineError>().is_some_and(PipelineError::is_transport));
    if transport {
        EXIT_TRANSPORT
    } else {
        1
    }
}

fn load_samples(path: &Path) -> Result<Vec<QaSample>> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn sidecar_path(cfg: &PipelineConfig, flag: &Option<PathBuf>) -> Option<PathBuf> {
    flag.clone().or_else(|| cfg.paths.sidecar.clone())
}

pub fn cmd_verify(cfg: PipelineConfig, a: &VerifyArgs, out: &mut dyn Write) -> Result<()> {
    let policy = cfg.merge;
    let pipeline = Pipeline::from_config(cfg)?;
    let sample = QaSample::new(&a.id, &a.lang, &a.question, &a.answer);
    let result = pipeline.verify(&sample).context("verification failed")?;
    let hard = to_hard(&result.soft_spans, &policy);
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&result)?)?;
    } else {
        out.write_all(render_verification(&sample.answer, &result, &hard).as_bytes())?;
    }
    if let Some(path) = &a.html {
        fs::write(path, render_html(&sample.question, &sample.answer, &result.soft_spans, &hard))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn span_text(answer: &str, start: usize, end: usize) -> &str {
    CharOffsets::new(answer).slice(answer, start, end)
}

pub fn render_verification(answer: &str, result: &RfvmResult, hard: &[HardSpan]) -> String {
    let mut s = String::new();
    let width = result.predictions.iter().map(|p| p.word.surface.chars().count()).max().unwrap_or(4).max(4);
    let _ = writeln!(s, "{:<width$}  prob", "word");
    for p in &result.predictions {
        let _ = writeln!(s, "{:<width$}  {:.3}", p.word.surface, p.prob);
    }
    let _ = writeln!(s, "\nsoft spans:");
    for sp in &result.soft_spans {
        let _ = writeln!(s, "  [{}, {}) {:.3} {:?}", sp.start, sp.end, sp.prob, span_text(answer, sp.start, sp.end));
    }
    let _ = writeln!(s, "hard spans:");
    for h in hard {
        let _ = writeln!(s, "  [{}, {}) {:?}", h.start, h.end, span_text(answer, h.start, h.end));
    }
    if !result.degraded_sentences.is_empty() {
        let _ = writeln!(s, "degraded sentences: {:?}", result.degraded_sentences);
    }
    s
}

fn escape_html(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Standalone page with soft spans shaded by probability and hard spans underlined.
pub fn render_html(question: &str, answer: &str, soft: &[SoftSpan], hard: &[HardSpan]) -> String {
    let chars: Vec<char> = answer.chars().collect();
    let mut probs = vec![0.0; chars.len()];
    for sp in soft {
        for p in &mut probs[sp.start.min(chars.len())..sp.end.min(chars.len())] {
            *p = sp.prob;
        }
    }
    let mut in_hard = vec![false; chars.len()];
    for h in hard {
        for f in &mut in_hard[h.start.min(chars.len())..h.end.min(chars.len())] {
            *f = true;
        }
    }
    let mut body = String::new();
    let mut i = 0;
    while i < chars.len() {
        let mut j = i + 1;
        while j < chars.len() && probs[j] == probs[i] && in_hard[j] == in_hard[i] {
            j += 1;
        }
        let text: String = chars[i..j].iter().collect();
        if probs[i] > 0.0 {
            let deco = if in_hard[i] { "underline" } else { "none" };
            let _ = write!(
                body,
                "<span title=\"{:.3}\" style=\"background: rgba(220, 40, 40, {:.3}); text-decoration: {deco}\">{}</span>",
                probs[i],
                probs[i],
                escape_html(&text)
            );
        } else {
            body.push_str(&escape_html(&text));
        }
        i = j;
    }
    format!(
        "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>mikani</title></head>\n<body>\n<p><b>Q:</b> {}</p>\n<p><b>A:</b> {body}</p>\n</body></html>\n",
        escape_html(question)
    )
}

fn branch_of(a: &AnnotateArgs) -> Branch {
    match (a.rfvm_only, a.bm_only) {
        (true, _) => Branch::RfvmOnly,
        (_, true) => Branch::BmOnly,
        _ => Branch::Ensemble,
    }
}

pub fn cmd_annotate(cfg: PipelineConfig, a: &AnnotateArgs, out: &mut dyn Write) -> Result<()> {
    let samples = load_samples(&a.dataset)?;
    let branch = branch_of(a);
    let sidecar = match (branch, sidecar_path(&cfg, &a.sidecar)) {
        (Branch::RfvmOnly, _) => None,
        (_, Some(p)) => Some(load_sidecar(&p).with_context(|| format!("loading sidecar {}", p.display()))?),
        (_, None) => return Err(PipelineError::MissingSidecar.into()),
    };
    let model = match (branch, a.model.clone().or_else(|| cfg.paths.model.clone())) {
        (Branch::Ensemble, Some(p)) => Some(SvrModel::load(&p)?),
        (Branch::Ensemble, None) => return Err(PipelineError::MissingModel.into()),
        _ => None,
    };
    let pipeline = Pipeline::from_config(cfg)?;
    let records = pipeline.annotate(&samples, branch, sidecar.as_ref(), model.as_ref())?;
    write_predictions(&a.out, &records)?;
    writeln!(out, "wrote {} predictions to {}", records.len(), a.out.display())?;
    Ok(())
}

pub fn cmd_train_svr(cfg: PipelineConfig, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let samples = load_samples(&a.dataset)?;
    let path = sidecar_path(&cfg, &a.sidecar).ok_or(PipelineError::MissingSidecar)?;
    let sidecar = load_sidecar(&path).with_context(|| format!("loading sidecar {}", path.display()))?;
    let target =
        a.out.clone().or_else(|| cfg.paths.model.clone()).unwrap_or_else(|| PathBuf::from("mikani-svr.v1.json"));
    let pipeline = Pipeline::from_config(cfg)?;
    let (model, summary) = pipeline.train_svr(&samples, &sidecar)?;
    model.save(&target)?;
    writeln!(
        out,
        "trained on {} rows ({} support vectors, {} iterations); model written to {}",
        summary.train_rows,
        model.support_vectors.len(),
        summary.iterations,
        target.display()
    )?;
    match (summary.holdout_mse, summary.baseline_mse) {
        (Some(mse), Some(base)) => {
            writeln!(out, "holdout: {} rows, MSE {mse:.5} (constant-mean baseline {base:.5})", summary.holdout_rows)?
        }
        _ => writeln!(out, "holdout: too few samples for a 10% split")?,
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let gold = load_samples(&a.gold)?;
    let preds = match (a.baseline, &a.predictions) {
        (Some(b), _) => {
            let kind = match b {
                BaselineArg::MarkAll => Baseline::MarkAll,
                BaselineArg::MarkNone => Baseline::MarkNone,
            };
            gold.iter().map(|s| baseline(kind, s)).collect()
        }
        (None, Some(p)) => read_predictions(p)?,
        (None, None) => bail!("pass --predictions or --baseline"),
    };
    let report = evaluate(&preds, &gold)?;
    out.write_all(report.to_table().as_bytes())?;
    if let Some(p) = &a.tsv {
        fs::write(p, report.to_tsv()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

pub fn cmd_stats(cfg: &PipelineConfig, a: &StatsArgs, out: &mut dyn Write) -> Result<()> {
    let samples = load_samples(&a.dataset)?;
    let path = sidecar_path(cfg, &a.sidecar).ok_or(PipelineError::MissingSidecar)?;
    let sidecar = load_sidecar(&path)?;
    let (pos, lang) = pos_hallucination_stats(&samples, &sidecar);
    out.write_all(render_stats("pos", &pos).as_bytes())?;
    writeln!(out)?;
    out.write_all(render_stats("lang", &lang).as_bytes())?;
    Ok(())
}

/// Directories the cache command may touch: Wikipedia responses and
/// verification results. Recorded LLM transcripts are never cleared.
pub fn managed_dirs(cfg: &PipelineConfig) -> Vec<(&'static str, PathBuf)> {
    let mut dirs = Vec::new();
    if let Some(d) = &cfg.wiki.cache_dir {
        dirs.push(("wiki searches", d.join("searches")));
        dirs.push(("wiki pages", d.join("pages")));
    }
    if let Some(d) = &cfg.paths.rfvm_cache_dir {
        dirs.push(("verification results", d.clone()));
    }
    dirs
}

fn entries(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json" || x == "txt"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn cmd_cache(cfg: &PipelineConfig, action: CacheAction, out: &mut dyn Write) -> Result<()> {
    for (label, dir) in managed_dirs(cfg) {
        let files = entries(&dir)?;
        match action {
            CacheAction::List => {
                if !files.is_empty() {
                    writeln!(out, "{label}: {} entries in {}", files.len(), dir.display())?;
                }
            }
            CacheAction::Clear => {
                for f in &files {
                    fs::remove_file(f).with_context(|| format!("removing {}", f.display()))?;
                }
                writeln!(out, "{label}: removed {} entries", files.len())?;
            }
        }
    }
    Ok(())
}
