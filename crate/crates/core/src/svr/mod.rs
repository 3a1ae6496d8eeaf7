//! Weighted ε-support vector regression over feature rows.

pub mod smo;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use smo::{solve, KernelCache, SmoParams};

pub const MODEL_FORMAT: &str = "mikani-svr.v1";
const KERNEL_CACHE_BYTES: usize = 256 << 20;

#[derive(Debug, thiserror::Error)]
pub enum SvrError {
    #[error("feature dimension {got} does not match {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{rows} rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("need at least 2 training rows, got {0}")]
    TooFewSamples(usize),
    #[error("invalid SVR configuration: {0}")]
    InvalidConfig(String),
    #[error("solver did not converge after {iterations} iterations (KKT gap {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
    Linear,
}

/// RBF width; `Auto` resolves to `1 / (d · var(X))` at training time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    Auto,
    Value(f64),
}

impl Serialize for Gamma {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Gamma::Auto => s.serialize_str("auto"),
            Gamma::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Gamma {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Gamma::Value(v)),
            Raw::Text(s) if s == "auto" => Ok(Gamma::Auto),
            Raw::Text(s) => s.parse().map(Gamma::Value).map_err(serde::de::Error::custom),
        }
    }
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gamma::Auto => f.write_str("auto"),
            Gamma::Value(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrConfig {
    pub c: f64,
    pub epsilon: f64,
    pub kernel: KernelKind,
    pub gamma: Gamma,
    /// Sample weight for rows whose target is exactly 0.
    pub weight_zero: f64,
    /// Sample weight for all other rows.
    pub weight_pos: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        Self {
            c: 10.0,
            epsilon: 0.1,
            kernel: KernelKind::Rbf,
            gamma: Gamma::Auto,
            weight_zero: 0.01,
            weight_pos: 100.0,
            tolerance: 1e-3,
            max_iter: 10_000_000,
        }
    }
}

impl SvrConfig {
    pub fn validate(&self) -> Result<(), SvrError> {
        let bad = |m: &str| Err(SvrError::InvalidConfig(m.to_string()));
        if !(self.c > 0.0) {
            return bad("C must be positive");
        }
        if !(self.epsilon >= 0.0) {
            return bad("epsilon must be non-negative");
        }
        if !(self.weight_zero > 0.0 && self.weight_pos > 0.0) {
            return bad("sample weights must be positive");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        if let Gamma::Value(g) = self.gamma {
            if !(g > 0.0) {
                return bad("gamma must be positive");
            }
        }
        Ok(())
    }

    pub fn sample_weight(&self, target: f64) -> f64 {
        if target == 0.0 {
            self.weight_zero
        } else {
            self.weight_pos
        }
    }
}

/// `1 / (d · var(X))` over all entries; 1 when the data are constant.
pub fn auto_gamma(rows: &[Vec<f64>]) -> f64 {
    let d = rows.first().map_or(0, Vec::len);
    let count = (rows.len() * d) as f64;
    if count == 0.0 {
        return 1.0;
    }
    let mean = rows.iter().flatten().sum::<f64>() / count;
    let var = rows.iter().flatten().map(|x| (x - mean).powi(2)).sum::<f64>() / count;
    if var > 0.0 {
        1.0 / (d as f64 * var)
    } else {
        1.0
    }
}

pub fn kernel_value(kind: KernelKind, gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    match kind {
        KernelKind::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        KernelKind::Rbf => {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
            (-gamma * d2).exp()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub format: String,
    pub config: SvrConfig,
    pub feature_dim: usize,
    /// Resolved RBF width (unused by the linear kernel).
    pub gamma: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i - α*_i` for each support vector.
    pub dual_coefs: Vec<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub iterations: usize,
    pub kkt_gap: f64,
    /// Dual objective `½ βᵀQβ + pᵀβ` at the solution.
    pub objective: f64,
    /// Full `(α, α*)` vector, length `2n`.
    pub beta: Vec<f64>,
    /// Upper bound `C·w_i` per training row.
    pub bounds: Vec<f64>,
}

fn check_dims(rows: &[Vec<f64>], expected: usize) -> Result<(), SvrError> {
    match rows.iter().find(|r| r.len() != expected) {
        Some(r) => Err(SvrError::DimensionMismatch { expected, got: r.len() }),
        None => Ok(()),
    }
}

pub fn svr_train(rows: &[Vec<f64>], targets: &[f64], config: &SvrConfig) -> Result<SvrModel, SvrError> {
    train_with_report(rows, targets, config).map(|(m, _)| m)
}

pub fn train_with_report(
    rows: &[Vec<f64>],
    targets: &[f64],
    config: &SvrConfig,
) -> Result<(SvrModel, TrainReport), SvrError> {
    config.validate()?;
    if rows.len() != targets.len() {
        return Err(SvrError::LengthMismatch { rows: rows.len(), targets: targets.len() });
    }
    if rows.len() < 2 {
        return Err(SvrError::TooFewSamples(rows.len()));
    }
    let dim = rows[0].len();
    check_dims(rows, dim)?;
    let gamma = match config.gamma {
        Gamma::Auto => auto_gamma(rows),
        Gamma::Value(g) => g,
    };
    let kernel = |s: usize, t: usize| kernel_value(config.kernel, gamma, &rows[s], &rows[t]);
    let mut cache = KernelCache::new(rows.len(), &kernel, KERNEL_CACHE_BYTES);
    let bounds: Vec<f64> = targets.iter().map(|&z| config.c * config.sample_weight(z)).collect();
    let params = SmoParams { epsilon: config.epsilon, tolerance: config.tolerance, max_iter: config.max_iter };
    let out = solve(&mut cache, targets, &bounds, params);
    if !out.converged {
        return Err(SvrError::NotConverged { iterations: out.iterations, residual: out.gap });
    }
    let n = rows.len();
    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    for i in 0..n {
        let coef = out.beta[i] - out.beta[i + n];
        if coef != 0.0 {
            support_vectors.push(rows[i].clone());
            dual_coefs.push(coef);
        }
    }
    let objective = smo::dual_objective(&kernel, targets, config.epsilon, &out.beta);
    let model = SvrModel {
        format: MODEL_FORMAT.to_string(),
        config: *config,
        feature_dim: dim,
        gamma,
        support_vectors,
        dual_coefs,
        rho: out.rho,
    };
    let report = TrainReport { iterations: out.iterations, kkt_gap: out.gap, objective, beta: out.beta, bounds };
    Ok((model, report))
}

impl SvrModel {
    /// Kernel expansion before clamping.
    pub fn decision(&self, row: &[f64]) -> Result<f64, SvrError> {
        if row.len() != self.feature_dim {
            return Err(SvrError::DimensionMismatch { expected: self.feature_dim, got: row.len() });
        }
        let sum: f64 = self
            .support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, c)| c * kernel_value(self.config.kernel, self.gamma, sv, row))
            .sum();
        Ok(sum - self.rho)
    }

    pub fn save(&self, path: &Path) -> Result<(), SvrError> {
        let body = serde_json::to_string_pretty(self).expect("model serializes");
        crate::llm::write_atomic(path, body.as_bytes())
            .map_err(|e| SvrError::Io { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, SvrError> {
        let io = |message: String| SvrError::Io { path: path.to_path_buf(), message };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        let model: SvrModel = serde_json::from_str(&text).map_err(|e| io(e.to_string()))?;
        if model.format != MODEL_FORMAT {
            return Err(io(format!("unsupported model format `{}`", model.format)));
        }
        if model.support_vectors.len() != model.dual_coefs.len() {
            return Err(io("support vector and coefficient counts differ".into()));
        }
        check_dims(&model.support_vectors, model.feature_dim)?;
        Ok(model)
    }
}

/// Clamped predictions in `[0, 1]`.
pub fn svr_predict(model: &SvrModel, rows: &[Vec<f64>]) -> Result<Vec<f64>, SvrError> {
    rows.iter().map(|r| model.decision(r).map(|v| v.clamp(0.0, 1.0))).collect()
}
