//! Correntropy-variation anomaly scoring.
//!
//! Each record is min-max scaled with parameters learned from normal training
//! traffic, then compared to the mean scaled normal vector (the reference)
//! with the sample correntropy
//!
//! ```text
//! V(a, b) = (1/M) Σ K_σ(a_i − b_i),   K_σ(x) = exp(−x² / 2σ²) / (√(2π)·σ)
//! ```
//!
//! The baseline stores the mean μ and sample standard deviation s of the
//! training records' correntropy values. A test record whose deviation
//! `μ − V` reaches `2·s` is an attack. The risk level maps the deviation
//! linearly so that `2·s` lands on 0.5, clamped to [0, 1]. The test is
//! one-sided: unusually high correntropy is never flagged.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Dataset, FeatureSchema, FlowKey, FlowRecord, Label};

pub const DEFAULT_MULTIPLIER: f64 = 2.0;
pub const MIN_BANDWIDTH: f64 = 1e-6;
const SILVERMAN_FACTOR: f64 = 1.06;

/// Gaussian kernel width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    sigma: f64,
}

impl KernelParams {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::param(format!(
                "kernel bandwidth must be positive and finite, got {sigma}"
            )));
        }
        Ok(KernelParams { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let s = self.sigma;
        (-(x * x) / (2.0 * s * s)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * s)
    }

    pub fn peak(&self) -> f64 {
        self.eval(0.0)
    }
}

pub fn gaussian_kernel(x: f64, sigma: f64) -> Result<f64> {
    Ok(KernelParams::new(sigma)?.eval(x))
}

/// Sample correntropy of two equal-length vectors.
pub fn correntropy(a: &[f64], b: &[f64], kernel: &KernelParams) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Empty("correntropy vectors"));
    }
    Ok(correntropy_unchecked(a, b, kernel))
}

fn correntropy_unchecked(a: &[f64], b: &[f64], kernel: &KernelParams) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(x, y)| kernel.eval(x - y)).sum();
    (sum / a.len() as f64).min(kernel.peak())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthPolicy {
    Fixed(f64),
    /// Silverman's rule over the pooled scaled deviations from the reference.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParam {
    pub min: f64,
    pub max: f64,
}

impl ScaleParam {
    /// Maps into [0, 1]; constant features map to 0.
    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        let range = self.max - self.min;
        if range > 0.0 {
            ((v - self.min) / range).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn is_constant(&self) -> bool {
        self.max <= self.min
    }
}

/// Fitted detector state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalBaseline {
    pub feature_names: Vec<String>,
    pub scale: Vec<ScaleParam>,
    pub reference: Vec<f64>,
    pub kernel: KernelParams,
    pub mu_corpy: f64,
    pub sd_corpy: f64,
    pub n_train: usize,
    /// SHA-256 over the training record indices, when the caller provides them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_fingerprint: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Normal,
    Attack,
}

impl Decision {
    pub fn is_attack(self) -> bool {
        self == Decision::Attack
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskScore {
    pub corpy: f64,
    pub deviation: f64,
    pub risk_level: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredFlow {
    pub key: FlowKey,
    pub label: Option<Label>,
    pub class: Option<String>,
    pub score: RiskScore,
}

/// Attack rule: `deviation ≥ multiplier·sd`. With a zero spread any positive
/// deviation is an attack.
#[inline]
pub fn is_attack(deviation: f64, sd: f64, multiplier: f64) -> bool {
    if sd > 0.0 {
        deviation >= multiplier * sd
    } else {
        deviation > 0.0
    }
}

/// Deviation mapped so that `2·sd` is 0.5, clamped to [0, 1].
#[inline]
pub fn risk_level(deviation: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        (deviation / (4.0 * sd)).clamp(0.0, 1.0)
    } else if deviation > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Fits the normal profile on `normal` (which must contain no attack-labeled
/// records) using the named numeric features.
pub fn fit_baseline(
    normal: &Dataset,
    feature_names: &[&str],
    bandwidth: BandwidthPolicy,
) -> Result<NormalBaseline> {
    if feature_names.is_empty() {
        return Err(Error::Empty("baseline feature list"));
    }
    if normal.len() < 2 {
        return Err(Error::param(format!(
            "baseline needs at least 2 normal records, got {}",
            normal.len()
        )));
    }
    if normal.records.iter().any(|r| r.label == Some(Label::Attack)) {
        return Err(Error::Baseline(
            "training data contains attack-labeled records".into(),
        ));
    }
    let columns = resolve_features(&normal.schema, feature_names)?;
    let rows = normal
        .records
        .iter()
        .map(|r| gather(r, &columns, feature_names))
        .collect::<Result<Vec<_>>>()?;

    let dim = columns.len();
    let scale: Vec<ScaleParam> = (0..dim)
        .map(|j| {
            let (min, max) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r[j]), hi.max(r[j]))
            });
            ScaleParam { min, max }
        })
        .collect();
    for (name, s) in feature_names.iter().zip(&scale) {
        if s.is_constant() {
            tracing::warn!(feature = %name, value = s.min, "constant feature in normal training data; scaled to 0");
        }
    }

    let scaled: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&scale).map(|(v, s)| s.apply(*v)).collect())
        .collect();
    let n = scaled.len() as f64;
    let reference: Vec<f64> = (0..dim)
        .map(|j| scaled.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();

    let kernel = match bandwidth {
        BandwidthPolicy::Fixed(s) => KernelParams::new(s)?,
        BandwidthPolicy::Auto => KernelParams::new(silverman_bandwidth(&scaled, &reference))?,
    };

    let corpy: Vec<f64> = scaled
        .iter()
        .map(|r| correntropy_unchecked(r, &reference, &kernel))
        .collect();
    let (mu_corpy, sd_corpy) = mean_and_sample_sd(&corpy);

    Ok(NormalBaseline {
        feature_names: feature_names.iter().map(|s| s.to_string()).collect(),
        scale,
        reference,
        kernel,
        mu_corpy,
        sd_corpy,
        n_train: scaled.len(),
        training_fingerprint: None,
    })
}

/// `1.06 · s · m^(−1/5)` where `s` is the sample standard deviation of the
/// pooled per-element deviations from the reference and `m` is the number of
/// kernel terms in one correntropy estimate (the feature dimension).
/// Floored at [`MIN_BANDWIDTH`].
pub fn silverman_bandwidth(scaled: &[Vec<f64>], reference: &[f64]) -> f64 {
    let pooled: Vec<f64> = scaled
        .iter()
        .flat_map(|r| r.iter().zip(reference).map(|(v, c)| v - c))
        .collect();
    let (_, s) = mean_and_sample_sd(&pooled);
    let m = reference.len() as f64;
    (SILVERMAN_FACTOR * s * m.powf(-0.2)).max(MIN_BANDWIDTH)
}

pub(crate) fn mean_and_sample_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn resolve_features(schema: &FeatureSchema, names: &[&str]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            schema
                .numeric_index(n)
                .ok_or_else(|| Error::MissingFeature((*n).to_string()))
        })
        .collect()
}

fn gather<S: AsRef<str>>(record: &FlowRecord, columns: &[usize], names: &[S]) -> Result<Vec<f64>> {
    columns
        .iter()
        .zip(names)
        .map(|(&i, name)| {
            record
                .features
                .get(i)
                .copied()
                .flatten()
                .ok_or_else(|| Error::MissingFeature(name.as_ref().to_string()))
        })
        .collect()
}

impl NormalBaseline {
    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn constant_features(&self) -> Vec<&str> {
        self.feature_names
            .iter()
            .zip(&self.scale)
            .filter(|(_, s)| s.is_constant())
            .map(|(n, _)| n.as_str())
            .collect()
    }

    fn check(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.scale.len() != d || self.reference.len() != d {
            return Err(Error::Baseline("inconsistent dimensions".into()));
        }
        if self.sd_corpy.is_nan() || self.sd_corpy < 0.0 || !self.mu_corpy.is_finite() || self.n_train < 2 {
            return Err(Error::Baseline("invalid correntropy statistics".into()));
        }
        KernelParams::new(self.kernel.sigma)?;
        Ok(())
    }

    /// Scores raw (unscaled) feature values given in baseline feature order.
    pub fn score_values(&self, raw: &[f64], multiplier: f64) -> Result<RiskScore> {
        if raw.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                left: raw.len(),
                right: self.dim(),
            });
        }
        let scaled: Vec<f64> = raw.iter().zip(&self.scale).map(|(v, s)| s.apply(*v)).collect();
        let corpy = correntropy_unchecked(&scaled, &self.reference, &self.kernel);
        let deviation = self.mu_corpy - corpy;
        let attack = is_attack(deviation, self.sd_corpy, multiplier);
        let mut rl = risk_level(deviation, self.sd_corpy);
        if multiplier == DEFAULT_MULTIPLIER && !attack && rl >= 0.5 {
            rl = 0.5f64.next_down();
        }
        Ok(RiskScore {
            corpy,
            deviation,
            risk_level: rl,
            decision: if attack { Decision::Attack } else { Decision::Normal },
        })
    }

    pub fn to_json(&self) -> String {
        let doc = BaselineDocument {
            format: BASELINE_FORMAT.into(),
            version: BASELINE_VERSION,
            baseline: self.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("baseline serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BaselineDocument =
            serde_json::from_str(text).map_err(|e| Error::Baseline(e.to_string()))?;
        if doc.format != BASELINE_FORMAT {
            return Err(Error::Baseline(format!("unknown format `{}`", doc.format)));
        }
        if doc.version != BASELINE_VERSION {
            return Err(Error::Baseline(format!(
                "unsupported version {} (expected {BASELINE_VERSION})",
                doc.version
            )));
        }
        doc.baseline.check()?;
        Ok(doc.baseline)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::Baseline(format!("baseline not found: {}", path.display()))
            }
            _ => Error::io(path, e),
        })?;
        Self::from_json(&text)
    }
}

const BASELINE_FORMAT: &str = "netforensic-baseline";
const BASELINE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BaselineDocument {
    format: String,
    version: u32,
    #[serde(flatten)]
    baseline: NormalBaseline,
}

/// Scores one record of a dataset with schema `schema`.
pub fn score(record: &FlowRecord, schema: &FeatureSchema, baseline: &NormalBaseline) -> Result<RiskScore> {
    let names: Vec<&str> = baseline.feature_names.iter().map(String::as_str).collect();
    let columns = resolve_features(schema, &names)?;
    baseline.score_values(&gather(record, &columns, &names)?, DEFAULT_MULTIPLIER)
}

/// Scores every record, preserving input order. `multiplier` sets the attack
/// threshold in units of the baseline's correntropy standard deviation.
pub fn score_batch(
    dataset: &Dataset,
    baseline: &NormalBaseline,
    multiplier: f64,
) -> Result<Vec<ScoredFlow>> {
    if multiplier.is_nan() || multiplier < 0.0 {
        return Err(Error::param(format!(
            "threshold multiplier must be non-negative, got {multiplier}"
        )));
    }
    baseline.check()?;
    let names: Vec<&str> = baseline.feature_names.iter().map(String::as_str).collect();
    let columns = resolve_features(&dataset.schema, &names)?;
    dataset
        .records
        .par_iter()
        .map(|r| {
            let raw = gather(r, &columns, &names)?;
            Ok(ScoredFlow {
                key: r.key.clone(),
                label: r.label,
                class: r.class.clone(),
                score: baseline.score_values(&raw, multiplier)?,
            })
        })
        .collect()
}
