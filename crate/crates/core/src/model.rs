//! Two-stage EQM predictor: a base forest on metadata (plus mean QP) and a
//! residual forest on the base output and the full feature set.
//!
//! Model file layout:
//!
//! ```text
//! EQM-MODEL v1
//! sha256 <hex digest of the payload bytes>
//! <payload: one JSON document>
//! ```
//!
//! The payload has the sections `header`, `dictionaries`, `features`,
//! `base`, `residual` and `diagnostics`.

use crate::dataset::LabeledDataset;
use crate::forest::{fit_forest, Forest, ForestError, ForestParams};
use crate::hevc::{Codec, PixelFormat};
use crate::pooling::{eqm_keys, metadata_keys};
use crate::trace::NormConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub const MODEL_VERSION: u32 = 1;
pub const MODEL_MAGIC: &str = "EQM-MODEL";
pub const BASE_OUTPUT_KEY: &str = "base_output";
pub const QP_KEY: &str = "mean_avgQP";
pub const MIN_TRAIN_ROWS: usize = 10;
pub const SCORE_RANGE: (f64, f64) = (0.0, 100.0);

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("missing columns: {}", .0.join(", "))]
    MissingColumns(Vec<String>),
    #[error("need at least {MIN_TRAIN_ROWS} training rows, got {0}")]
    TooFewRows(usize),
    #[error("non-finite value in column {column:?}")]
    NonFiniteInput { column: String },
    #[error("model file version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("forest: {0}")]
    Forest(#[from] ForestError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Metadata,
    Nr,
    Fr,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Metadata, Level::Nr, Level::Fr];

    pub fn name(self) -> &'static str {
        match self {
            Level::Metadata => "metadata",
            Level::Nr => "nr",
            Level::Fr => "fr",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "metadata" | "meta" => Ok(Level::Metadata),
            "nr" => Ok(Level::Nr),
            "fr" => Ok(Level::Fr),
            _ => Err(format!("unknown level {s:?} (expected metadata, nr or fr)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub level: Level,
    /// Include `mean_avgQP` in the base model inputs.
    pub base_qp: bool,
    /// Train one forest on all inputs instead of base + residual.
    pub single_stage: bool,
    /// Pixel-derived columns used at FR level, in order.
    pub external_columns: Vec<String>,
    pub base: ForestParams,
    pub residual: ForestParams,
    pub norm_config: NormConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            level: Level::Nr,
            base_qp: true,
            single_stage: false,
            external_columns: Vec::new(),
            base: ForestParams::default(),
            residual: ForestParams { seed: 1, ..ForestParams::default() },
            norm_config: NormConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub level: Level,
    pub single_stage: bool,
    pub norm_config: NormConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionaries {
    pub codec: Vec<(String, u32)>,
    pub pixel_format: Vec<(String, u32)>,
}

impl Dictionaries {
    pub fn current() -> Self {
        Dictionaries {
            codec: [Codec::H264, Codec::H265].iter().map(|c| (c.name().to_string(), c.code())).collect(),
            pixel_format: PixelFormat::dictionary().into_iter().map(|p| (p.to_string(), p.code())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureKeys {
    pub base: Vec<String>,
    pub residual: Vec<String>,
    pub external: Vec<String>,
}

/// Training-time facts kept with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_train: usize,
    /// Rows no base tree left out; their residual used the full prediction.
    pub oob_fallback_rows: usize,
    /// Mean and population std of the residual training target.
    pub residual_target_mean: f64,
    pub residual_target_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqmModel {
    pub header: Header,
    pub dictionaries: Dictionaries,
    pub features: FeatureKeys,
    pub base: Option<Forest>,
    pub residual: Forest,
    pub diagnostics: Diagnostics,
}

/// Input keys of each stage as `(base keys, residual keys)`. The base keys
/// are empty for single-stage models.
pub fn stage_keys(opts: &TrainOptions) -> (Vec<String>, Vec<String>) {
    let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let meta = own(metadata_keys());
    let mut full = Vec::new();
    if opts.level != Level::Metadata {
        full.extend(own(eqm_keys()));
    }
    full.extend(meta.iter().cloned());
    if opts.level == Level::Fr {
        full.extend(opts.external_columns.iter().cloned());
    }
    if opts.level == Level::Metadata || opts.single_stage {
        return (Vec::new(), full);
    }
    let mut base = meta;
    if opts.base_qp {
        base.push(QP_KEY.to_string());
    }
    let mut residual = vec![BASE_OUTPUT_KEY.to_string()];
    residual.extend(full);
    (base, residual)
}

fn gather(data: &LabeledDataset, keys: &[String]) -> Result<Vec<Vec<f64>>, ModelError> {
    let idx: Vec<Option<usize>> = keys.iter().map(|k| data.column(k)).collect();
    let missing: Vec<String> = keys.iter().zip(&idx).filter(|(_, i)| i.is_none()).map(|(k, _)| k.clone()).collect();
    if !missing.is_empty() {
        return Err(ModelError::MissingColumns(missing));
    }
    let idx: Vec<usize> = idx.into_iter().flatten().collect();
    let rows: Vec<Vec<f64>> = data.rows.iter().map(|r| idx.iter().map(|&i| r.features[i]).collect()).collect();
    for row in &rows {
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteInput { column: keys[c].clone() });
        }
    }
    Ok(rows)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub fn train_eqm(data: &LabeledDataset, opts: &TrainOptions) -> Result<EqmModel, ModelError> {
    if data.len() < MIN_TRAIN_ROWS {
        return Err(ModelError::TooFewRows(data.len()));
    }
    if opts.level == Level::Fr && opts.external_columns.is_empty() {
        return Err(ModelError::MissingColumns(vec!["<external columns for FR level>".into()]));
    }
    let (base_keys, residual_keys) = stage_keys(opts);
    let y = data.mos();
    if let Some(r) = y.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput { column: format!("mos (row {r})") });
    }
    let header = Header {
        version: MODEL_VERSION,
        level: opts.level,
        single_stage: base_keys.is_empty(),
        norm_config: opts.norm_config,
    };

    if base_keys.is_empty() {
        let x = gather(data, &residual_keys)?;
        let forest = fit_forest(&x, &y, residual_keys.clone(), &opts.residual)?;
        let (m, s) = mean_std(&y);
        return Ok(EqmModel {
            header,
            dictionaries: Dictionaries::current(),
            features: FeatureKeys { base: base_keys, residual: residual_keys, external: external_of(opts) },
            base: None,
            residual: forest,
            diagnostics: Diagnostics {
                n_train: data.len(),
                oob_fallback_rows: 0,
                residual_target_mean: m,
                residual_target_std: s,
            },
        });
    }

    let xb = gather(data, &base_keys)?;
    let rest = gather(data, &residual_keys[1..])?;
    let base = fit_forest(&xb, &y, base_keys.clone(), &opts.base)?;
    let oob = base.oob_predict(&xb)?;
    let mut fallbacks = 0;
    let base_out: Vec<f64> = oob
        .iter()
        .zip(&xb)
        .map(|(o, row)| match o {
            Some(v) => Ok(*v),
            None => {
                fallbacks += 1;
                base.predict(row)
            }
        })
        .collect::<Result<_, _>>()?;
    if fallbacks > 0 {
        log::warn!("{fallbacks} training rows were in every base bootstrap sample; used full base prediction");
    }
    let target: Vec<f64> = y.iter().zip(&base_out).map(|(m, b)| m - b).collect();
    let xr: Vec<Vec<f64>> = base_out
        .iter()
        .zip(rest)
        .map(|(b, r)| std::iter::once(*b).chain(r).collect())
        .collect();
    let residual = fit_forest(&xr, &target, residual_keys.clone(), &opts.residual)?;
    let (m, s) = mean_std(&target);
    Ok(EqmModel {
        header,
        dictionaries: Dictionaries::current(),
        features: FeatureKeys { base: base_keys, residual: residual_keys, external: external_of(opts) },
        base: Some(base),
        residual,
        diagnostics: Diagnostics {
            n_train: data.len(),
            oob_fallback_rows: fallbacks,
            residual_target_mean: m,
            residual_target_std: s,
        },
    })
}

fn external_of(opts: &TrainOptions) -> Vec<String> {
    if opts.level == Level::Fr {
        opts.external_columns.clone()
    } else {
        Vec::new()
    }
}

impl EqmModel {
    pub fn level(&self) -> Level {
        self.header.level
    }

    /// Every input key the model reads, in first-use order.
    pub fn required_keys(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for k in self.features.base.iter().chain(&self.features.residual) {
            if k != BASE_OUTPUT_KEY && !out.contains(k) {
                out.push(k.clone());
            }
        }
        out
    }

    /// Score from a key lookup, clamped to the 0–100 scale.
    pub fn predict_with(&self, get: &dyn Fn(&str) -> Option<f64>) -> Result<f64, ModelError> {
        let fetch = |keys: &[String]| -> Result<Vec<f64>, ModelError> {
            let mut missing = Vec::new();
            let mut out = Vec::with_capacity(keys.len());
            for k in keys {
                match get(k) {
                    Some(v) if v.is_finite() => out.push(v),
                    Some(_) => return Err(ModelError::NonFiniteInput { column: k.clone() }),
                    None => missing.push(k.clone()),
                }
            }
            if missing.is_empty() {
                Ok(out)
            } else {
                Err(ModelError::MissingColumns(missing))
            }
        };
        let raw = match &self.base {
            None => self.residual.predict(&fetch(&self.features.residual)?)?,
            Some(base) => {
                let xb = fetch(&self.features.base)?;
                let rest = fetch(&self.features.residual[1..])?;
                let b = base.predict(&xb)?;
                let xr: Vec<f64> = std::iter::once(b).chain(rest).collect();
                b + self.residual.predict(&xr)?
            }
        };
        Ok(raw.clamp(SCORE_RANGE.0, SCORE_RANGE.1))
    }

    /// Score for one row of named columns.
    pub fn predict_row(&self, columns: &[String], values: &[f64]) -> Result<f64, ModelError> {
        self.predict_with(&|k| columns.iter().position(|c| c == k).map(|i| values[i]))
    }

    pub fn predict_dataset(&self, data: &LabeledDataset) -> Result<Vec<f64>, ModelError> {
        data.rows.iter().map(|r| self.predict_row(&data.columns, &r.features)).collect()
    }

    fn check(&self) -> Result<(), String> {
        let has_base_key = self.features.residual.first().map(String::as_str) == Some(BASE_OUTPUT_KEY);
        if has_base_key != self.base.is_some() {
            return Err("base_output key present iff base forest present".into());
        }
        if self.features.residual.iter().skip(1).any(|k| k == BASE_OUTPUT_KEY) {
            return Err("base_output must be the first residual key".into());
        }
        if let Some(b) = &self.base {
            if b.feature_names != self.features.base {
                return Err("base key list differs from base forest".into());
            }
        }
        if self.residual.feature_names != self.features.residual {
            return Err("residual key list differs from residual forest".into());
        }
        for f in self.base.iter().chain(std::iter::once(&self.residual)) {
            if f.trees.len() != f.params.n_trees || f.in_bag.len() != f.trees.len() {
                return Err("tree count differs from parameters".into());
            }
            for t in &f.trees {
                for node in &t.nodes {
                    match *node {
                        crate::forest::Node::Leaf(v) if !v.is_finite() => return Err("non-finite leaf".into()),
                        crate::forest::Node::Split(feat, thr, l, r, _)
                            if feat >= f.n_features() || !thr.is_finite() || l >= t.nodes.len() || r >= t.nodes.len() =>
                        {
                            return Err("split node out of range".into());
                        }
                        _ => {}
                    }
                }
            }
        }
        if self.header.version != MODEL_VERSION {
            return Err("header version differs from container version".into());
        }
        if self.dictionaries != Dictionaries::current() {
            return Err("categorical dictionaries differ from this build".into());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = serde_json::to_string(self).expect("model serializes");
        let digest = hex::encode(Sha256::digest(payload.as_bytes()));
        format!("{MODEL_MAGIC} v{MODEL_VERSION}\nsha256 {digest}\n{payload}\n").into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let corrupt = |m: &str| ModelError::CorruptModel(m.to_string());
        let text = std::str::from_utf8(bytes).map_err(|_| corrupt("not UTF-8"))?;
        let (first, rest) = text.split_once('\n').ok_or_else(|| corrupt("missing header line"))?;
        let version = first
            .strip_prefix(MODEL_MAGIC)
            .and_then(|v| v.strip_prefix(" v"))
            .ok_or_else(|| corrupt("bad magic line"))?;
        let found: u32 = version.trim().parse().map_err(|_| corrupt("bad version number"))?;
        if found != MODEL_VERSION {
            return Err(ModelError::VersionMismatch { found, expected: MODEL_VERSION });
        }
        let (sum_line, payload) = rest.split_once('\n').ok_or_else(|| corrupt("missing checksum line"))?;
        let want = sum_line.strip_prefix("sha256 ").ok_or_else(|| corrupt("bad checksum line"))?;
        let payload = payload.strip_suffix('\n').ok_or_else(|| corrupt("payload is not newline-terminated"))?;
        if hex::encode(Sha256::digest(payload.as_bytes())) != want {
            return Err(corrupt("checksum mismatch"));
        }
        let model: EqmModel =
            serde_json::from_str(payload).map_err(|e| ModelError::CorruptModel(format!("payload: {e}")))?;
        model.check().map_err(ModelError::CorruptModel)?;
        Ok(model)
    }
}

pub fn save_model(model: &EqmModel, path: &std::path::Path) -> Result<(), ModelError> {
    std::fs::write(path, model.to_bytes())?;
    Ok(())
}

pub fn load_model(path: &std::path::Path) -> Result<EqmModel, ModelError> {
    EqmModel::from_bytes(&std::fs::read(path)?)
}
