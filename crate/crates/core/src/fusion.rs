//! Mapping subjective studies onto one target scale with a least-squares
//! line fitted on anchor videos rated in both.

use crate::dataset::{DataError, MosTable};
use serde::Serialize;
use std::collections::{HashMap, HashSet};
use std::io::Read;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("need at least 2 anchors, got {0}")]
    TooFewAnchors(usize),
    #[error("all anchor source scores are equal")]
    DegenerateAnchors,
    #[error("non-finite anchor score for {0:?}")]
    NonFinite(String),
    #[error("video {0:?} appears in more than one study and is not a shared anchor")]
    DuplicateVideoId(String),
    #[error("data: {0}")]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub video_id: String,
    pub source_mos: f64,
    pub target_mos: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnchorSet {
    pub anchors: Vec<Anchor>,
}

impl AnchorSet {
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        AnchorSet {
            anchors: pairs
                .iter()
                .enumerate()
                .map(|(i, &(s, t))| Anchor { video_id: format!("anchor{i}"), source_mos: s, target_mos: t })
                .collect(),
        }
    }

    /// Reads `video_id,source_mos,target_mos`.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, FusionError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header: Vec<String> = rdr.headers().map_err(DataError::from)?.iter().map(str::to_string).collect();
        let col = |name: &str| {
            header.iter().position(|h| h == name).ok_or_else(|| DataError::MissingColumn(name.to_string()))
        };
        let (vid, src, tgt) = (col("video_id")?, col("source_mos")?, col("target_mos")?);
        let mut anchors = Vec::new();
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(DataError::from)?;
            let num = |i: usize| {
                rec[i].parse::<f64>().map_err(|e| DataError::BadRow { row: n + 2, message: format!("{}: {e}", header[i]) })
            };
            anchors.push(Anchor { video_id: rec[vid].to_string(), source_mos: num(src)?, target_mos: num(tgt)? });
        }
        Ok(AnchorSet { anchors })
    }

    pub fn ids(&self) -> HashSet<&str> {
        self.anchors.iter().map(|a| a.video_id.as_str()).collect()
    }
}

/// `target ≈ a·source + b`, with OLS standard errors of `a` and `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearMap {
    pub a: f64,
    pub b: f64,
    pub r2: f64,
    pub n_anchors: usize,
    pub se_a: f64,
    pub se_b: f64,
}

impl LinearMap {
    pub fn apply(&self, x: f64) -> f64 {
        self.a * x + self.b
    }

    pub fn inverse(&self, y: f64) -> f64 {
        (y - self.b) / self.a
    }
}

pub fn fit_linear_anchor_map(anchors: &AnchorSet) -> Result<LinearMap, FusionError> {
    let n = anchors.anchors.len();
    if n < 2 {
        return Err(FusionError::TooFewAnchors(n));
    }
    if let Some(a) = anchors.anchors.iter().find(|a| !a.source_mos.is_finite() || !a.target_mos.is_finite()) {
        return Err(FusionError::NonFinite(a.video_id.clone()));
    }
    let nf = n as f64;
    let mx = anchors.anchors.iter().map(|a| a.source_mos).sum::<f64>() / nf;
    let my = anchors.anchors.iter().map(|a| a.target_mos).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for an in &anchors.anchors {
        let dx = an.source_mos - mx;
        let dy = an.target_mos - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(FusionError::DegenerateAnchors);
    }
    let a = sxy / sxx;
    let b = my - a * mx;
    let ssr: f64 = anchors
        .anchors
        .iter()
        .map(|an| {
            let e = an.target_mos - (a * an.source_mos + b);
            e * e
        })
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ssr / syy } else if ssr == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    let s2 = if n > 2 { ssr / (nf - 2.0) } else { 0.0 };
    let se_a = (s2 / sxx).sqrt();
    let se_b = (s2 * (1.0 / nf + mx * mx / sxx)).sqrt();
    if r2 < 0.5 {
        log::warn!("anchor map fits poorly: r2 = {r2}");
    }
    if a <= 0.0 {
        log::warn!("anchor map has non-positive gain {a}; source rank order is not preserved");
    }
    Ok(LinearMap { a, b, r2, n_anchors: n, se_a, se_b })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub fused: MosTable,
    pub maps: Vec<LinearMap>,
}

/// Maps each source onto the target scale and concatenates. Anchor videos
/// that the target already holds keep the target row.
pub fn fuse_datasets(target: &MosTable, sources: &[(MosTable, AnchorSet)]) -> Result<FusionResult, FusionError> {
    let mut fused = target.clone();
    let mut present: HashMap<String, usize> =
        target.rows.iter().enumerate().map(|(i, (id, _))| (id.clone(), i)).collect();
    let mut maps = Vec::with_capacity(sources.len());
    for (source, anchors) in sources {
        let map = fit_linear_anchor_map(anchors)?;
        let anchor_ids = anchors.ids();
        for (id, mos) in &source.rows {
            if present.contains_key(id) {
                if anchor_ids.contains(id.as_str()) {
                    continue;
                }
                return Err(FusionError::DuplicateVideoId(id.clone()));
            }
            let v = map.apply(*mos);
            if !(0.0..=100.0).contains(&v) {
                log::warn!("fused score {v} for {id:?} lies outside 0..100");
            }
            present.insert(id.clone(), fused.rows.len());
            fused.rows.push((id.clone(), v));
        }
        maps.push(map);
    }
    Ok(FusionResult { fused, maps })
}
