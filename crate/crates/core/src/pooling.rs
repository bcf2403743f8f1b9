//! Frame → segment pooling and segment → video averaging.

use crate::features::FrameFeatures;
use crate::hevc::MetadataFeatures;
use crate::trace::FrameType;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoolError {
    #[error("cannot pool an empty sequence")]
    EmptyInput,
    #[error("segments disagree on metadata: {0}")]
    SchemaMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stat {
    Mean,
    Std,
    Kurtosis,
    Min,
    Max,
    Median,
    Iqr,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn central_moment(v: &[f64], m: f64, p: i32) -> f64 {
    v.iter().map(|x| (x - m).powi(p)).sum::<f64>() / v.len() as f64
}

/// Linear-interpolation quantile at rank `(n-1)·p` of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let rank = (sorted.len() - 1) as f64 * p;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Population statistics. Kurtosis is excess kurtosis `m4/m2² − 3`, and 0
/// for (numerically) constant input.
pub fn pool_statistic(values: &[f64], kind: Stat) -> Result<f64, PoolError> {
    if values.is_empty() {
        return Err(PoolError::EmptyInput);
    }
    Ok(match kind {
        Stat::Mean => mean(values),
        Stat::Std => central_moment(values, mean(values), 2).sqrt(),
        Stat::Kurtosis => {
            let m = mean(values);
            let m2 = central_moment(values, m, 2);
            let scale = values.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if m2 <= (1e-12 * scale).powi(2) {
                0.0
            } else {
                central_moment(values, m, 4) / (m2 * m2) - 3.0
            }
        }
        Stat::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
        Stat::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Stat::Median => {
            let s = sorted(values);
            let n = s.len();
            if n % 2 == 1 {
                s[n / 2]
            } else {
                (s[n / 2 - 1] + s[n / 2]) / 2.0
            }
        }
        Stat::Iqr => {
            let s = sorted(values);
            quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25)
        }
    })
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Frame-level quantities that get pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameQuantity {
    FrameSize,
    MinQp,
    MaxQp,
    AvgQp,
    AvgBlockDepth,
    SkipBlksRatio,
    StdDevMotion,
    AvgMotion,
    AvgQpLm,
    AvgQpLocalMvDir,
}

impl FrameQuantity {
    pub fn name(self) -> &'static str {
        match self {
            FrameQuantity::FrameSize => "framesize",
            FrameQuantity::MinQp => "minQP",
            FrameQuantity::MaxQp => "maxQP",
            FrameQuantity::AvgQp => "avgQP",
            FrameQuantity::AvgBlockDepth => "avgBlockDepth",
            FrameQuantity::SkipBlksRatio => "skipBlksRatio",
            FrameQuantity::StdDevMotion => "stdDevMotion",
            FrameQuantity::AvgMotion => "avgMotion",
            FrameQuantity::AvgQpLm => "avgQpLm",
            FrameQuantity::AvgQpLocalMvDir => "avgQpLocalMvDir",
        }
    }

    /// Value for one frame, `None` where the frame does not define it.
    pub fn of(self, f: &FrameFeatures) -> Option<f64> {
        let inter = f.frame_type != FrameType::I;
        match self {
            FrameQuantity::FrameSize => Some(f.frame_size as f64),
            FrameQuantity::MinQp => Some(f.min_qp),
            FrameQuantity::MaxQp => Some(f.max_qp),
            FrameQuantity::AvgQp => Some(f.avg_qp),
            FrameQuantity::AvgBlockDepth => Some(f.avg_block_depth),
            FrameQuantity::SkipBlksRatio => f.skip_ratio.filter(|_| inter),
            FrameQuantity::StdDevMotion => f.stddev_motion.filter(|_| inter),
            FrameQuantity::AvgMotion => f.avg_motion.filter(|_| inter),
            FrameQuantity::AvgQpLm => f.avg_qp_lm.filter(|_| inter),
            FrameQuantity::AvgQpLocalMvDir => f.avg_qp_local_mv_dir.filter(|_| inter),
        }
    }
}

use FrameQuantity as Q;

/// Pooling assignments, in the frozen column order of feature files.
pub const POOLING: [(Stat, FrameQuantity); 22] = [
    (Stat::Mean, Q::FrameSize),
    (Stat::Std, Q::FrameSize),
    (Stat::Kurtosis, Q::FrameSize),
    (Stat::Min, Q::FrameSize),
    (Stat::Max, Q::FrameSize),
    (Stat::Iqr, Q::MinQp),
    (Stat::Std, Q::MaxQp),
    (Stat::Mean, Q::AvgQp),
    (Stat::Std, Q::AvgQp),
    (Stat::Kurtosis, Q::AvgQp),
    (Stat::Min, Q::AvgQp),
    (Stat::Max, Q::AvgQp),
    (Stat::Median, Q::AvgBlockDepth),
    (Stat::Kurtosis, Q::AvgBlockDepth),
    (Stat::Median, Q::SkipBlksRatio),
    (Stat::Kurtosis, Q::SkipBlksRatio),
    (Stat::Mean, Q::StdDevMotion),
    (Stat::Mean, Q::AvgMotion),
    (Stat::Kurtosis, Q::AvgMotion),
    (Stat::Std, Q::AvgQpLm),
    (Stat::Mean, Q::AvgQpLocalMvDir),
    (Stat::Max, Q::AvgQpLocalMvDir),
];

pub const N_EQM_KEYS: usize = POOLING.len();
pub const N_SEGMENT_KEYS: usize = N_EQM_KEYS + MetadataFeatures::KEYS.len();

/// Pooled EQM keys (`<stat>_<feature>`) followed by the metadata keys.
pub const SEGMENT_KEYS: [&str; N_SEGMENT_KEYS] = [
    "mean_framesize",
    "std_framesize",
    "kurtosis_framesize",
    "min_framesize",
    "max_framesize",
    "iqr_minQP",
    "std_maxQP",
    "mean_avgQP",
    "std_avgQP",
    "kurtosis_avgQP",
    "min_avgQP",
    "max_avgQP",
    "median_avgBlockDepth",
    "kurtosis_avgBlockDepth",
    "median_skipBlksRatio",
    "kurtosis_skipBlksRatio",
    "mean_stdDevMotion",
    "mean_avgMotion",
    "kurtosis_avgMotion",
    "std_avgQpLm",
    "mean_avgQpLocalMvDir",
    "max_avgQpLocalMvDir",
    "Resolution",
    "FrameRate",
    "Codec",
    "PixelFormat",
    "Bitrate",
];

pub fn eqm_keys() -> &'static [&'static str] {
    &SEGMENT_KEYS[..N_EQM_KEYS]
}

pub fn metadata_keys() -> &'static [&'static str] {
    &SEGMENT_KEYS[N_EQM_KEYS..]
}

pub fn stat_name(s: Stat) -> &'static str {
    match s {
        Stat::Mean => "mean",
        Stat::Std => "std",
        Stat::Kurtosis => "kurtosis",
        Stat::Min => "min",
        Stat::Max => "max",
        Stat::Median => "median",
        Stat::Iqr => "iqr",
    }
}

/// Segment-level feature vector in [`SEGMENT_KEYS`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFeatures {
    pub values: Vec<f64>,
    pub frame_count: usize,
    /// Keys whose quantity was absent on every frame and fell back to 0.
    #[serde(default)]
    pub fallbacks: Vec<String>,
}

impl SegmentFeatures {
    pub fn get(&self, key: &str) -> Option<f64> {
        SEGMENT_KEYS.iter().position(|k| *k == key).map(|i| self.values[i])
    }

    pub fn metadata(&self) -> &[f64] {
        &self.values[N_EQM_KEYS..]
    }
}

/// Pools frame features with the statistic assigned to each key; metadata is
/// copied through.
pub fn pool_segment(frames: &[FrameFeatures], meta: &MetadataFeatures) -> Result<SegmentFeatures, PoolError> {
    if frames.is_empty() {
        return Err(PoolError::EmptyInput);
    }
    let mut values = Vec::with_capacity(N_SEGMENT_KEYS);
    let mut fallbacks = Vec::new();
    for (i, (stat, q)) in POOLING.iter().enumerate() {
        let series: Vec<f64> = frames.iter().filter_map(|f| q.of(f)).collect();
        if series.is_empty() {
            log::debug!("{} absent on every frame; using 0", SEGMENT_KEYS[i]);
            fallbacks.push(SEGMENT_KEYS[i].to_string());
            values.push(0.0);
        } else {
            values.push(pool_statistic(&series, *stat)?);
        }
    }
    values.extend_from_slice(&meta.values());
    Ok(SegmentFeatures { values, frame_count: frames.len(), fallbacks })
}

/// Per-key arithmetic mean of segments sharing the same metadata.
pub fn average_segments(segments: &[SegmentFeatures]) -> Result<SegmentFeatures, PoolError> {
    let first = segments.first().ok_or(PoolError::EmptyInput)?;
    for (i, s) in segments.iter().enumerate() {
        if s.values.len() != first.values.len() {
            return Err(PoolError::SchemaMismatch(format!(
                "segment {i} has {} values, expected {}",
                s.values.len(),
                first.values.len()
            )));
        }
        if s.metadata() != first.metadata() {
            return Err(PoolError::SchemaMismatch(format!("segment {i} metadata differs from segment 0")));
        }
    }
    let n = segments.len() as f64;
    let mut values: Vec<f64> = (0..first.values.len())
        .map(|k| segments.iter().map(|s| s.values[k]).sum::<f64>() / n)
        .collect();
    values[N_EQM_KEYS..].copy_from_slice(first.metadata());
    let mut fallbacks: Vec<String> = segments.iter().flat_map(|s| s.fallbacks.iter().cloned()).collect();
    fallbacks.sort();
    fallbacks.dedup();
    Ok(SegmentFeatures { values, frame_count: segments.iter().map(|s| s.frame_count).sum(), fallbacks })
}
