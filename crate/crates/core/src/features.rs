//! Frame-level features: QP and block statistics, normalized motion length,
//! and motion-direction features built on a 360-bin angle histogram.
//!
//! Every block contributes with its area in 4×4 units, `w·h/16`, which is
//! what iterating over the 4×4 sub-blocks of each prediction unit gives.

use crate::trace::{BlockRecord, FrameRecord, FrameType, MotionVector, NormConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("poc {poc}: motion vector references its own picture")]
    ZeroRefDistance { poc: i32 },
    #[error("poc {poc}: frame width is zero")]
    ZeroWidth { poc: i32 },
    #[error("global direction set is empty")]
    EmptyGlobalSet,
    #[error("frame has no blocks")]
    EmptyFrame,
}

/// Per-frame feature tuple before temporal pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    pub poc: i32,
    pub frame_type: FrameType,
    pub frame_size: u64,
    pub min_qp: f64,
    pub max_qp: f64,
    pub avg_qp: f64,
    pub avg_block_depth: f64,
    pub skip_ratio: Option<f64>,
    pub avg_motion: Option<f64>,
    pub stddev_motion: Option<f64>,
    pub avg_qp_lm: Option<f64>,
    pub avg_qp_local_mv_dir: Option<f64>,
    /// Diagnostic only; not pooled.
    pub mv_global_angle: Option<f64>,
}

/// `F_fr · F_res · |MV| / |POC_c − POC_ref|`
pub fn normalized_mv_length(
    mv: &MotionVector,
    frame: &FrameRecord,
    cfg: &NormConfig,
) -> Result<f64, FeatureError> {
    if frame.width == 0 {
        return Err(FeatureError::ZeroWidth { poc: frame.poc });
    }
    let gap = (frame.poc as i64 - mv.ref_poc as i64).unsigned_abs();
    if gap == 0 {
        return Err(FeatureError::ZeroRefDistance { poc: frame.poc });
    }
    let f_res = cfg.max_frame_width / frame.width as f64;
    let f_fr = frame.frame_rate / cfg.max_frame_rate;
    Ok(f_fr * f_res * (mv.length() / gap as f64))
}

/// Normalized length of a block: the mean over its motion vectors.
fn block_motion(b: &BlockRecord, frame: &FrameRecord, cfg: &NormConfig) -> Result<Option<f64>, FeatureError> {
    if b.mvs.is_empty() {
        return Ok(None);
    }
    let mut sum = 0.0;
    for mv in &b.mvs {
        sum += normalized_mv_length(mv, frame, cfg)?;
    }
    Ok(Some(sum / b.mvs.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionStats {
    pub avg: f64,
    pub stddev: f64,
}

/// Area-weighted mean and population standard deviation of normalized
/// motion over MV-bearing blocks; `None` when no block carries a vector.
pub fn frame_motion_stats(frame: &FrameRecord, cfg: &NormConfig) -> Result<Option<MotionStats>, FeatureError> {
    let mut samples = Vec::with_capacity(frame.blocks.len());
    for b in &frame.blocks {
        if let Some(m) = block_motion(b, frame, cfg)? {
            samples.push((b.unit_weight(), m));
        }
    }
    let Some(avg) = weighted_mean(samples.iter().copied()) else {
        return Ok(None);
    };
    let total: f64 = samples.iter().map(|(w, _)| w).sum();
    let var = samples.iter().map(|(w, m)| w * (m - avg) * (m - avg)).sum::<f64>() / total;
    Ok(Some(MotionStats { avg, stddev: var.sqrt() }))
}

fn weighted_mean(samples: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    let (mut wsum, mut sum) = (0.0, 0.0);
    for (w, v) in samples {
        wsum += w;
        sum += w * v;
    }
    (wsum > 0.0).then(|| sum / wsum)
}

pub const ANGLE_BINS: usize = 360;

/// Degree bin of a vector with y pointing up (trace vectors are y-down);
/// `None` for the zero vector.
pub fn angle_bin(mv: &MotionVector) -> Option<usize> {
    if mv.is_zero() {
        return None;
    }
    let mut deg = (-(mv.mv_y as f64)).atan2(mv.mv_x as f64).to_degrees();
    if deg < 0.0 {
        deg += 360.0;
    }
    Some((deg.floor() as usize).min(ANGLE_BINS - 1))
}

/// Area-weighted counts of motion directions, one bin per degree.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleHistogram {
    pub bins: Vec<f64>,
    pub total: f64,
}

impl Default for AngleHistogram {
    fn default() -> Self {
        AngleHistogram { bins: vec![0.0; ANGLE_BINS], total: 0.0 }
    }
}

impl AngleHistogram {
    pub fn from_bins(bins: Vec<f64>) -> Self {
        assert_eq!(bins.len(), ANGLE_BINS);
        let total = bins.iter().sum();
        AngleHistogram { bins, total }
    }

    pub fn add(&mut self, bin: usize, count: f64) {
        self.bins[bin] += count;
        self.total += count;
    }
}

/// Each vector of a block adds `unit_weight / n_mvs`; zero vectors add nothing.
pub fn mv_angle_histogram(frame: &FrameRecord) -> AngleHistogram {
    let mut h = AngleHistogram::default();
    for b in frame.blocks.iter().filter(|b| !b.mvs.is_empty()) {
        let share = b.unit_weight() / b.mvs.len() as f64;
        for bin in b.mvs.iter().filter_map(angle_bin) {
            h.add(bin, share);
        }
    }
    h
}

/// Dominant ("global") directions and the remaining ("local") ones.
///
/// `global` is in selection order: count descending, lower bin first on ties.
/// `local` is ascending and only holds non-empty bins.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnglePartition {
    pub global: Vec<usize>,
    pub local: Vec<usize>,
}

impl AnglePartition {
    pub fn local_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; ANGLE_BINS];
        for &b in &self.local {
            mask[b] = true;
        }
        mask
    }
}

/// Smallest prefix of bins (by count) whose cumulative count reaches
/// `threshold × total`.
pub fn partition_global_local(h: &AngleHistogram, threshold: f64) -> AnglePartition {
    let mut order: Vec<usize> = (0..ANGLE_BINS).filter(|&b| h.bins[b] > 0.0).collect();
    if order.is_empty() {
        return AnglePartition::default();
    }
    order.sort_by(|&a, &b| h.bins[b].total_cmp(&h.bins[a]).then(a.cmp(&b)));
    let target = threshold * h.total;
    let mut cum = 0.0;
    let mut split = order.len();
    for (i, &b) in order.iter().enumerate() {
        cum += h.bins[b];
        if cum >= target {
            split = i + 1;
            break;
        }
    }
    let mut local = order.split_off(split);
    local.sort_unstable();
    AnglePartition { global: order, local }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalAngle {
    pub degrees: f64,
    /// Set when the count-weighted unit vectors cancel out.
    pub degenerate: bool,
}

/// Direction of the count-weighted vector sum over the global bins, using
/// bin centres `d + 0.5`.
pub fn global_angle(h: &AngleHistogram, global: &[usize]) -> Result<GlobalAngle, FeatureError> {
    let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0.0f64);
    for &d in global {
        let c = h.bins[d];
        let rad = (d as f64 + 0.5).to_radians();
        sx += c * rad.cos();
        sy += c * rad.sin();
        n += c;
    }
    if n <= 0.0 {
        return Err(FeatureError::EmptyGlobalSet);
    }
    if sx.hypot(sy) <= 1e-9 * n {
        return Ok(GlobalAngle { degrees: 0.0, degenerate: true });
    }
    let mut deg = sy.atan2(sx).to_degrees();
    if deg < 0.0 {
        deg += 360.0;
    }
    if deg >= 360.0 {
        deg -= 360.0;
    }
    Ok(GlobalAngle { degrees: deg, degenerate: false })
}

/// Area-weighted mean QP of blocks with at least one vector in a local bin.
pub fn avg_qp_local_mv_dir(frame: &FrameRecord, partition: &AnglePartition) -> Option<f64> {
    if partition.local.is_empty() {
        return None;
    }
    let mask = partition.local_mask();
    weighted_mean(
        frame
            .blocks
            .iter()
            .filter(|b| b.mvs.iter().filter_map(angle_bin).any(|bin| mask[bin]))
            .map(|b| (b.unit_weight(), b.qp as f64)),
    )
}

/// Area-weighted mean QP of low-motion blocks: vectors whose normalized
/// length is below `cfg.low_motion_tau`, or skip blocks without vectors.
pub fn avg_qp_low_motion(frame: &FrameRecord, cfg: &NormConfig) -> Result<Option<f64>, FeatureError> {
    let mut samples = Vec::new();
    for b in &frame.blocks {
        let low = match block_motion(b, frame, cfg)? {
            Some(m) => m < cfg.low_motion_tau,
            None => b.skip,
        };
        if low {
            samples.push((b.unit_weight(), b.qp as f64));
        }
    }
    Ok(weighted_mean(samples.into_iter()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarStats {
    pub min_qp: f64,
    pub max_qp: f64,
    pub avg_qp: f64,
    pub avg_block_depth: f64,
    pub skip_ratio: Option<f64>,
}

/// QP range, area-weighted mean QP and `log2(cu)`, and skip area fraction
/// (P/B frames only).
pub fn frame_scalar_stats(frame: &FrameRecord) -> Result<ScalarStats, FeatureError> {
    if frame.blocks.is_empty() {
        return Err(FeatureError::EmptyFrame);
    }
    let min_qp = frame.blocks.iter().map(|b| b.qp).min().unwrap() as f64;
    let max_qp = frame.blocks.iter().map(|b| b.qp).max().unwrap() as f64;
    let avg_qp = weighted_mean(frame.blocks.iter().map(|b| (b.unit_weight(), b.qp as f64))).unwrap();
    let avg_block_depth =
        weighted_mean(frame.blocks.iter().map(|b| (b.unit_weight(), (b.cu_size as f64).log2()))).unwrap();
    let skip_ratio = frame.frame_type.is_inter().then(|| {
        let total: u64 = frame.blocks.iter().map(|b| b.area()).sum();
        let skipped: u64 = frame.blocks.iter().filter(|b| b.skip).map(|b| b.area()).sum();
        skipped as f64 / total as f64
    });
    Ok(ScalarStats { min_qp, max_qp, avg_qp, avg_block_depth, skip_ratio })
}

pub fn extract_frame_features(frame: &FrameRecord, cfg: &NormConfig) -> Result<FrameFeatures, FeatureError> {
    let s = frame_scalar_stats(frame)?;
    let mut out = FrameFeatures {
        poc: frame.poc,
        frame_type: frame.frame_type,
        frame_size: frame.frame_size,
        min_qp: s.min_qp,
        max_qp: s.max_qp,
        avg_qp: s.avg_qp,
        avg_block_depth: s.avg_block_depth,
        skip_ratio: s.skip_ratio,
        avg_motion: None,
        stddev_motion: None,
        avg_qp_lm: None,
        avg_qp_local_mv_dir: None,
        mv_global_angle: None,
    };
    if frame.frame_type == FrameType::I {
        return Ok(out);
    }
    if let Some(m) = frame_motion_stats(frame, cfg)? {
        out.avg_motion = Some(m.avg);
        out.stddev_motion = Some(m.stddev);
    }
    out.avg_qp_lm = avg_qp_low_motion(frame, cfg)?;
    let hist = mv_angle_histogram(frame);
    let partition = partition_global_local(&hist, cfg.global_threshold);
    out.avg_qp_local_mv_dir = avg_qp_local_mv_dir(frame, &partition);
    if !partition.global.is_empty() {
        out.mv_global_angle = Some(global_angle(&hist, &partition.global)?.degrees);
    }
    Ok(out)
}
