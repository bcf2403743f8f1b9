//! Trace → frame features → segment features.

use crate::features::{extract_frame_features, FeatureError, FrameFeatures};
use crate::hevc::meta::bitrate_kbps;
use crate::hevc::{Codec, MetadataFeatures, PixelFormat};
use crate::pooling::{average_segments, pool_segment, PoolError, SegmentFeatures};
use crate::trace::{FrameRecord, NormConfig};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("frame poc {poc}: {source}")]
    Feature { poc: i32, source: FeatureError },
    #[error("pooling: {0}")]
    Pool(#[from] PoolError),
    #[error("trace has no frames")]
    EmptyTrace,
    #[error("segment length must be at least 1")]
    ZeroSegment,
}

/// Metadata derived from the trace itself: first-frame geometry and rate,
/// bitrate from the summed frame sizes over `frames / fps` seconds.
pub fn trace_metadata(frames: &[FrameRecord], codec: Codec, pixel_format: PixelFormat) -> Result<MetadataFeatures, ExtractError> {
    let first = frames.first().ok_or(ExtractError::EmptyTrace)?;
    let bytes: u64 = frames.iter().map(|f| f.frame_size).sum();
    let duration = frames.len() as f64 / first.frame_rate;
    Ok(MetadataFeatures {
        resolution: first.width as u64 * first.height as u64,
        frame_rate: first.frame_rate,
        codec,
        pixel_format,
        bitrate: bitrate_kbps(bytes, duration),
    })
}

/// Per-frame features in input order, computed in parallel.
pub fn frame_features(frames: &[FrameRecord], cfg: &NormConfig) -> Result<Vec<FrameFeatures>, ExtractError> {
    frames
        .par_iter()
        .map(|f| extract_frame_features(f, cfg).map_err(|source| ExtractError::Feature { poc: f.poc, source }))
        .collect()
}

/// Segments of `segment_frames` consecutive frames (the last may be
/// shorter); `None` makes the whole trace one segment.
pub fn extract_segments(
    frames: &[FrameRecord],
    meta: &MetadataFeatures,
    cfg: &NormConfig,
    segment_frames: Option<usize>,
) -> Result<Vec<SegmentFeatures>, ExtractError> {
    if frames.is_empty() {
        return Err(ExtractError::EmptyTrace);
    }
    let len = match segment_frames {
        Some(0) => return Err(ExtractError::ZeroSegment),
        Some(n) => n,
        None => frames.len(),
    };
    let feats = frame_features(frames, cfg)?;
    feats.chunks(len).map(|c| pool_segment(c, meta).map_err(ExtractError::from)).collect()
}

/// One feature vector for the whole video: the mean of its segments.
pub fn extract_video(
    frames: &[FrameRecord],
    meta: &MetadataFeatures,
    cfg: &NormConfig,
    segment_frames: Option<usize>,
) -> Result<SegmentFeatures, ExtractError> {
    Ok(average_segments(&extract_segments(frames, meta, cfg, segment_frames)?)?)
}
