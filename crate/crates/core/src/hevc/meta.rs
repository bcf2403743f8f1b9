//! Video-level metadata features derived from the stream headers.

use super::nal::{split_nal_units, NalError, NalUnit, NAL_SPS};
use super::sps::{parse_sps, ChromaFormat, SpsError, SpsInfo};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaError {
    #[error(transparent)]
    Nal(#[from] NalError),
    #[error(transparent)]
    Sps(#[from] SpsError),
    #[error("stream contains no SPS")]
    NoSps,
    #[error("no frame rate in VUI timing and no override supplied")]
    MissingFrameRate,
    #[error("duration must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error("unknown pixel format {0:?}")]
    UnknownPixelFormat(String),
    #[error("unknown codec {0:?}")]
    UnknownCodec(String),
}

/// Codec tag. Only H.265 streams are parsed; H.264 exists so the
/// categorical dictionary is stable when more parsers land.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    H264,
    H265,
}

impl Codec {
    pub const ALL: [Codec; 2] = [Codec::H264, Codec::H265];

    pub fn name(self) -> &'static str {
        match self {
            Codec::H264 => "h264",
            Codec::H265 => "h265",
        }
    }

    /// Integer code used as a model input.
    pub fn code(self) -> u32 {
        match self {
            Codec::H264 => 0,
            Codec::H265 => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Codec::ALL.into_iter().find(|c| c.code() == code)
    }

    pub fn parse(name: &str) -> Result<Self, MetaError> {
        Codec::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| MetaError::UnknownCodec(name.to_string()))
    }
}

impl fmt::Display for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Chroma layout, bit depth and signal range.
///
/// Names follow the ffmpeg pix_fmt spelling (`yuv420p`, `yuv420p10le`,
/// `gray12le`); full range adds a `:full` suffix. The integer code is
/// `chroma_idc * 100 + bit_depth * 2 + full_range`, so codes order by
/// chroma layout first and bit depth second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelFormat {
    pub chroma: ChromaFormat,
    pub bit_depth: u8,
    pub full_range: bool,
}

impl PixelFormat {
    pub fn code(self) -> u32 {
        self.chroma.idc() * 100 + self.bit_depth as u32 * 2 + self.full_range as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        let chroma = ChromaFormat::from_idc(code / 100)?;
        let rest = code % 100;
        let bit_depth = (rest / 2) as u8;
        if !(8..=16).contains(&bit_depth) {
            return None;
        }
        Some(PixelFormat { chroma, bit_depth, full_range: rest % 2 == 1 })
    }

    /// Every format the dictionary knows, in code order.
    pub fn dictionary() -> Vec<PixelFormat> {
        let mut all = Vec::new();
        for idc in 0..4 {
            for depth in 8..=16u8 {
                for full_range in [false, true] {
                    all.push(PixelFormat {
                        chroma: ChromaFormat::from_idc(idc).unwrap(),
                        bit_depth: depth,
                        full_range,
                    });
                }
            }
        }
        all
    }

    pub fn parse(name: &str) -> Result<Self, MetaError> {
        PixelFormat::dictionary()
            .into_iter()
            .find(|p| p.to_string() == name)
            .ok_or_else(|| MetaError::UnknownPixelFormat(name.to_string()))
    }
}

impl fmt::Display for PixelFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.chroma)?;
        if self.bit_depth > 8 {
            write!(f, "{}le", self.bit_depth)?;
        }
        if self.full_range {
            f.write_str(":full")?;
        }
        Ok(())
    }
}

impl Default for PixelFormat {
    fn default() -> Self {
        PixelFormat { chroma: ChromaFormat::Yuv420, bit_depth: 8, full_range: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetadataFeatures {
    /// width × height in luma samples
    pub resolution: u64,
    pub frame_rate: f64,
    pub codec: Codec,
    pub pixel_format: PixelFormat,
    /// kilobits per second
    pub bitrate: f64,
}

impl MetadataFeatures {
    /// Field names as they appear in `probe` output and feature CSVs.
    pub const KEYS: [&'static str; 5] = ["Resolution", "FrameRate", "Codec", "PixelFormat", "Bitrate"];

    /// Numeric encoding in [`Self::KEYS`] order.
    pub fn values(&self) -> [f64; 5] {
        [
            self.resolution as f64,
            self.frame_rate,
            self.codec.code() as f64,
            self.pixel_format.code() as f64,
            self.bitrate,
        ]
    }

    /// Inverse of [`Self::values`]; `None` on unknown categorical codes.
    pub fn from_values(v: [f64; 5]) -> Option<Self> {
        Some(MetadataFeatures {
            resolution: v[0] as u64,
            frame_rate: v[1],
            codec: Codec::from_code(v[2] as u32)?,
            pixel_format: PixelFormat::from_code(v[3] as u32)?,
            bitrate: v[4],
        })
    }

    /// Key/value record, one field per line.
    pub fn to_record(&self) -> String {
        format!(
            "Resolution={}\nFrameRate={}\nCodec={}\nPixelFormat={}\nBitrate={}\n",
            self.resolution,
            crate::fmt::sig9(self.frame_rate),
            self.codec,
            self.pixel_format,
            crate::fmt::sig9(self.bitrate)
        )
    }
}

/// Bitrate in kbps of `bytes` spread over `duration` seconds.
pub fn bitrate_kbps(bytes: u64, duration: f64) -> f64 {
    8.0 * bytes as f64 / duration / 1000.0
}

/// First SPS of the stream, warning when later ones disagree.
pub fn first_sps(units: &[NalUnit]) -> Result<SpsInfo, MetaError> {
    let mut found: Option<SpsInfo> = None;
    for unit in units.iter().filter(|u| u.nal_type == NAL_SPS) {
        let sps = parse_sps(unit)?;
        match &found {
            None => found = Some(sps),
            Some(first) => {
                if first.width_luma != sps.width_luma
                    || first.height_luma != sps.height_luma
                    || first.bit_depth_luma != sps.bit_depth_luma
                    || first.chroma_format != sps.chroma_format
                    || first.frame_rate != sps.frame_rate
                {
                    log::warn!("SPS id {} disagrees with the first SPS; using the first", sps.sps_id);
                }
            }
        }
    }
    found.ok_or(MetaError::NoSps)
}

/// Number of coded pictures: VCL units whose `first_slice_segment_in_pic_flag` is set.
pub fn count_pictures(units: &[NalUnit]) -> usize {
    units
        .iter()
        .filter(|u| u.is_vcl() && u.payload.first().is_some_and(|b| b & 0x80 != 0))
        .count()
}

/// Metadata features of an Annex-B stream of known duration.
///
/// `frame_rate_override` takes precedence over VUI timing.
pub fn probe_metadata(
    stream: &[u8],
    duration: f64,
    frame_rate_override: Option<f64>,
) -> Result<MetadataFeatures, MetaError> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(MetaError::InvalidDuration(duration));
    }
    let units = split_nal_units(stream)?;
    let sps = first_sps(&units)?;
    metadata_from_sps(&sps, stream.len() as u64, duration, frame_rate_override)
}

pub fn metadata_from_sps(
    sps: &SpsInfo,
    stream_bytes: u64,
    duration: f64,
    frame_rate_override: Option<f64>,
) -> Result<MetadataFeatures, MetaError> {
    let frame_rate = frame_rate_override
        .or(sps.frame_rate)
        .filter(|f| *f > 0.0 && f.is_finite())
        .ok_or(MetaError::MissingFrameRate)?;
    Ok(MetadataFeatures {
        resolution: sps.width_luma as u64 * sps.height_luma as u64,
        frame_rate,
        codec: Codec::H265,
        pixel_format: PixelFormat {
            chroma: sps.chroma_format,
            bit_depth: sps.bit_depth_luma,
            full_range: sps.full_range.unwrap_or(false),
        },
        bitrate: bitrate_kbps(stream_bytes, duration),
    })
}
