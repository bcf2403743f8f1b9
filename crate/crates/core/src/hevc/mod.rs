//! Just enough HEVC Annex-B parsing to recover video-level metadata
//! (resolution, frame rate, pixel format, bitrate) without entropy decoding.

pub mod bits;
pub mod meta;
pub mod nal;
pub mod sps;

pub use meta::{probe_metadata, Codec, MetaError, MetadataFeatures, PixelFormat};
pub use nal::{escape, join_nal_units, split_nal_units, unescape, NalError, NalUnit};
pub use sps::{parse_sps, ChromaFormat, SpsError, SpsInfo};
