//! Annex-B framing: start-code scanning and emulation prevention.

use thiserror::Error;

pub const NAL_VPS: u8 = 32;
pub const NAL_SPS: u8 = 33;
pub const NAL_PPS: u8 = 34;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NalError {
    #[error("no Annex-B start code found")]
    NoStartCode,
    #[error("{len} non-zero byte(s) precede the first start code")]
    LeadingGarbage { len: usize },
    #[error("NAL unit at byte {offset} is shorter than its 2-byte header")]
    TruncatedUnit { offset: usize },
    #[error("invalid emulation-prevention sequence at byte {offset}")]
    InvalidEscape { offset: usize },
}

/// One NAL unit with its header decoded and the RBSP unescaped.
///
/// `leading_zeros` counts the zero bytes sitting in front of the 3-byte
/// start code (a 4-byte start code has one), `trailing_zeros` holds the
/// zero bytes after the final unit of a stream. Together they make
/// [`join_nal_units`] the exact inverse of [`split_nal_units`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NalUnit {
    pub nal_type: u8,
    pub layer_id: u8,
    pub temporal_id_plus1: u8,
    header: [u8; 2],
    pub payload: Vec<u8>,
    pub leading_zeros: usize,
    pub trailing_zeros: usize,
}

impl NalUnit {
    /// Builds a unit from a raw header and unescaped payload.
    pub fn new(header: [u8; 2], payload: Vec<u8>) -> Self {
        NalUnit {
            nal_type: (header[0] >> 1) & 0x3f,
            layer_id: ((header[0] & 1) << 5) | (header[1] >> 3),
            temporal_id_plus1: header[1] & 0x07,
            header,
            payload,
            leading_zeros: 1,
            trailing_zeros: 0,
        }
    }

    pub fn header(&self) -> [u8; 2] {
        self.header
    }

    pub fn is_vcl(&self) -> bool {
        self.nal_type < 32
    }

    /// Appends the Annex-B encoding of this unit to `out`.
    pub fn write_annexb(&self, out: &mut Vec<u8>) {
        out.extend(std::iter::repeat_n(0u8, self.leading_zeros));
        out.extend_from_slice(&[0, 0, 1]);
        let mut raw = Vec::with_capacity(self.payload.len() + 2);
        raw.extend_from_slice(&self.header);
        raw.extend_from_slice(&self.payload);
        out.extend_from_slice(&escape(&raw));
        out.extend(std::iter::repeat_n(0u8, self.trailing_zeros));
    }
}

/// Inserts emulation-prevention bytes into an RBSP.
pub fn escape(rbsp: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(rbsp.len() + rbsp.len() / 64 + 1);
    let mut zeros = 0usize;
    for &b in rbsp {
        if zeros >= 2 && b <= 3 {
            out.push(3);
            zeros = 0;
        }
        out.push(b);
        zeros = if b == 0 { zeros + 1 } else { 0 };
    }
    if zeros >= 2 {
        out.push(3);
    }
    out
}

/// Removes emulation-prevention bytes. `base` is only used for error offsets.
pub fn unescape_at(escaped: &[u8], base: usize) -> Result<Vec<u8>, NalError> {
    let mut out = Vec::with_capacity(escaped.len());
    let mut zeros = 0usize;
    let mut i = 0;
    while i < escaped.len() {
        let b = escaped[i];
        if zeros >= 2 {
            match b {
                3 => {
                    if let Some(&next) = escaped.get(i + 1) {
                        if next > 3 {
                            return Err(NalError::InvalidEscape { offset: base + i });
                        }
                    }
                    zeros = 0;
                    i += 1;
                    continue;
                }
                0..=2 => return Err(NalError::InvalidEscape { offset: base + i }),
                _ => {}
            }
        }
        out.push(b);
        zeros = if b == 0 { zeros + 1 } else { 0 };
        i += 1;
    }
    Ok(out)
}

pub fn unescape(escaped: &[u8]) -> Result<Vec<u8>, NalError> {
    unescape_at(escaped, 0)
}

fn start_codes(stream: &[u8]) -> Vec<usize> {
    let mut found = Vec::new();
    let mut i = 0;
    while i + 3 <= stream.len() {
        if stream[i] == 0 && stream[i + 1] == 0 && stream[i + 2] == 1 {
            found.push(i);
            i += 3;
        } else if stream[i + 2] > 1 {
            i += 3;
        } else {
            i += 1;
        }
    }
    found
}

/// Splits an Annex-B byte stream into NAL units in stream order.
pub fn split_nal_units(stream: &[u8]) -> Result<Vec<NalUnit>, NalError> {
    let starts = start_codes(stream);
    let first = *starts.first().ok_or(NalError::NoStartCode)?;
    if stream[..first].iter().any(|&b| b != 0) {
        return Err(NalError::LeadingGarbage { len: first });
    }
    let mut units = Vec::with_capacity(starts.len());
    let mut leading = first;
    for (k, &sc) in starts.iter().enumerate() {
        let begin = sc + 3;
        let end = starts.get(k + 1).copied().unwrap_or(stream.len());
        let region = &stream[begin..end];
        let zeros = region.iter().rev().take_while(|&&b| b == 0).count();
        let body = &region[..region.len() - zeros];
        if body.len() < 2 {
            return Err(NalError::TruncatedUnit { offset: begin });
        }
        let raw = unescape_at(body, begin)?;
        let mut unit = NalUnit::new([raw[0], raw[1]], raw[2..].to_vec());
        unit.leading_zeros = leading;
        if k + 1 == starts.len() {
            unit.trailing_zeros = zeros;
        } else {
            leading = zeros;
        }
        units.push(unit);
    }
    Ok(units)
}

/// Inverse of [`split_nal_units`].
pub fn join_nal_units(units: &[NalUnit]) -> Vec<u8> {
    let mut out = Vec::new();
    for u in units {
        u.write_annexb(&mut out);
    }
    out
}
