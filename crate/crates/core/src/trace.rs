//! Per-block encoding trace: one JSON object per line, one line per frame.
//!
//! ```text
//! {"poc":1,"type":"P","size":5120,"w":64,"h":64,"fps":30.0,
//!  "blocks":[{"x":0,"y":0,"w":64,"h":64,"qp":32,"cu":64,"skip":false,"mvs":[[0,0,4,-2]]}]}
//! ```
//!
//! Each block is one prediction unit; `cu` is the size of the coding unit it
//! belongs to. A motion vector is `[list, ref_poc, mvx, mvy]` in quarter-pel
//! luma units with `list` 0 (L0) or 1 (L1).

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: syntax error: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {field}: {reason}")]
    Invariant { line: usize, field: &'static str, reason: String },
    #[error("trace I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl TraceError {
    pub fn line(&self) -> Option<usize> {
        match self {
            TraceError::Syntax { line, .. } | TraceError::Invariant { line, .. } => Some(*line),
            TraceError::Io(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameType {
    I,
    P,
    B,
}

impl FrameType {
    pub fn is_inter(self) -> bool {
        self != FrameType::I
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RefList {
    L0,
    L1,
}

impl RefList {
    pub fn index(self) -> u8 {
        match self {
            RefList::L0 => 0,
            RefList::L1 => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MotionVector {
    pub list: RefList,
    pub ref_poc: i32,
    pub mv_x: i32,
    pub mv_y: i32,
}

impl MotionVector {
    pub fn new(list: RefList, ref_poc: i32, mv_x: i32, mv_y: i32) -> Self {
        MotionVector { list, ref_poc, mv_x, mv_y }
    }

    /// Euclidean length in quarter-pel units.
    pub fn length(&self) -> f64 {
        (self.mv_x as f64).hypot(self.mv_y as f64)
    }

    pub fn is_zero(&self) -> bool {
        self.mv_x == 0 && self.mv_y == 0
    }
}

impl Serialize for MotionVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut t = serializer.serialize_tuple(4)?;
        t.serialize_element(&self.list.index())?;
        t.serialize_element(&self.ref_poc)?;
        t.serialize_element(&self.mv_x)?;
        t.serialize_element(&self.mv_y)?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for MotionVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct MvVisitor;
        impl<'de> Visitor<'de> for MvVisitor {
            type Value = MotionVector;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("[list, ref_poc, mvx, mvy]")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<MotionVector, A::Error> {
                let list: u8 = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let ref_poc = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(1, &self))?;
                let mv_x = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(2, &self))?;
                let mv_y = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(3, &self))?;
                if seq.next_element::<de::IgnoredAny>()?.is_some() {
                    return Err(de::Error::invalid_length(5, &self));
                }
                let list = match list {
                    0 => RefList::L0,
                    1 => RefList::L1,
                    other => {
                        return Err(de::Error::invalid_value(
                            de::Unexpected::Unsigned(other as u64),
                            &"list 0 or 1",
                        ))
                    }
                };
                Ok(MotionVector { list, ref_poc, mv_x, mv_y })
            }
        }
        deserializer.deserialize_tuple(4, MvVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockRecord {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub qp: u8,
    #[serde(rename = "cu")]
    pub cu_size: u32,
    pub skip: bool,
    pub mvs: Vec<MotionVector>,
}

impl BlockRecord {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Number of 4×4 luma units covered, `w·h / 16`.
    pub fn unit_weight(&self) -> f64 {
        self.area() as f64 / 16.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub poc: i32,
    #[serde(rename = "type")]
    pub frame_type: FrameType,
    #[serde(rename = "size")]
    pub frame_size: u64,
    #[serde(rename = "w")]
    pub width: u32,
    #[serde(rename = "h")]
    pub height: u32,
    #[serde(rename = "fps")]
    pub frame_rate: f64,
    pub blocks: Vec<BlockRecord>,
}

pub const VALID_CU_SIZES: [u32; 4] = [8, 16, 32, 64];

/// Normalization constants for motion features.
///
/// The defaults put motion on a 3840-wide, 60 fps reference grid; the
/// low-motion threshold is in normalized quarter-pel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormConfig {
    pub max_frame_width: f64,
    pub max_frame_rate: f64,
    pub low_motion_tau: f64,
    pub global_threshold: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig { max_frame_width: 3840.0, max_frame_rate: 60.0, low_motion_tau: 1.0, global_threshold: 0.8 }
    }
}

impl NormConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("max_frame_width", self.max_frame_width),
            ("max_frame_rate", self.max_frame_rate),
            ("low_motion_tau", self.low_motion_tau),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.global_threshold > 0.0 && self.global_threshold < 1.0) {
            return Err(format!("global_threshold must lie in (0,1), got {}", self.global_threshold));
        }
        Ok(())
    }
}

fn violation(line: usize, field: &'static str, reason: impl Into<String>) -> TraceError {
    TraceError::Invariant { line, field, reason: reason.into() }
}

impl FrameRecord {
    /// Checks every per-frame invariant; `line` is used for error reporting.
    pub fn validate(&self, line: usize) -> Result<(), TraceError> {
        if self.width == 0 || self.height == 0 {
            return Err(violation(line, "w/h", "frame dimensions must be positive"));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(violation(line, "fps", format!("frame rate {} must be positive", self.frame_rate)));
        }
        if self.blocks.is_empty() {
            return Err(violation(line, "blocks", "frame has no blocks"));
        }
        let mut area = 0u64;
        for (i, b) in self.blocks.iter().enumerate() {
            let at = |reason: String| violation(line, "blocks", format!("block {i}: {reason}"));
            if b.w == 0 || b.h == 0 {
                return Err(at("zero-sized block".into()));
            }
            if b.x as u64 + b.w as u64 > self.width as u64 || b.y as u64 + b.h as u64 > self.height as u64 {
                return Err(at(format!("{}x{}+{}+{} outside the frame", b.w, b.h, b.x, b.y)));
            }
            if b.qp > 51 {
                return Err(at(format!("qp {} out of range 0..=51", b.qp)));
            }
            if !VALID_CU_SIZES.contains(&b.cu_size) {
                return Err(at(format!("cu size {} not in {{8,16,32,64}}", b.cu_size)));
            }
            match self.frame_type {
                FrameType::I => {
                    if b.skip {
                        return Err(at("skip block in an I frame".into()));
                    }
                    if !b.mvs.is_empty() {
                        return Err(at("motion vectors in an I frame".into()));
                    }
                }
                FrameType::P => {
                    if b.mvs.len() > 1 {
                        return Err(at(format!("{} motion vectors in a P frame", b.mvs.len())));
                    }
                }
                FrameType::B => {
                    if b.mvs.len() > 2 {
                        return Err(at(format!("{} motion vectors in a B frame", b.mvs.len())));
                    }
                }
            }
            if b.mvs.iter().any(|mv| mv.ref_poc == self.poc) {
                return Err(at("motion vector references the current picture".into()));
            }
            area += b.area();
        }
        let frame_area = self.width as u64 * self.height as u64;
        if area != frame_area {
            return Err(violation(
                line,
                "blocks",
                format!("block areas sum to {area}, frame area is {frame_area}"),
            ));
        }
        if let Some(i) = self.first_overlap() {
            return Err(violation(line, "blocks", format!("block {i} overlaps an earlier block")));
        }
        Ok(())
    }

    /// Index of the first block overlapping an earlier one, tested on a grid
    /// whose pitch is the gcd of every block coordinate and extent.
    fn first_overlap(&self) -> Option<usize> {
        let pitch = self
            .blocks
            .iter()
            .flat_map(|b| [b.x, b.y, b.w, b.h])
            .fold(0u32, gcd)
            .max(1);
        let cols = self.width.div_ceil(pitch) as usize;
        let rows = self.height.div_ceil(pitch) as usize;
        let mut covered = vec![false; cols * rows];
        for (i, b) in self.blocks.iter().enumerate() {
            let (x0, y0) = ((b.x / pitch) as usize, (b.y / pitch) as usize);
            let (bw, bh) = ((b.w / pitch) as usize, (b.h / pitch) as usize);
            for row in y0..y0 + bh {
                for cell in &mut covered[row * cols + x0..row * cols + x0 + bw] {
                    if *cell {
                        return Some(i);
                    }
                    *cell = true;
                }
            }
        }
        None
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Streaming reader: yields validated frames one line at a time.
pub struct TraceReader<R> {
    input: R,
    line: usize,
    buf: String,
    seen_pocs: HashSet<i32>,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(input: R) -> Self {
        TraceReader { input, line: 0, buf: String::new(), seen_pocs: HashSet::new() }
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<FrameRecord, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.input.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(TraceError::Io(e))),
            }
            self.line += 1;
            let text = self.buf.trim_end_matches(['\n', '\r']);
            if text.trim().is_empty() {
                continue;
            }
            let frame: FrameRecord = match serde_json::from_str(text) {
                Ok(f) => f,
                Err(e) => {
                    return Some(Err(TraceError::Syntax { line: self.line, message: e.to_string() }))
                }
            };
            if let Err(e) = frame.validate(self.line) {
                return Some(Err(e));
            }
            if !self.seen_pocs.insert(frame.poc) {
                return Some(Err(violation(self.line, "poc", format!("duplicate poc {}", frame.poc))));
            }
            return Some(Ok(frame));
        }
    }
}

/// Parses a whole trace held in memory.
pub fn parse_trace(text: &str) -> Result<Vec<FrameRecord>, TraceError> {
    TraceReader::new(text.as_bytes()).collect()
}

/// Writes frames in the trace format, one LF-terminated line each.
pub fn serialize_trace(frames: &[FrameRecord]) -> String {
    let mut out = String::new();
    for f in frames {
        out.push_str(&serde_json::to_string(f).expect("frame records always serialize"));
        out.push('\n');
    }
    out
}
