//! Feature and MOS tables, their CSV forms, and the labeled dataset that
//! joins them.
//!
//! Feature CSV: `video_id,segment_idx,<27 segment keys>,frame_count[,external...]`.
//! MOS CSV: `video_id,mos`. Numbers are written with [`crate::fmt::sig9`].

use crate::fmt::sig9;
use crate::pooling::{SegmentFeatures, SEGMENT_KEYS};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use thiserror::Error;

pub const FRAME_COUNT_KEY: &str = "frame_count";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("duplicate video id {0:?}")]
    DuplicateVideoId(String),
    #[error("no rows")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub video_id: String,
    pub segment_idx: usize,
    pub values: Vec<f64>,
}

/// Rows of named numeric columns keyed by (video id, segment index).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

/// Column names of a feature table without external columns.
pub fn canonical_columns() -> Vec<String> {
    SEGMENT_KEYS.iter().map(|s| s.to_string()).chain([FRAME_COUNT_KEY.to_string()]).collect()
}

impl FeatureTable {
    pub fn new(external: &[String]) -> Self {
        let mut columns = canonical_columns();
        columns.extend(external.iter().cloned());
        FeatureTable { columns, rows: Vec::new() }
    }

    pub fn push_segment(&mut self, video_id: &str, segment_idx: usize, seg: &SegmentFeatures, external: &[f64]) {
        let mut values = seg.values.clone();
        values.push(seg.frame_count as f64);
        values.extend_from_slice(external);
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push(FeatureRow { video_id: video_id.to_string(), segment_idx, values });
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn external_columns(&self) -> Vec<String> {
        let canon: HashSet<String> = canonical_columns().into_iter().collect();
        self.columns.iter().filter(|c| !canon.contains(*c)).cloned().collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let mut header = vec!["video_id".to_string(), "segment_idx".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.video_id.clone(), r.segment_idx.to_string()];
            rec.extend(r.values.iter().map(|v| sig9(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let vid = header.iter().position(|h| h == "video_id").ok_or_else(|| DataError::MissingColumn("video_id".into()))?;
        let seg = header.iter().position(|h| h == "segment_idx");
        let value_cols: Vec<usize> = (0..header.len()).filter(|&i| i != vid && Some(i) != seg).collect();
        let columns = value_cols.iter().map(|&i| header[i].clone()).collect();
        let mut rows = Vec::new();
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = n + 2;
            let segment_idx = match seg {
                Some(i) => rec[i].parse().map_err(|e| DataError::BadRow { row, message: format!("segment_idx: {e}") })?,
                None => 0,
            };
            let values = value_cols
                .iter()
                .map(|&i| {
                    rec[i].parse::<f64>().map_err(|e| DataError::BadRow { row, message: format!("{}: {e}", header[i]) })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(FeatureRow { video_id: rec[vid].to_string(), segment_idx, values });
        }
        Ok(FeatureTable { columns, rows })
    }

    /// One row per video: segment rows averaged per column, `frame_count`
    /// summed. Videos keep first-appearance order.
    pub fn per_video(&self) -> FeatureTable {
        let fc = self.column(FRAME_COUNT_KEY);
        let mut order: Vec<&str> = Vec::new();
        let mut groups: HashMap<&str, Vec<&FeatureRow>> = HashMap::new();
        for r in &self.rows {
            groups.entry(&r.video_id).or_insert_with(|| {
                order.push(&r.video_id);
                Vec::new()
            });
            groups.get_mut(r.video_id.as_str()).unwrap().push(r);
        }
        let rows = order
            .into_iter()
            .map(|id| {
                let g = &groups[id];
                let n = g.len() as f64;
                let values = (0..self.columns.len())
                    .map(|c| {
                        let s: f64 = g.iter().map(|r| r.values[c]).sum();
                        if Some(c) == fc {
                            s
                        } else {
                            s / n
                        }
                    })
                    .collect();
                FeatureRow { video_id: id.to_string(), segment_idx: 0, values }
            })
            .collect();
        FeatureTable { columns: self.columns.clone(), rows }
    }

    /// Adds columns from a `video_id,<name>...` table, matched by video id.
    pub fn attach_columns(&mut self, extra: &FeatureTable) -> Result<(), DataError> {
        let mut by_id: HashMap<&str, &FeatureRow> = HashMap::new();
        for r in &extra.rows {
            if by_id.insert(&r.video_id, r).is_some() {
                return Err(DataError::DuplicateVideoId(r.video_id.clone()));
            }
        }
        for (i, row) in self.rows.iter_mut().enumerate() {
            let src = by_id.get(row.video_id.as_str()).ok_or_else(|| DataError::BadRow {
                row: i + 2,
                message: format!("no external values for video {:?}", row.video_id),
            })?;
            row.values.extend_from_slice(&src.values);
        }
        self.columns.extend(extra.columns.iter().cloned());
        Ok(())
    }
}

/// `video_id → mos` in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MosTable {
    pub rows: Vec<(String, f64)>,
}

impl MosTable {
    pub fn read_csv<R: Read>(input: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let vid = header.iter().position(|h| h == "video_id").ok_or_else(|| DataError::MissingColumn("video_id".into()))?;
        let val = header
            .iter()
            .position(|h| h == "mos" || h == "score")
            .ok_or_else(|| DataError::MissingColumn("mos".into()))?;
        let mut rows = Vec::new();
        let mut seen = HashSet::new();
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let v: f64 = rec[val].parse().map_err(|e| DataError::BadRow { row: n + 2, message: format!("mos: {e}") })?;
            if !v.is_finite() {
                return Err(DataError::BadRow { row: n + 2, message: "mos is not finite".into() });
            }
            if !seen.insert(rec[vid].to_string()) {
                return Err(DataError::DuplicateVideoId(rec[vid].to_string()));
            }
            rows.push((rec[vid].to_string(), v));
        }
        Ok(MosTable { rows })
    }

    pub fn write_csv<W: Write>(&self, out: W, value_name: &str) -> Result<(), DataError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["video_id", value_name])?;
        for (id, v) in &self.rows {
            w.write_record([id.as_str(), &sig9(*v)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn as_map(&self) -> BTreeMap<&str, f64> {
        self.rows.iter().map(|(k, v)| (k.as_str(), *v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRow {
    pub video_id: String,
    pub features: Vec<f64>,
    pub mos: f64,
}

/// Feature rows with subjective scores on a common 0–100 scale.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledDataset {
    pub columns: Vec<String>,
    pub rows: Vec<LabeledRow>,
}

impl LabeledDataset {
    /// Joins per-video features with scores; videos without a score are
    /// skipped with a warning.
    pub fn join(features: &FeatureTable, mos: &MosTable) -> Result<Self, DataError> {
        let per_video = features.per_video();
        let scores = mos.as_map();
        let mut rows = Vec::new();
        for r in per_video.rows {
            match scores.get(r.video_id.as_str()) {
                Some(&m) => rows.push(LabeledRow { video_id: r.video_id, features: r.values, mos: m }),
                None => log::warn!("video {:?} has features but no score; skipped", r.video_id),
            }
        }
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        Ok(LabeledDataset { columns: per_video.columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn mos(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mos).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset { columns: self.columns.clone(), rows: indices.iter().map(|&i| self.rows[i].clone()).collect() }
    }

    pub fn check_unique_ids(&self) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        for r in &self.rows {
            if !seen.insert(r.video_id.as_str()) {
                return Err(DataError::DuplicateVideoId(r.video_id.clone()));
            }
        }
        Ok(())
    }
}
