//! Command-line entry point.
//!
//! Failures print one line to standard error,
//! `error: code=<module>.<Variant> message="..."`, and exit nonzero
//! (2 for usage errors, 1 otherwise). Every command that writes files also
//! writes `<first output>.manifest.json` with input and output checksums and
//! the effective configuration.

use crate::config::{ConfigError, PipelineConfig};
use crate::dataset::{DataError, FeatureTable, LabeledDataset, MosTable};
use crate::eval::{correlations, cross_validate, EvalError, EvalReport};
use crate::fmt::sig9;
use crate::fusion::{fuse_datasets, AnchorSet, FusionError};
use crate::hevc::{probe_metadata, Codec, MetaError, PixelFormat};
use crate::model::{train_eqm, Level, ModelError};
use crate::pipeline::{extract_segments, trace_metadata, ExtractError};
use crate::pooling::average_segments;
use crate::rq::{crossovers, rq_curves, RqPoint};
use crate::synth::{generate_video, PIXEL_PROXY_COLUMN};
use crate::trace::{serialize_trace, FrameRecord, TraceError, TraceReader};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Debug;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "eqm", version, about = "Bitstream-based video quality metric")]
pub struct Cli {
    /// TOML pipeline configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Metadata features of an HEVC Annex-B stream
    Probe(ProbeArgs),
    /// Trace files to a feature CSV
    Extract(ExtractArgs),
    /// Map MOS tables onto a target scale through anchor videos
    Fuse(FuseArgs),
    /// Train a model from features and scores
    Train(TrainArgs),
    /// Score a feature CSV with a trained model
    Predict(PredictArgs),
    /// Repeated k-fold cross-validation
    Crossval(CrossvalArgs),
    /// Agreement between predicted and subjective scores
    Eval(EvalArgs),
    /// Synthetic traces with planted scores
    Synth(SynthArgs),
    /// Rate-quality curve data and resolution crossovers
    Rq(RqArgs),
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Stream duration in seconds; derived from the picture count and frame
    /// rate when omitted
    #[arg(long)]
    pub duration: Option<f64>,
    /// Frame rate when the stream carries no VUI timing
    #[arg(long)]
    pub fps: Option<f64>,
    /// Output file (standard output when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Trace files (video id = file stem)
    #[arg(long = "trace", required = true, num_args = 1..)]
    pub traces: Vec<PathBuf>,
    /// Frames per segment (overrides the config)
    #[arg(long)]
    pub segment_frames: Option<usize>,
    /// One row per video instead of one per segment
    #[arg(long)]
    pub average: bool,
    /// Annex-B stream supplying metadata (single trace only)
    #[arg(long)]
    pub hevc: Option<PathBuf>,
    /// Extra per-video columns: `video_id,<name>...`
    #[arg(long)]
    pub externals: Option<PathBuf>,
    #[arg(long, default_value = "h265")]
    pub codec: String,
    #[arg(long, default_value = "yuv420p")]
    pub pixel_format: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// MOS table already on the target scale
    #[arg(long)]
    pub target: PathBuf,
    /// Source MOS table; repeat together with --anchors
    #[arg(long = "source", required = true)]
    pub sources: Vec<PathBuf>,
    /// `video_id,source_mos,target_mos` for the matching --source
    #[arg(long = "anchors", required = true)]
    pub anchors: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with the fitted map of each source
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelSelection {
    #[arg(long)]
    pub level: Option<Level>,
    /// External column used at FR level; repeatable
    #[arg(long = "external")]
    pub external: Vec<String>,
    /// Leave mean QP out of the base model
    #[arg(long)]
    pub no_base_qp: bool,
    /// One forest on all inputs
    #[arg(long)]
    pub single_stage: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub mos: PathBuf,
    #[command(flatten)]
    pub model: ModelSelection,
    #[arg(long)]
    pub out: PathBuf,
    /// CSV of residual-forest feature importance
    #[arg(long)]
    pub importance: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Score each segment row instead of each video
    #[arg(long)]
    pub segments: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub mos: PathBuf,
    #[command(flatten)]
    pub model: ModelSelection,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// JSON report
    #[arg(long)]
    pub out: PathBuf,
    /// CSV with one line per repetition
    #[arg(long)]
    pub per_rep: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `video_id,score`
    #[arg(long)]
    pub pred: PathBuf,
    /// `video_id,mos`
    #[arg(long)]
    pub truth: PathBuf,
    /// JSON report (standard output when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RqArgs {
    /// `video_id,score`
    #[arg(long)]
    pub scores: PathBuf,
    /// Feature CSV supplying Bitrate and Resolution
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// CSV of crossover bitrates between resolution pairs
    #[arg(long)]
    pub crossovers: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Trace { path: String, source: TraceError },
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Meta(#[from] MetaError),
    #[error("{0}")]
    Extract(#[from] ExtractError),
    #[error("{0}")]
    Data(#[from] DataError),
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Fusion(#[from] FusionError),
    #[error("{0}")]
    Eval(#[from] EvalError),
}

fn variant(e: &dyn Debug) -> String {
    let s = format!("{e:?}");
    s.chars().take_while(|c| c.is_ascii_alphanumeric() || *c == '_').collect()
}

impl CliError {
    /// `<module>.<Variant>` identifier of the failure.
    pub fn code(&self) -> String {
        match self {
            CliError::Usage(_) => "cli.Usage".into(),
            CliError::Io { .. } => "cli.Io".into(),
            CliError::Trace { source, .. } => format!("trace.{}", variant(source)),
            CliError::Config(e) => format!("config.{}", variant(e)),
            CliError::Meta(e) => format!("hevc.{}", variant(e)),
            CliError::Extract(e) => format!("features.{}", variant(e)),
            CliError::Data(e) => format!("dataset.{}", variant(e)),
            CliError::Model(e) => format!("model.{}", variant(e)),
            CliError::Fusion(e) => format!("fusion.{}", variant(e)),
            CliError::Eval(e) => format!("eval.{}", variant(e)),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn line(&self) -> String {
        format!("error: code={} message={:?}", self.code(), self.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

/// Tracks files read and written by one command.
struct Run {
    command: &'static str,
    config: PipelineConfig,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    /// Output the manifest is named after; defaults to the first one.
    primary: Option<PathBuf>,
}

fn digest(path: &Path, bytes: &[u8]) -> FileDigest {
    FileDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(bytes)) }
}

impl Run {
    fn read(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        self.inputs.push(digest(path, &bytes));
        Ok(bytes)
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(path, bytes).map_err(io_err(path))?;
        self.outputs.push(digest(path, bytes));
        Ok(())
    }

    fn finish(self) -> Result<(), CliError> {
        let Some(first) = self.outputs.first() else { return Ok(()) };
        let primary = self.primary.as_ref().map_or(first.path.clone(), |p| p.display().to_string());
        let path = PathBuf::from(format!("{primary}.manifest.json"));
        #[derive(Serialize)]
        struct Manifest<'a> {
            tool: &'a str,
            version: &'a str,
            command: &'a str,
            config: &'a PipelineConfig,
            inputs: &'a [FileDigest],
            outputs: &'a [FileDigest],
        }
        let m = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config: &self.config,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(io_err(&path))
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), DataError>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

fn read_trace(run: &mut Run, path: &Path) -> Result<Vec<FrameRecord>, CliError> {
    let bytes = run.read(path)?;
    TraceReader::new(BufReader::new(bytes.as_slice()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| CliError::Trace { path: path.display().to_string(), source })
}

fn apply_selection(cfg: &mut PipelineConfig, sel: &ModelSelection) {
    if let Some(l) = sel.level {
        cfg.level = l;
    }
    if !sel.external.is_empty() {
        cfg.external_columns = sel.external.clone();
    }
    if sel.no_base_qp {
        cfg.base_qp = false;
    }
    if sel.single_stage {
        cfg.single_stage = true;
    }
}

fn load_labeled(run: &mut Run, features: &Path, mos: &Path) -> Result<LabeledDataset, CliError> {
    let table = FeatureTable::read_csv(run.read(features)?.as_slice())?;
    let scores = MosTable::read_csv(run.read(mos)?.as_slice())?;
    let data = LabeledDataset::join(&table, &scores)?;
    data.check_unique_ids()?;
    Ok(data)
}

fn cmd_probe(run: &mut Run, a: &ProbeArgs) -> Result<(), CliError> {
    let stream = run.read(&a.input)?;
    let duration = match a.duration {
        Some(d) => d,
        None => {
            let units = crate::hevc::split_nal_units(&stream).map_err(MetaError::from)?;
            let pictures = crate::hevc::meta::count_pictures(&units);
            let sps = crate::hevc::meta::first_sps(&units)?;
            let fps = a.fps.or(sps.frame_rate).ok_or(MetaError::MissingFrameRate)?;
            pictures as f64 / fps
        }
    };
    let meta = probe_metadata(&stream, duration, a.fps)?;
    let record = meta.to_record();
    match &a.out {
        Some(p) => run.write(p, record.as_bytes()),
        None => {
            print!("{record}");
            Ok(())
        }
    }
}

fn cmd_extract(run: &mut Run, a: &ExtractArgs) -> Result<(), CliError> {
    if a.hevc.is_some() && a.traces.len() != 1 {
        return Err(CliError::Usage("--hevc needs exactly one --trace".into()));
    }
    if let Some(n) = a.segment_frames {
        run.config.segment_frames = Some(n);
    }
    let codec = Codec::parse(&a.codec)?;
    let pixel_format = PixelFormat::parse(&a.pixel_format)?;
    let mut table = FeatureTable::new(&[]);
    for path in &a.traces {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CliError::Usage(format!("cannot derive a video id from {}", path.display())))?
            .to_string();
        let frames = read_trace(run, path)?;
        let meta = match &a.hevc {
            Some(h) => {
                let stream = run.read(h)?;
                let first = frames.first().ok_or(ExtractError::EmptyTrace)?;
                let duration = frames.len() as f64 / first.frame_rate;
                probe_metadata(&stream, duration, Some(first.frame_rate))?
            }
            None => trace_metadata(&frames, codec, pixel_format)?,
        };
        let segments = extract_segments(&frames, &meta, &run.config.norm, run.config.segment_frames)?;
        for seg in &segments {
            if !seg.fallbacks.is_empty() {
                log::info!("{id}: no inter frames for {}; pooled as 0", seg.fallbacks.join(", "));
            }
        }
        if a.average {
            table.push_segment(&id, 0, &average_segments(&segments).map_err(ExtractError::from)?, &[]);
        } else {
            for (i, seg) in segments.iter().enumerate() {
                table.push_segment(&id, i, seg, &[]);
            }
        }
    }
    if let Some(p) = &a.externals {
        let extra = FeatureTable::read_csv(run.read(p)?.as_slice())?;
        table.attach_columns(&extra)?;
    }
    let bytes = csv_bytes(|b| table.write_csv(b))?;
    run.write(&a.out, &bytes)
}

fn cmd_fuse(run: &mut Run, a: &FuseArgs) -> Result<(), CliError> {
    if a.sources.len() != a.anchors.len() {
        return Err(CliError::Usage("each --source needs one --anchors".into()));
    }
    let target = MosTable::read_csv(run.read(&a.target)?.as_slice())?;
    let mut sources = Vec::new();
    for (s, an) in a.sources.iter().zip(&a.anchors) {
        let table = MosTable::read_csv(run.read(s)?.as_slice())?;
        let anchors = AnchorSet::read_csv(run.read(an)?.as_slice())?;
        sources.push((table, anchors));
    }
    let result = fuse_datasets(&target, &sources)?;
    let bytes = csv_bytes(|b| result.fused.write_csv(b, "mos"))?;
    run.write(&a.out, &bytes)?;
    if let Some(r) = &a.report {
        #[derive(Serialize)]
        struct Entry<'a> {
            source: String,
            map: &'a crate::fusion::LinearMap,
        }
        let entries: Vec<Entry> = a
            .sources
            .iter()
            .zip(&result.maps)
            .map(|(s, map)| Entry { source: s.display().to_string(), map })
            .collect();
        run.write(r, &json_bytes(&entries))?;
    }
    Ok(())
}

fn cmd_train(run: &mut Run, a: &TrainArgs) -> Result<(), CliError> {
    apply_selection(&mut run.config, &a.model);
    let data = load_labeled(run, &a.features, &a.mos)?;
    let model = train_eqm(&data, &run.config.train_options())?;
    run.write(&a.out, &model.to_bytes())?;
    if let Some(p) = &a.importance {
        let mut text = String::from("feature,importance\n");
        for (k, v) in model.residual.feature_importance() {
            text.push_str(&format!("{k},{}\n", sig9(v)));
        }
        run.write(p, text.as_bytes())?;
    }
    Ok(())
}

fn cmd_predict(run: &mut Run, a: &PredictArgs) -> Result<(), CliError> {
    let model = crate::model::EqmModel::from_bytes(&run.read(&a.model)?)?;
    let table = FeatureTable::read_csv(run.read(&a.features)?.as_slice())?;
    let mut text = String::new();
    if a.segments {
        text.push_str("video_id,segment_idx,score\n");
        for r in &table.rows {
            let s = model.predict_row(&table.columns, &r.values)?;
            text.push_str(&format!("{},{},{}\n", r.video_id, r.segment_idx, sig9(s)));
        }
    } else {
        text.push_str("video_id,score\n");
        let videos = table.per_video();
        for r in &videos.rows {
            let s = model.predict_row(&videos.columns, &r.values)?;
            text.push_str(&format!("{},{}\n", r.video_id, sig9(s)));
        }
    }
    run.write(&a.out, text.as_bytes())
}

fn cmd_crossval(run: &mut Run, a: &CrossvalArgs) -> Result<(), CliError> {
    apply_selection(&mut run.config, &a.model);
    if let Some(f) = a.folds {
        run.config.folds = f;
    }
    if let Some(r) = a.reps {
        run.config.reps = r;
    }
    run.config.validate()?;
    let data = load_labeled(run, &a.features, &a.mos)?;
    let cfg = &run.config;
    let report = cross_validate(&data, &cfg.train_options(), cfg.folds, cfg.reps, cfg.seed)?;
    run.write(&a.out, &json_bytes(&report))?;
    if let Some(p) = &a.per_rep {
        let mut text = String::from("rep,srocc,plcc,krocc,rmse\n");
        for (i, m) in report.repetitions.iter().enumerate() {
            text.push_str(&format!("{i},{},{},{},{}\n", sig9(m.srocc), sig9(m.plcc), sig9(m.krocc), sig9(m.rmse)));
        }
        run.write(p, text.as_bytes())?;
    }
    Ok(())
}

fn cmd_eval(run: &mut Run, a: &EvalArgs) -> Result<(), CliError> {
    let pred = MosTable::read_csv(run.read(&a.pred)?.as_slice())?;
    let truth = MosTable::read_csv(run.read(&a.truth)?.as_slice())?;
    let tmap = truth.as_map();
    let mut p = Vec::new();
    let mut t = Vec::new();
    for (id, v) in &pred.rows {
        match tmap.get(id.as_str()) {
            Some(m) => {
                p.push(*v);
                t.push(*m);
            }
            None => log::warn!("prediction for {id:?} has no subjective score; skipped"),
        }
    }
    let report: EvalReport = correlations(&p, &t)?.into();
    let bytes = json_bytes(&report);
    match &a.out {
        Some(path) => run.write(path, &bytes),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

fn cmd_synth(run: &mut Run, a: &SynthArgs) -> Result<(), CliError> {
    let mut cfg = run.config.synth.clone();
    cfg.seed = run.config.seed;
    if let Some(v) = a.videos {
        cfg.videos = v;
    }
    if let Some(f) = a.frames {
        cfg.frames = f;
    }
    cfg.validate().map_err(|e| CliError::Config(ConfigError::Invalid(e)))?;
    run.config.synth = cfg.clone();
    let mut mos = String::from("video_id,mos\n");
    let mut ext = format!("video_id,{PIXEL_PROXY_COLUMN}\n");
    let mut latent = String::from("video_id,width,height,fps,qp,speed,angle_deg,complexity,local_fraction,pixel,bitrate\n");
    for i in 0..cfg.videos {
        let v = generate_video(&cfg, i);
        let path = a.out_dir.join("traces").join(format!("{}.jsonl", v.id));
        run.write(&path, serialize_trace(&v.frames).as_bytes())?;
        mos.push_str(&format!("{},{}\n", v.id, sig9(v.mos)));
        ext.push_str(&format!("{},{}\n", v.id, sig9(v.pixel_proxy)));
        let l = v.latent;
        latent.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            v.id,
            l.width,
            l.height,
            sig9(l.frame_rate),
            sig9(l.qp),
            sig9(l.speed),
            sig9(l.angle_deg),
            sig9(l.complexity),
            sig9(l.local_fraction),
            sig9(l.pixel),
            sig9(v.metadata.bitrate)
        ));
    }
    run.write(&a.out_dir.join("mos.csv"), mos.as_bytes())?;
    run.write(&a.out_dir.join("externals.csv"), ext.as_bytes())?;
    run.write(&a.out_dir.join("latent.csv"), latent.as_bytes())?;
    run.primary = Some(a.out_dir.join("mos.csv"));
    Ok(())
}

fn cmd_rq(run: &mut Run, a: &RqArgs) -> Result<(), CliError> {
    let scores = MosTable::read_csv(run.read(&a.scores)?.as_slice())?;
    let table = FeatureTable::read_csv(run.read(&a.features)?.as_slice())?.per_video();
    let col = |name: &str| table.column(name).ok_or_else(|| DataError::MissingColumn(name.to_string()));
    let (res_col, br_col) = (col("Resolution")?, col("Bitrate")?);
    let smap = scores.as_map();
    let mut points = Vec::new();
    for r in &table.rows {
        match smap.get(r.video_id.as_str()) {
            Some(&score) => points.push(RqPoint { resolution: r.values[res_col] as u64, bitrate: r.values[br_col], score }),
            None => log::warn!("no score for {:?}; skipped", r.video_id),
        }
    }
    let curves = rq_curves(&points);
    let mut text = String::from("resolution,bitrate,score\n");
    for (res, curve) in &curves {
        for (b, s) in curve {
            text.push_str(&format!("{res},{},{}\n", sig9(*b), sig9(*s)));
        }
    }
    run.write(&a.out, text.as_bytes())?;
    if let Some(p) = &a.crossovers {
        let mut text = String::from("resolution_low,resolution_high,bitrate,score\n");
        for c in crossovers(&curves) {
            text.push_str(&format!("{},{},{},{}\n", c.resolution_low, c.resolution_high, sig9(c.bitrate), sig9(c.score)));
        }
        run.write(p, text.as_bytes())?;
    }
    Ok(())
}

fn load_config(cli: &Cli) -> Result<(PipelineConfig, Option<FileDigest>), CliError> {
    let (mut cfg, digest_of) = match &cli.config {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(io_err(p))?;
            let text = String::from_utf8(bytes.clone())
                .map_err(|_| CliError::Config(ConfigError::Syntax("config is not UTF-8".into())))?;
            (PipelineConfig::from_toml(&text)?, Some(digest(p, &bytes)))
        }
        None => (PipelineConfig::default(), None),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok((cfg, digest_of))
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let (config, cfg_digest) = load_config(cli)?;
    let name = match &cli.command {
        Command::Probe(_) => "probe",
        Command::Extract(_) => "extract",
        Command::Fuse(_) => "fuse",
        Command::Train(_) => "train",
        Command::Predict(_) => "predict",
        Command::Crossval(_) => "crossval",
        Command::Eval(_) => "eval",
        Command::Synth(_) => "synth",
        Command::Rq(_) => "rq",
    };
    let mut run = Run { command: name, config, inputs: cfg_digest.into_iter().collect(), outputs: Vec::new(), primary: None };
    match &cli.command {
        Command::Probe(a) => cmd_probe(&mut run, a)?,
        Command::Extract(a) => cmd_extract(&mut run, a)?,
        Command::Fuse(a) => cmd_fuse(&mut run, a)?,
        Command::Train(a) => cmd_train(&mut run, a)?,
        Command::Predict(a) => cmd_predict(&mut run, a)?,
        Command::Crossval(a) => cmd_crossval(&mut run, a)?,
        Command::Eval(a) => cmd_eval(&mut run, a)?,
        Command::Synth(a) => cmd_synth(&mut run, a)?,
        Command::Rq(a) => cmd_rq(&mut run, a)?,
    }
    run.finish()
}

/// Parses `argv`, runs the command, and returns the process exit status.
pub fn run(argv: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = CliError::Usage(e.kind().to_string());
            eprint!("{}", e.render());
            eprintln!("{}", err.line());
            return err.exit_code();
        }
    };
    let _ = env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).try_init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}
