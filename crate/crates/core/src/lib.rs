//! EQM: a bitstream-based video quality metric built from encoder
//! quantization and motion statistics.

pub mod dataset;
pub mod features;
pub mod fmt;
pub mod forest;
pub mod hevc;
pub mod pooling;
pub mod trace;
pub mod model;
pub mod eval;
pub mod fusion;
pub mod pipeline;
pub mod synth;
pub mod cli;
pub mod config;
pub mod rq;
