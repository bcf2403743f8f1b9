//! Seeded synthetic traces with a planted quality score.
//!
//! Each video has hidden encoding factors (QP, normalized motion speed,
//! content complexity, a pixel-domain quality term). Frames are tiled by
//! random CTU quadtrees; motion is a global translation plus local outliers.
//! The score is [`planted_mos`] of QP, speed and bitrate, plus the pixel
//! term and Gaussian noise. An external column `DLM` observes the pixel term.

use crate::forest::mix64;
use crate::hevc::{Codec, MetadataFeatures, PixelFormat};
use crate::pipeline::trace_metadata;
use crate::trace::{BlockRecord, FrameRecord, FrameType, MotionVector, RefList};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const PIXEL_PROXY_COLUMN: &str = "DLM";
const CTU: u32 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub videos: usize,
    pub frames: usize,
    /// Distance between anchor (I/P) frames; frames in between are B.
    pub gop: usize,
    /// Every `intra_period`-th frame is I; 0 keeps only the first.
    pub intra_period: usize,
    pub resolutions: Vec<[u32; 2]>,
    pub frame_rates: Vec<f64>,
    pub qp_range: [f64; 2],
    /// Normalized quarter-pel displacement per POC.
    pub speed_range: [f64; 2],
    pub noise_std: f64,
    pub pixel_weight: f64,
    pub pixel_format: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            videos: 40,
            frames: 17,
            gop: 4,
            intra_period: 0,
            resolutions: vec![[640, 360], [1280, 720], [1920, 1080], [2560, 1440]],
            frame_rates: vec![24.0, 30.0, 50.0, 60.0],
            qp_range: [22.0, 40.0],
            speed_range: [1.0, 40.0],
            noise_std: 2.0,
            pixel_weight: 6.0,
            pixel_format: "yuv420p10le".into(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.frames == 0 || self.gop == 0 {
            return Err("frames and gop must be at least 1".into());
        }
        if self.resolutions.is_empty() || self.frame_rates.is_empty() {
            return Err("resolutions and frame_rates must be non-empty".into());
        }
        if let Some(r) = self.resolutions.iter().find(|r| r[0] == 0 || r[1] == 0 || r[0] % 8 != 0 || r[1] % 8 != 0) {
            return Err(format!("resolution {}x{} must be a positive multiple of 8", r[0], r[1]));
        }
        if self.frame_rates.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err("frame rates must be positive".into());
        }
        if !(self.qp_range[0] >= 0.0 && self.qp_range[0] <= self.qp_range[1] && self.qp_range[1] <= 51.0) {
            return Err("qp_range must lie within 0..=51".into());
        }
        if !(self.speed_range[0] >= 0.0 && self.speed_range[0] <= self.speed_range[1]) {
            return Err("speed_range must be ordered and non-negative".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err("noise_std must be non-negative".into());
        }
        PixelFormat::parse(&self.pixel_format).map_err(|e| e.to_string())?;
        Ok(())
    }
}

/// Hidden per-video factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Latent {
    pub width: u32,
    pub height: u32,
    pub frame_rate: f64,
    pub qp: f64,
    pub speed: f64,
    pub angle_deg: f64,
    pub complexity: f64,
    pub local_fraction: f64,
    pub pixel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub id: String,
    pub latent: Latent,
    pub frames: Vec<FrameRecord>,
    pub metadata: MetadataFeatures,
    pub mos: f64,
    pub pixel_proxy: f64,
}

/// Noise-free quality as a function of mean QP, normalized motion speed
/// and bitrate in kbps.
pub fn planted_mos(qp: f64, speed: f64, bitrate_kbps: f64) -> f64 {
    80.0 - 2.0 * (qp - 22.0) - 0.1 * speed + 1.5 * (bitrate_kbps / 1000.0).log2()
}

pub fn video_id(index: usize) -> String {
    format!("syn{index:04}")
}

fn video_seed(seed: u64, index: usize) -> u64 {
    mix64(seed ^ mix64(0xC0DE_0000_0000 ^ index as u64))
}

/// `(type, references)` of each POC for the configured GOP.
pub fn gop_structure(cfg: &SynthConfig) -> Vec<(FrameType, Vec<(RefList, i32)>)> {
    let g = cfg.gop;
    (0..cfg.frames)
        .map(|p| {
            if p == 0 || (cfg.intra_period > 0 && p % cfg.intra_period == 0) {
                return (FrameType::I, vec![]);
            }
            let anchor = p - p % g;
            if p % g == 0 {
                (FrameType::P, vec![(RefList::L0, (p - g) as i32)])
            } else if anchor + g < cfg.frames {
                (FrameType::B, vec![(RefList::L0, anchor as i32), (RefList::L1, (anchor + g) as i32)])
            } else {
                (FrameType::P, vec![(RefList::L0, anchor as i32)])
            }
        })
        .collect()
}

struct FrameGen<'a> {
    rng: &'a mut ChaCha8Rng,
    lat: &'a Latent,
    jitter: Normal<f64>,
}

impl FrameGen<'_> {
    fn split_probability(&self, size: u32) -> f64 {
        let depth = (CTU / size).trailing_zeros() as f64;
        let base = 0.45 + 0.25 * (self.lat.complexity - 1.0) - 0.02 * (self.lat.qp - 31.0) + 0.004 * self.lat.speed;
        (base.clamp(0.05, 0.95) * 0.7f64.powf(depth)).clamp(0.0, 1.0)
    }

    fn quad(&mut self, x: u32, y: u32, s: u32, out: &mut Vec<(u32, u32, u32)>) {
        let (w, h) = (self.lat.width, self.lat.height);
        if x >= w || y >= h {
            return;
        }
        let fits = x + s <= w && y + s <= h;
        if s > 8 && (!fits || self.rng.random::<f64>() < self.split_probability(s)) {
            let t = s / 2;
            for (dx, dy) in [(0, 0), (t, 0), (0, t), (t, t)] {
                self.quad(x + dx, y + dy, t, out);
            }
        } else {
            out.push((x, y, s));
        }
    }

    /// Native quarter-pel MV toward a reference `gap` POCs away.
    fn mv(&mut self, list: RefList, poc: i32, ref_poc: i32, speed: f64, theta: f64) -> MotionVector {
        let f_res = 3840.0 / self.lat.width as f64;
        let f_fr = self.lat.frame_rate / 60.0;
        let d = speed / (f_res * f_fr);
        let g = (ref_poc - poc) as f64;
        let jx = self.jitter.sample(self.rng) * 0.5;
        let jy = self.jitter.sample(self.rng) * 0.5;
        MotionVector::new(
            list,
            ref_poc,
            (d * theta.cos() * g + jx).round() as i32,
            (-d * theta.sin() * g + jy).round() as i32,
        )
    }

    fn frame(&mut self, poc: i32, ftype: FrameType, refs: &[(RefList, i32)], skip_p: f64) -> Vec<BlockRecord> {
        let mut cus = Vec::new();
        for cy in (0..self.lat.height).step_by(CTU as usize) {
            for cx in (0..self.lat.width).step_by(CTU as usize) {
                self.quad(cx, cy, CTU, &mut cus);
            }
        }
        let offset = match ftype {
            FrameType::I => -3.0,
            FrameType::P => 0.0,
            FrameType::B => 2.0,
        };
        let mut blocks = Vec::with_capacity(cus.len() + cus.len() / 4);
        for (x, y, s) in cus {
            let qp = (self.lat.qp + offset + 1.5 * self.jitter.sample(self.rng)).round().clamp(0.0, 51.0) as u8;
            let block = |x, y, w, h, skip, mvs| BlockRecord { x, y, w, h, qp, cu_size: s, skip, mvs };
            if ftype == FrameType::I || self.rng.random::<f64>() < 0.03 {
                blocks.push(block(x, y, s, s, false, vec![]));
                continue;
            }
            let parts: Vec<(u32, u32, u32, u32)> = if s >= 16 && self.rng.random::<f64>() < 0.15 {
                if self.rng.random::<bool>() {
                    vec![(x, y, s, s / 2), (x, y + s / 2, s, s / 2)]
                } else {
                    vec![(x, y, s / 2, s), (x + s / 2, y, s / 2, s)]
                }
            } else {
                vec![(x, y, s, s)]
            };
            let skip = parts.len() == 1 && self.rng.random::<f64>() < skip_p;
            for (px, py, pw, ph) in parts {
                if skip && self.rng.random::<f64>() < 0.25 {
                    blocks.push(block(px, py, pw, ph, true, vec![]));
                    continue;
                }
                let u: f64 = self.rng.random();
                let (speed, theta) = if u < self.lat.local_fraction {
                    (self.lat.speed * self.rng.random_range(0.0..2.0), self.rng.random_range(0.0..2.0 * PI))
                } else if u < self.lat.local_fraction + 0.05 {
                    (0.0, 0.0)
                } else {
                    (
                        self.lat.speed * (1.0 + 0.05 * self.jitter.sample(self.rng)),
                        self.lat.angle_deg.to_radians() + 0.05 * self.jitter.sample(self.rng),
                    )
                };
                let chosen: Vec<(RefList, i32)> = if refs.len() == 2 {
                    let r: f64 = self.rng.random();
                    if r < 0.5 {
                        refs.to_vec()
                    } else if r < 0.75 {
                        vec![refs[0]]
                    } else {
                        vec![refs[1]]
                    }
                } else {
                    refs.to_vec()
                };
                let mvs = chosen.iter().map(|&(l, rp)| self.mv(l, poc, rp, speed, theta)).collect();
                blocks.push(block(px, py, pw, ph, skip, mvs));
            }
        }
        blocks
    }
}

pub fn generate_video(cfg: &SynthConfig, index: usize) -> SynthVideo {
    let mut rng = ChaCha8Rng::seed_from_u64(video_seed(cfg.seed, index));
    let res = cfg.resolutions[rng.random_range(0..cfg.resolutions.len())];
    let fps = cfg.frame_rates[rng.random_range(0..cfg.frame_rates.len())];
    let uniform = |rng: &mut ChaCha8Rng, r: [f64; 2]| if r[0] < r[1] { rng.random_range(r[0]..r[1]) } else { r[0] };
    let lat = Latent {
        width: res[0],
        height: res[1],
        frame_rate: fps,
        qp: uniform(&mut rng, cfg.qp_range),
        speed: uniform(&mut rng, cfg.speed_range),
        angle_deg: rng.random_range(0.0..360.0),
        complexity: 2f64.powf(rng.random_range(-1.0..1.0)),
        local_fraction: rng.random_range(0.02..0.2),
        pixel: rng.random(),
    };
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let skip_p = (0.1 + 0.015 * (lat.qp - 22.0) - 0.004 * lat.speed).clamp(0.0, 0.9);
    let structure = gop_structure(cfg);
    let mut frames = Vec::with_capacity(cfg.frames);
    for (poc, (ftype, refs)) in structure.iter().enumerate() {
        let poc = poc as i32;
        let blocks = FrameGen { rng: &mut rng, lat: &lat, jitter: unit }.frame(poc, *ftype, refs, skip_p);
        let type_factor = match ftype {
            FrameType::I => 5.0,
            FrameType::P => 1.0,
            FrameType::B => 0.5,
        };
        let bpp = 0.6
            * lat.complexity
            * 2f64.powf(-(lat.qp - 22.0) / 6.0)
            * type_factor
            * (1.0 + lat.speed / 50.0)
            * (0.05 * unit.sample(&mut rng)).exp();
        let frame_size = ((lat.width as f64 * lat.height as f64 * bpp / 8.0).round() as u64).max(1);
        frames.push(FrameRecord {
            poc,
            frame_type: *ftype,
            frame_size,
            width: lat.width,
            height: lat.height,
            frame_rate: fps,
            blocks,
        });
    }
    let pixel_format = PixelFormat::parse(&cfg.pixel_format).unwrap_or_default();
    let metadata = trace_metadata(&frames, Codec::H265, pixel_format).expect("non-empty trace");
    let clean = planted_mos(lat.qp, lat.speed, metadata.bitrate) + cfg.pixel_weight * (lat.pixel - 0.5);
    let mos = (clean + cfg.noise_std * unit.sample(&mut rng)).clamp(0.0, 100.0);
    let pixel_proxy = 0.6 + 0.3 * lat.pixel + 0.005 * unit.sample(&mut rng);
    SynthVideo { id: video_id(index), latent: lat, frames, metadata, mos, pixel_proxy }
}
