//! Reference implementations and fixtures shared by the integration tests.
//! The oracles never call the library code they are compared against.

#![allow(dead_code)]

use eqm::features::FrameFeatures;
use eqm::hevc::sps::{ColourDescription, ConformanceWindow, VuiTiming};
use eqm::hevc::{ChromaFormat, SpsInfo};
use eqm::trace::{BlockRecord, FrameRecord, FrameType, MotionVector, NormConfig, RefList};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a − b| ≤ rel·max(|a|,|b|) + 1e-12`
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-12
}

pub fn close_opt(a: Option<f64>, b: Option<f64>, rel: f64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => close(x, y, rel),
        _ => false,
    }
}

pub fn angle_close(a: f64, b: f64, rel: f64) -> bool {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d) <= rel * 360.0
}

// ---------------------------------------------------------------- bit writer

#[derive(Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    nbits: usize,
}

impl BitWriter {
    pub fn bit(&mut self, b: bool) {
        if self.nbits.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if b {
            *self.bytes.last_mut().unwrap() |= 0x80 >> (self.nbits % 8);
        }
        self.nbits += 1;
    }

    pub fn u(&mut self, n: u32, v: u64) {
        for i in (0..n).rev() {
            self.bit((v >> i) & 1 == 1);
        }
    }

    pub fn ue(&mut self, v: u32) {
        let x = v as u64 + 1;
        let len = 64 - x.leading_zeros();
        self.u(len - 1, 0);
        self.u(len, x);
    }

    pub fn se(&mut self, v: i32) {
        let k = if v > 0 { 2 * v as i64 - 1 } else { -2 * v as i64 };
        self.ue(k as u32);
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.bit(true);
        while !self.nbits.is_multiple_of(8) {
            self.bit(false);
        }
        self.bytes
    }
}

/// Emulation prevention: a 0x03 goes in front of any byte ≤ 3 that follows
/// two zero bytes of output, and after output that ends in two zeros.
pub fn escape_rbsp(rbsp: &[u8]) -> Vec<u8> {
    let mut out: Vec<u8> = Vec::with_capacity(rbsp.len() + 8);
    for &b in rbsp {
        let n = out.len();
        if b <= 3 && n >= 2 && out[n - 2] == 0 && out[n - 1] == 0 {
            out.push(3);
        }
        out.push(b);
    }
    if out.ends_with(&[0, 0]) {
        out.push(3);
    }
    out
}

/// Annex-B unit with a 4-byte start code, layer 0, temporal id 0.
pub fn annexb_unit(nal_type: u8, rbsp: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0, 1, nal_type << 1, 1];
    out.extend(escape_rbsp(rbsp));
    out
}

// ------------------------------------------------------------- SPS writing

#[derive(Debug, Clone)]
pub struct VuiSpec {
    pub aspect_idc: Option<u8>,
    pub overscan: bool,
    /// `(full_range, colour description)`
    pub signal: Option<(bool, Option<[u8; 3]>)>,
    pub chroma_loc: bool,
    pub default_display: bool,
    /// `(num_units_in_tick, time_scale)`
    pub timing: Option<(u32, u32)>,
    pub poc_proportional: bool,
    pub hrd: bool,
    pub restriction: bool,
}

/// Fields a test asserts on, plus which optional syntax to emit. Every
/// don't-care syntax element is drawn from a stream seeded with `filler`.
#[derive(Debug, Clone)]
pub struct SpsSpec {
    pub filler: u64,
    pub max_sub_layers_minus1: u32,
    pub profile_idc: u8,
    pub level_idc: u8,
    pub sps_id: u32,
    pub chroma_idc: u32,
    pub coded_width: u32,
    pub coded_height: u32,
    /// left, right, top, bottom in chroma units
    pub window: Option<[u32; 4]>,
    pub bit_depth_luma: u8,
    pub bit_depth_chroma: u8,
    pub log2_max_poc_lsb: u32,
    /// 0: disabled, 1: enabled with default lists, 2: explicit lists
    pub scaling_lists: u8,
    pub pcm: bool,
    pub num_rps: u32,
    pub long_term: Option<u32>,
    pub vui: Option<VuiSpec>,
}

impl SpsSpec {
    /// What a conforming parser must report for this SPS.
    pub fn expected(&self) -> SpsInfo {
        let (sw, sh) = match self.chroma_idc {
            1 => (2, 2),
            2 => (2, 1),
            _ => (1, 1),
        };
        let [l, r, t, b] = self.window.unwrap_or([0; 4]);
        let vui = self.vui.as_ref();
        let timing = vui.and_then(|v| v.timing);
        SpsInfo {
            sps_id: self.sps_id,
            profile_idc: self.profile_idc,
            level_idc: self.level_idc,
            max_sub_layers: self.max_sub_layers_minus1 as u8 + 1,
            chroma_format: [ChromaFormat::Mono, ChromaFormat::Yuv420, ChromaFormat::Yuv422, ChromaFormat::Yuv444]
                [self.chroma_idc as usize],
            coded_width: self.coded_width,
            coded_height: self.coded_height,
            conformance_window: ConformanceWindow { left: l, right: r, top: t, bottom: b },
            width_luma: self.coded_width - sw * (l + r),
            height_luma: self.coded_height - sh * (t + b),
            bit_depth_luma: self.bit_depth_luma,
            bit_depth_chroma: self.bit_depth_chroma,
            full_range: vui.and_then(|v| v.signal).map(|s| s.0),
            colour: vui.and_then(|v| v.signal).and_then(|s| s.1).map(|[p, t, m]| ColourDescription {
                colour_primaries: p,
                transfer_characteristics: t,
                matrix_coeffs: m,
            }),
            timing: timing.map(|(n, s)| VuiTiming { num_units_in_tick: n, time_scale: s }),
            frame_rate: timing.map(|(n, s)| s as f64 / n as f64),
        }
    }
}

/// Random parameter set. `hdr` forces a Main 10, 4:2:0, BT.2020/PQ stream
/// with VUI timing.
pub fn random_sps(r: &mut ChaCha8Rng, hdr: bool) -> SpsSpec {
    let chroma_idc = if hdr { 1 } else { r.random_range(0..4) };
    let (sw, sh) = match chroma_idc {
        1 => (2, 2),
        2 => (2, 1),
        _ => (1, 1),
    };
    let (coded_width, coded_height) = if hdr {
        *[(3840, 2160), (1920, 1088), (2560, 1440), (1280, 720)].get(r.random_range(0..4)).unwrap()
    } else {
        (8 * r.random_range(2..=1024), 8 * r.random_range(2..=600))
    };
    let window = if r.random_bool(0.5) {
        let mut w = [0u32; 4];
        for (i, v) in w.iter_mut().enumerate() {
            let unit = if i < 2 { sw } else { sh };
            *v = r.random_range(0..=8 / unit);
        }
        Some(w)
    } else if hdr && coded_height == 1088 {
        Some([0, 0, 0, 4])
    } else {
        None
    };
    let bit_depth_luma = if hdr { 10 } else { r.random_range(8..=16) };
    let bit_depth_chroma = if hdr { 10 } else { r.random_range(8..=16) };
    let signal = if hdr {
        Some((r.random_bool(0.2), Some([9, 16, 9])))
    } else if r.random_bool(0.5) {
        let desc = r.random_bool(0.5).then(|| [r.random(), r.random(), r.random()]);
        Some((r.random(), desc))
    } else {
        None
    };
    let timing = if hdr || r.random_bool(0.6) {
        let pairs = [(1001, 60000), (1001, 30000), (1001, 24000), (1, 50), (1, 25), (1, 120)];
        Some(if r.random_bool(0.7) {
            pairs[r.random_range(0..pairs.len())]
        } else {
            (r.random_range(1..=u32::MAX), r.random_range(1..=u32::MAX))
        })
    } else {
        None
    };
    let vui = (hdr || r.random_bool(0.7)).then(|| VuiSpec {
        aspect_idc: r.random_bool(0.3).then(|| if r.random() { 255 } else { r.random_range(0..17) }),
        overscan: r.random(),
        signal,
        chroma_loc: r.random(),
        default_display: r.random_bool(0.2),
        timing,
        poc_proportional: r.random(),
        hrd: timing.is_some() && r.random_bool(0.5),
        restriction: r.random(),
    });
    SpsSpec {
        filler: r.random(),
        max_sub_layers_minus1: r.random_range(0..=6),
        profile_idc: if hdr { 2 } else { r.random_range(0..32) },
        level_idc: if hdr { 153 } else { r.random() },
        sps_id: r.random_range(0..=15),
        chroma_idc,
        coded_width,
        coded_height,
        window,
        bit_depth_luma,
        bit_depth_chroma,
        log2_max_poc_lsb: r.random_range(4..=16),
        scaling_lists: r.random_range(0..3),
        pcm: r.random(),
        num_rps: r.random_range(0..=64),
        long_term: r.random_bool(0.3).then(|| r.random_range(0..=32)),
        vui,
    }
}

fn bits43(f: &mut ChaCha8Rng) -> u64 {
    f.random::<u64>() & ((1 << 43) - 1)
}

fn write_ptl(w: &mut BitWriter, f: &mut ChaCha8Rng, s: &SpsSpec) {
    w.u(2, 0);
    w.bit(f.random());
    w.u(5, s.profile_idc as u64);
    w.u(32, f.random::<u32>() as u64);
    w.u(4, f.random_range(0..16));
    w.u(43, bits43(f));
    w.bit(f.random());
    w.u(8, s.level_idc as u64);
    let n = s.max_sub_layers_minus1;
    let flags: Vec<(bool, bool)> = (0..n).map(|_| (f.random(), f.random())).collect();
    for &(p, l) in &flags {
        w.bit(p);
        w.bit(l);
    }
    if n > 0 {
        for _ in n..8 {
            w.u(2, 0);
        }
    }
    for &(p, l) in &flags {
        if p {
            w.u(2, 0);
            w.bit(f.random());
            w.u(5, f.random_range(0..32));
            w.u(32, f.random::<u32>() as u64);
            w.u(4, f.random_range(0..16));
            w.u(43, bits43(f));
            w.bit(f.random());
        }
        if l {
            w.u(8, f.random::<u8>() as u64);
        }
    }
}

fn write_scaling_lists(w: &mut BitWriter, f: &mut ChaCha8Rng) {
    for size_id in 0..4u32 {
        let step = if size_id == 3 { 3 } else { 1 };
        let mut m = 0;
        while m < 6 {
            let explicit = f.random_bool(0.5);
            w.bit(explicit);
            if !explicit {
                let max = if size_id == 3 { m / 3 } else { m };
                w.ue(f.random_range(0..=max));
            } else {
                if size_id > 1 {
                    w.se(f.random_range(-7..=247));
                }
                for _ in 0..64.min(1 << (4 + 2 * size_id)) {
                    w.se(f.random_range(-128..=127));
                }
            }
            m += step;
        }
    }
}

/// Delta POCs of a reference picture set: negatives closest-first, then
/// positives closest-first.
#[derive(Debug, Clone, Default)]
struct Rps {
    neg: Vec<i32>,
    pos: Vec<i32>,
}

impl Rps {
    fn from_values(mut v: Vec<i32>) -> Rps {
        v.sort_unstable();
        let neg: Vec<i32> = v.iter().rev().copied().filter(|d| *d < 0).collect();
        let pos: Vec<i32> = v.iter().copied().filter(|d| *d > 0).collect();
        Rps { neg, pos }
    }

    fn len(&self) -> usize {
        self.neg.len() + self.pos.len()
    }
}

fn write_rps_list(w: &mut BitWriter, f: &mut ChaCha8Rng, count: u32) {
    let mut sets: Vec<Rps> = Vec::new();
    for idx in 0..count as usize {
        let inter = idx > 0 && sets[idx - 1].len() < 16 && f.random_bool(0.5);
        if idx > 0 {
            w.bit(inter);
        }
        if inter {
            let reference = sets[idx - 1].clone();
            let magnitude = f.random_range(1..=8);
            let negative = f.random_bool(0.5);
            let delta = if negative { -magnitude } else { magnitude };
            w.bit(negative);
            w.ue(magnitude as u32 - 1);
            let entries: Vec<i32> = reference.neg.iter().chain(&reference.pos).copied().collect();
            let mut kept = Vec::new();
            for j in 0..=entries.len() {
                let used = f.random_bool(0.5);
                let keep = used || f.random_bool(0.5);
                w.bit(used);
                if !used {
                    w.bit(keep);
                }
                let d = if j < entries.len() { entries[j] + delta } else { delta };
                if keep && d != 0 {
                    kept.push(d);
                }
            }
            sets.push(Rps::from_values(kept));
        } else {
            let n_neg = f.random_range(0..=6);
            let n_pos = f.random_range(0..=6);
            w.ue(n_neg);
            w.ue(n_pos);
            let mut values = Vec::new();
            let mut poc = 0;
            for _ in 0..n_neg {
                let step = f.random_range(1..=4);
                w.ue(step as u32 - 1);
                w.bit(f.random());
                poc -= step;
                values.push(poc);
            }
            poc = 0;
            for _ in 0..n_pos {
                let step = f.random_range(1..=4);
                w.ue(step as u32 - 1);
                w.bit(f.random());
                poc += step;
                values.push(poc);
            }
            sets.push(Rps::from_values(values));
        }
    }
}

fn write_hrd(w: &mut BitWriter, f: &mut ChaCha8Rng, max_sub_layers_minus1: u32) {
    let nal = f.random_bool(0.6);
    let vcl = f.random_bool(0.6);
    w.bit(nal);
    w.bit(vcl);
    let mut sub_pic = false;
    if nal || vcl {
        sub_pic = f.random();
        w.bit(sub_pic);
        if sub_pic {
            w.u(8, f.random::<u8>() as u64);
            w.u(5, f.random_range(0..32));
            w.bit(f.random());
            w.u(5, f.random_range(0..32));
        }
        w.u(4, f.random_range(0..16));
        w.u(4, f.random_range(0..16));
        if sub_pic {
            w.u(4, f.random_range(0..16));
        }
        for _ in 0..3 {
            w.u(5, f.random_range(0..32));
        }
    }
    for _ in 0..=max_sub_layers_minus1 {
        let general = f.random();
        w.bit(general);
        let within = if general {
            true
        } else {
            let v = f.random();
            w.bit(v);
            v
        };
        let mut low_delay = false;
        if within {
            w.ue(f.random_range(0..8));
        } else {
            low_delay = f.random();
            w.bit(low_delay);
        }
        let cpb = if low_delay { 0 } else { f.random_range(0..3) };
        if !low_delay {
            w.ue(cpb);
        }
        for present in [nal, vcl] {
            if present {
                for _ in 0..=cpb {
                    w.ue(f.random_range(0..100_000));
                    w.ue(f.random_range(0..100_000));
                    if sub_pic {
                        w.ue(f.random_range(0..1000));
                        w.ue(f.random_range(0..1000));
                    }
                    w.bit(f.random());
                }
            }
        }
    }
}

fn write_vui(w: &mut BitWriter, f: &mut ChaCha8Rng, v: &VuiSpec, max_sub_layers_minus1: u32) {
    w.bit(v.aspect_idc.is_some());
    if let Some(idc) = v.aspect_idc {
        w.u(8, idc as u64);
        if idc == 255 {
            w.u(16, f.random_range(1..1000));
            w.u(16, f.random_range(1..1000));
        }
    }
    w.bit(v.overscan);
    if v.overscan {
        w.bit(f.random());
    }
    w.bit(v.signal.is_some());
    if let Some((full, desc)) = v.signal {
        w.u(3, f.random_range(0..6));
        w.bit(full);
        w.bit(desc.is_some());
        if let Some(d) = desc {
            for x in d {
                w.u(8, x as u64);
            }
        }
    }
    w.bit(v.chroma_loc);
    if v.chroma_loc {
        w.ue(f.random_range(0..6));
        w.ue(f.random_range(0..6));
    }
    w.u(3, f.random_range(0..8));
    w.bit(v.default_display);
    if v.default_display {
        for _ in 0..4 {
            w.ue(f.random_range(0..9));
        }
    }
    w.bit(v.timing.is_some());
    if let Some((n, s)) = v.timing {
        w.u(32, n as u64);
        w.u(32, s as u64);
        w.bit(v.poc_proportional);
        if v.poc_proportional {
            w.ue(f.random_range(0..16));
        }
        w.bit(v.hrd);
        if v.hrd {
            write_hrd(w, f, max_sub_layers_minus1);
        }
    }
    w.bit(v.restriction);
    if v.restriction {
        w.u(3, f.random_range(0..8));
        for _ in 0..5 {
            w.ue(f.random_range(0..16));
        }
    }
}

/// SPS RBSP (no NAL header) in seq_parameter_set_rbsp syntax order.
pub fn write_sps_rbsp(s: &SpsSpec) -> Vec<u8> {
    let mut f = rng(s.filler);
    let f = &mut f;
    let mut w = BitWriter::default();
    w.u(4, f.random_range(0..16));
    w.u(3, s.max_sub_layers_minus1 as u64);
    w.bit(f.random());
    write_ptl(&mut w, f, s);
    w.ue(s.sps_id);
    w.ue(s.chroma_idc);
    if s.chroma_idc == 3 {
        w.bit(f.random());
    }
    w.ue(s.coded_width);
    w.ue(s.coded_height);
    w.bit(s.window.is_some());
    if let Some(win) = s.window {
        for v in win {
            w.ue(v);
        }
    }
    w.ue(s.bit_depth_luma as u32 - 8);
    w.ue(s.bit_depth_chroma as u32 - 8);
    w.ue(s.log2_max_poc_lsb - 4);
    let all = f.random();
    w.bit(all);
    let first = if all { 0 } else { s.max_sub_layers_minus1 };
    for _ in first..=s.max_sub_layers_minus1 {
        for _ in 0..3 {
            w.ue(f.random_range(0..16));
        }
    }
    let min_cb = f.random_range(0..=3);
    w.ue(min_cb);
    w.ue(f.random_range(0..=3 - min_cb));
    w.ue(f.random_range(0..=3));
    w.ue(f.random_range(0..=3));
    w.ue(f.random_range(0..=4));
    w.ue(f.random_range(0..=4));
    w.bit(s.scaling_lists > 0);
    if s.scaling_lists > 0 {
        w.bit(s.scaling_lists == 2);
        if s.scaling_lists == 2 {
            write_scaling_lists(&mut w, f);
        }
    }
    w.bit(f.random());
    w.bit(f.random());
    w.bit(s.pcm);
    if s.pcm {
        w.u(4, f.random_range(0..16));
        w.u(4, f.random_range(0..16));
        w.ue(f.random_range(0..3));
        w.ue(f.random_range(0..3));
        w.bit(f.random());
    }
    w.ue(s.num_rps);
    write_rps_list(&mut w, f, s.num_rps);
    w.bit(s.long_term.is_some());
    if let Some(n) = s.long_term {
        w.ue(n);
        for _ in 0..n {
            w.u(s.log2_max_poc_lsb, f.random_range(0..1u64 << s.log2_max_poc_lsb));
            w.bit(f.random());
        }
    }
    w.bit(f.random());
    w.bit(f.random());
    w.bit(s.vui.is_some());
    if let Some(v) = &s.vui {
        write_vui(&mut w, f, v, s.max_sub_layers_minus1);
    }
    w.bit(false);
    w.finish()
}

// ------------------------------------------------------------ random frames

/// Frame tiled by a 32×32 quadtree down to 8×8 CUs, some split into two
/// PUs. P blocks carry up to one vector, B blocks up to two; every vector
/// component is a multiple of `mv_step`.
pub fn random_frame(r: &mut ChaCha8Rng, poc: i32, frame_type: FrameType, w: u32, h: u32, fps: f64, mv_step: i32) -> FrameRecord {
    assert!(w.is_multiple_of(8) && h.is_multiple_of(8));
    let base_qp: i32 = r.random_range(10..45);
    let mut blocks = Vec::new();
    let mut stack: Vec<(u32, u32, u32)> = Vec::new();
    for cy in (0..h).step_by(32).rev() {
        for cx in (0..w).step_by(32).rev() {
            stack.push((cx, cy, 32));
        }
    }
    while let Some((x, y, s)) = stack.pop() {
        if x >= w || y >= h {
            continue;
        }
        let fits = x + s <= w && y + s <= h;
        if s > 8 && (!fits || r.random_bool(0.4)) {
            let q = s / 2;
            for (dx, dy) in [(q, q), (0, q), (q, 0), (0, 0)] {
                stack.push((x + dx, y + dy, q));
            }
            continue;
        }
        let pus: Vec<(u32, u32, u32, u32)> = match r.random_range(0..10) {
            0 => vec![(x, y, s, s / 2), (x, y + s / 2, s, s / 2)],
            1 => vec![(x, y, s / 2, s), (x + s / 2, y, s / 2, s)],
            _ => vec![(x, y, s, s)],
        };
        let qp = (base_qp + r.random_range(-6..=6)).clamp(0, 51) as u8;
        for (px, py, pw, ph) in pus {
            blocks.push(random_block(r, poc, frame_type, (px, py, pw, ph), qp, s, mv_step));
        }
    }
    FrameRecord { poc, frame_type, frame_size: r.random_range(100..200_000), width: w, height: h, frame_rate: fps, blocks }
}

fn random_block(
    r: &mut ChaCha8Rng,
    poc: i32,
    frame_type: FrameType,
    (x, y, w, h): (u32, u32, u32, u32),
    qp: u8,
    cu: u32,
    mv_step: i32,
) -> BlockRecord {
    let intra = frame_type == FrameType::I || r.random_bool(0.05);
    let n_mvs = match frame_type {
        _ if intra => 0,
        FrameType::P => usize::from(r.random_bool(0.85)),
        _ => r.random_range(0..=2),
    };
    let mut mvs = Vec::with_capacity(n_mvs);
    for k in 0..n_mvs {
        let gap = r.random_range(1..=4) * if r.random_bool(0.8) { 1 } else { -1 };
        let (mx, my) = if r.random_bool(0.1) {
            (0, 0)
        } else {
            (r.random_range(-60..=60) * mv_step, r.random_range(-60..=60) * mv_step)
        };
        let list = if k == 0 { RefList::L0 } else { RefList::L1 };
        mvs.push(MotionVector::new(list, poc - gap, mx, my));
    }
    let skip = !intra && r.random_bool(0.3);
    BlockRecord { x, y, w, h, qp, cu_size: cu, skip, mvs }
}

/// Frames 0..n in display order: an I frame, then P or B frames.
pub fn random_trace(r: &mut ChaCha8Rng, n: usize, w: u32, h: u32, fps: f64) -> Vec<FrameRecord> {
    (0..n)
        .map(|i| {
            let t = if i == 0 || r.random_bool(0.05) {
                FrameType::I
            } else if r.random() {
                FrameType::P
            } else {
                FrameType::B
            };
            random_frame(r, i as i32, t, w, h, fps, 1)
        })
        .collect()
}

// ------------------------------------------------------ frame feature oracle

/// Block index of every 4×4 luma unit, row-major.
pub fn rasterize(frame: &FrameRecord) -> Vec<usize> {
    assert!(frame.width.is_multiple_of(4) && frame.height.is_multiple_of(4), "frame not on the 4×4 grid");
    let cols = (frame.width / 4) as usize;
    let rows = (frame.height / 4) as usize;
    let mut grid = vec![usize::MAX; cols * rows];
    for (i, b) in frame.blocks.iter().enumerate() {
        assert!(b.x % 4 == 0 && b.y % 4 == 0 && b.w % 4 == 0 && b.h % 4 == 0, "block not on the 4×4 grid");
        for uy in b.y / 4..(b.y + b.h) / 4 {
            for ux in b.x / 4..(b.x + b.w) / 4 {
                let cell = &mut grid[uy as usize * cols + ux as usize];
                assert_eq!(*cell, usize::MAX, "overlap");
                *cell = i;
            }
        }
    }
    assert!(grid.iter().all(|&c| c != usize::MAX), "uncovered unit");
    grid
}

fn unit_motion(b: &BlockRecord, frame: &FrameRecord, cfg: &NormConfig) -> Option<f64> {
    if b.mvs.is_empty() {
        return None;
    }
    let total: f64 = b
        .mvs
        .iter()
        .map(|mv| {
            let len = ((mv.mv_x as i64 * mv.mv_x as i64 + mv.mv_y as i64 * mv.mv_y as i64) as f64).sqrt();
            let gap = (frame.poc - mv.ref_poc).abs() as f64;
            len * cfg.max_frame_width * frame.frame_rate / (frame.width as f64 * cfg.max_frame_rate * gap)
        })
        .sum();
    Some(total / b.mvs.len() as f64)
}

/// Degree bin with y up, by quadrant.
pub fn oracle_bin(mx: i32, my: i32) -> Option<usize> {
    if mx == 0 && my == 0 {
        return None;
    }
    let (x, y) = (mx as f64, -(my as f64));
    let base = (y.abs().atan2(x.abs())).to_degrees();
    let deg = match (x >= 0.0, y >= 0.0) {
        (true, true) => base,
        (false, true) => 180.0 - base,
        (false, false) => 180.0 + base,
        (true, false) => {
            if base == 0.0 {
                0.0
            } else {
                360.0 - base
            }
        }
    };
    Some((deg.floor() as usize).min(359))
}

pub fn oracle_histogram(frame: &FrameRecord, units: &[usize]) -> Vec<f64> {
    let mut bins = vec![0.0; 360];
    for &i in units {
        let b = &frame.blocks[i];
        for mv in &b.mvs {
            if let Some(bin) = oracle_bin(mv.mv_x, mv.mv_y) {
                bins[bin] += 1.0 / b.mvs.len() as f64;
            }
        }
    }
    bins
}

/// Greedy selection: repeatedly take the largest remaining bin, lowest index
/// first, until the taken counts reach `threshold × total`.
pub fn oracle_partition(bins: &[f64], threshold: f64) -> (Vec<usize>, Vec<usize>) {
    let total: f64 = bins.iter().sum();
    let mut taken = vec![false; bins.len()];
    let mut global = Vec::new();
    let mut cum = 0.0;
    while total > 0.0 && cum < threshold * total {
        let mut best: Option<usize> = None;
        for (i, &c) in bins.iter().enumerate() {
            if !taken[i] && c > 0.0 && best.is_none_or(|b| c > bins[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        taken[b] = true;
        cum += bins[b];
        global.push(b);
    }
    let local = (0..bins.len()).filter(|&i| !taken[i] && bins[i] > 0.0).collect();
    (global, local)
}

fn unit_mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut n, mut s) = (0usize, 0.0);
    for v in values {
        n += 1;
        s += v;
    }
    (n > 0).then(|| s / n as f64)
}

/// Frame features computed unit by unit over the 4×4 raster.
pub fn oracle_frame(frame: &FrameRecord, cfg: &NormConfig) -> FrameFeatures {
    let units = rasterize(frame);
    let blk = |i: usize| &frame.blocks[i];
    let qps = || units.iter().map(|&i| blk(i).qp as f64);
    let inter = frame.frame_type != FrameType::I;
    let mut out = FrameFeatures {
        poc: frame.poc,
        frame_type: frame.frame_type,
        frame_size: frame.frame_size,
        min_qp: qps().fold(f64::INFINITY, f64::min),
        max_qp: qps().fold(f64::NEG_INFINITY, f64::max),
        avg_qp: unit_mean(qps()).unwrap(),
        avg_block_depth: unit_mean(units.iter().map(|&i| (blk(i).cu_size as f64).ln() / 2f64.ln())).unwrap(),
        skip_ratio: inter
            .then(|| units.iter().filter(|&&i| blk(i).skip).count() as f64 / units.len() as f64),
        avg_motion: None,
        stddev_motion: None,
        avg_qp_lm: None,
        avg_qp_local_mv_dir: None,
        mv_global_angle: None,
    };
    if !inter {
        return out;
    }
    let motion: Vec<f64> = units.iter().filter_map(|&i| unit_motion(blk(i), frame, cfg)).collect();
    if let Some(avg) = unit_mean(motion.iter().copied()) {
        out.avg_motion = Some(avg);
        out.stddev_motion = Some(unit_mean(motion.iter().map(|m| (m - avg) * (m - avg))).unwrap().sqrt());
    }
    out.avg_qp_lm = unit_mean(
        units
            .iter()
            .filter(|&&i| match unit_motion(blk(i), frame, cfg) {
                Some(m) => m < cfg.low_motion_tau,
                None => blk(i).skip,
            })
            .map(|&i| blk(i).qp as f64),
    );
    let bins = oracle_histogram(frame, &units);
    let (global, local) = oracle_partition(&bins, cfg.global_threshold);
    if !local.is_empty() {
        let mut is_local = [false; 360];
        for &b in &local {
            is_local[b] = true;
        }
        out.avg_qp_local_mv_dir = unit_mean(
            units
                .iter()
                .filter(|&&i| blk(i).mvs.iter().filter_map(|mv| oracle_bin(mv.mv_x, mv.mv_y)).any(|b| is_local[b]))
                .map(|&i| blk(i).qp as f64),
        );
    }
    if !global.is_empty() {
        let mut sorted = global.clone();
        sorted.sort_unstable();
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for d in sorted {
            let t = (d as f64 + 0.5) * std::f64::consts::PI / 180.0;
            sx += bins[d] * t.cos();
            sy += bins[d] * t.sin();
            n += bins[d];
        }
        out.mv_global_angle = Some(if (sx * sx + sy * sy).sqrt() <= 1e-9 * n {
            0.0
        } else {
            (sy.atan2(sx).to_degrees() + 360.0) % 360.0
        });
    }
    out
}

pub fn compare_frames(lib: &FrameFeatures, oracle: &FrameFeatures, rel: f64) -> Result<(), String> {
    let fail = |name: &str, a: &dyn std::fmt::Debug, b: &dyn std::fmt::Debug| {
        Err(format!("poc {}: {name} library {a:?} oracle {b:?}", oracle.poc))
    };
    if lib.poc != oracle.poc || lib.frame_type != oracle.frame_type || lib.frame_size != oracle.frame_size {
        return fail("header", &(lib.poc, lib.frame_type, lib.frame_size), &(oracle.poc, oracle.frame_type, oracle.frame_size));
    }
    for (name, a, b) in [
        ("min_qp", lib.min_qp, oracle.min_qp),
        ("max_qp", lib.max_qp, oracle.max_qp),
        ("avg_qp", lib.avg_qp, oracle.avg_qp),
        ("avg_block_depth", lib.avg_block_depth, oracle.avg_block_depth),
    ] {
        if !close(a, b, rel) {
            return fail(name, &a, &b);
        }
    }
    for (name, a, b) in [
        ("skip_ratio", lib.skip_ratio, oracle.skip_ratio),
        ("avg_motion", lib.avg_motion, oracle.avg_motion),
        ("avg_qp_lm", lib.avg_qp_lm, oracle.avg_qp_lm),
        ("avg_qp_local_mv_dir", lib.avg_qp_local_mv_dir, oracle.avg_qp_local_mv_dir),
    ] {
        if !close_opt(a, b, rel) {
            return fail(name, &a, &b);
        }
    }
    let scale = oracle.avg_motion.unwrap_or(0.0).abs();
    match (lib.stddev_motion, oracle.stddev_motion) {
        (None, None) => {}
        (Some(a), Some(b)) if (a - b).abs() <= rel * scale.max(a.abs()).max(b.abs()) + 1e-12 => {}
        (a, b) => return fail("stddev_motion", &a, &b),
    }
    match (lib.mv_global_angle, oracle.mv_global_angle) {
        (None, None) => {}
        (Some(a), Some(b)) if angle_close(a, b, rel) => {}
        (a, b) => return fail("mv_global_angle", &a, &b),
    }
    Ok(())
}

// ---------------------------------------------------------- pooling oracle

/// k-th smallest value (0-based) by counting, without sorting.
pub fn kth(v: &[f64], k: usize) -> f64 {
    for &x in v {
        let less = v.iter().filter(|&&y| y < x).count();
        let le = v.iter().filter(|&&y| y <= x).count();
        if less <= k && k < le {
            return x;
        }
    }
    unreachable!("k out of range")
}

pub fn o_mean(v: &[f64]) -> f64 {
    v.iter().rev().sum::<f64>() / v.len() as f64
}

pub fn o_std(v: &[f64]) -> f64 {
    let m = o_mean(v);
    (v.iter().rev().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// `n·Σd⁴ / (Σd²)² − 3`, and 0 when every value is equal.
pub fn o_kurtosis(v: &[f64]) -> f64 {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 * lo.abs().max(hi.abs()) {
        return 0.0;
    }
    let m = o_mean(v);
    let s2: f64 = v.iter().map(|x| (x - m).powi(2)).sum();
    let s4: f64 = v.iter().map(|x| (x - m).powi(4)).sum();
    v.len() as f64 * s4 / (s2 * s2) - 3.0
}

pub fn o_median(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        kth(v, n / 2)
    } else {
        0.5 * (kth(v, n / 2 - 1) + kth(v, n / 2))
    }
}

pub fn o_quantile(v: &[f64], p: f64) -> f64 {
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let a = kth(v, lo);
    let b = kth(v, (lo + 1).min(v.len() - 1));
    a + (h - lo as f64) * (b - a)
}

pub fn o_iqr(v: &[f64]) -> f64 {
    o_quantile(v, 0.75) - o_quantile(v, 0.25)
}

type Getter = fn(&FrameFeatures) -> Option<f64>;

fn inter(f: &FrameFeatures, v: Option<f64>) -> Option<f64> {
    if f.frame_type == FrameType::I {
        None
    } else {
        v
    }
}

/// `(key, statistic, per-frame value)` for every pooled key.
pub fn oracle_pooling_table() -> Vec<(&'static str, fn(&[f64]) -> f64, Getter)> {
    let size: Getter = |f| Some(f.frame_size as f64);
    let min_qp: Getter = |f| Some(f.min_qp);
    let max_qp: Getter = |f| Some(f.max_qp);
    let avg_qp: Getter = |f| Some(f.avg_qp);
    let depth: Getter = |f| Some(f.avg_block_depth);
    let skip: Getter = |f| inter(f, f.skip_ratio);
    let sdm: Getter = |f| inter(f, f.stddev_motion);
    let am: Getter = |f| inter(f, f.avg_motion);
    let lm: Getter = |f| inter(f, f.avg_qp_lm);
    let loc: Getter = |f| inter(f, f.avg_qp_local_mv_dir);
    let min = |v: &[f64]| kth(v, 0);
    let max = |v: &[f64]| kth(v, v.len() - 1);
    vec![
        ("mean_framesize", o_mean, size),
        ("std_framesize", o_std, size),
        ("kurtosis_framesize", o_kurtosis, size),
        ("min_framesize", min, size),
        ("max_framesize", max, size),
        ("iqr_minQP", o_iqr, min_qp),
        ("std_maxQP", o_std, max_qp),
        ("mean_avgQP", o_mean, avg_qp),
        ("std_avgQP", o_std, avg_qp),
        ("kurtosis_avgQP", o_kurtosis, avg_qp),
        ("min_avgQP", min, avg_qp),
        ("max_avgQP", max, avg_qp),
        ("median_avgBlockDepth", o_median, depth),
        ("kurtosis_avgBlockDepth", o_kurtosis, depth),
        ("median_skipBlksRatio", o_median, skip),
        ("kurtosis_skipBlksRatio", o_kurtosis, skip),
        ("mean_stdDevMotion", o_mean, sdm),
        ("mean_avgMotion", o_mean, am),
        ("kurtosis_avgMotion", o_kurtosis, am),
        ("std_avgQpLm", o_std, lm),
        ("mean_avgQpLocalMvDir", o_mean, loc),
        ("max_avgQpLocalMvDir", max, loc),
    ]
}

/// Pooled EQM values in table order; absent-everywhere keys are 0.
pub fn oracle_pool(frames: &[FrameFeatures]) -> Vec<(&'static str, f64)> {
    oracle_pooling_table()
        .into_iter()
        .map(|(key, stat, get)| {
            let series: Vec<f64> = frames.iter().filter_map(get).collect();
            (key, if series.is_empty() { 0.0 } else { stat(&series) })
        })
        .collect()
}

/// `[Resolution, FrameRate, Codec, PixelFormat, Bitrate]` derived from the
/// trace, with the codec and pixel-format codes supplied by the caller.
pub fn oracle_trace_metadata(frames: &[FrameRecord], codec: f64, pixfmt: f64) -> [f64; 5] {
    let f0 = &frames[0];
    let bytes: u64 = frames.iter().map(|f| f.frame_size).sum();
    let bitrate = bytes as f64 * 8.0 * f0.frame_rate / (frames.len() as f64 * 1000.0);
    [(f0.width as u64 * f0.height as u64) as f64, f0.frame_rate, codec, pixfmt, bitrate]
}

// ---------------------------------------------------------------- fixtures

/// One row per synthetic video with the pixel-proxy column attached.
pub fn synth_dataset(cfg: &eqm::synth::SynthConfig) -> eqm::dataset::LabeledDataset {
    use eqm::dataset::{FeatureTable, LabeledDataset, MosTable};
    let mut table = FeatureTable::new(&[eqm::synth::PIXEL_PROXY_COLUMN.to_string()]);
    let mut mos = MosTable::default();
    for i in 0..cfg.videos {
        let v = eqm::synth::generate_video(cfg, i);
        let seg = eqm::pipeline::extract_video(&v.frames, &v.metadata, &NormConfig::default(), None).unwrap();
        table.push_segment(&v.id, 0, &seg, &[v.pixel_proxy]);
        mos.rows.push((v.id, v.mos));
    }
    LabeledDataset::join(&table, &mos).unwrap()
}

// ------------------------------------------------------ correlation oracles

pub fn o_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&y| y < x).count() as f64;
            let eq = v.iter().filter(|&&y| y == x).count() as f64;
            1.0 + less + (eq - 1.0) / 2.0
        })
        .collect()
}

pub fn o_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (o_mean(x), o_mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

pub fn o_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    o_pearson(&o_ranks(x), &o_ranks(y))
}

/// Tau-b by counting every pair.
pub fn o_kendall(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let a = (x[i] - x[j]).signum() * if x[i] == x[j] { 0.0 } else { 1.0 };
            let b = (y[i] - y[j]).signum() * if y[i] == y[j] { 0.0 } else { 1.0 };
            if a == 0.0 {
                tx += 1;
            }
            if b == 0.0 {
                ty += 1;
            }
            if a * b > 0.0 {
                c += 1;
            } else if a * b < 0.0 {
                d += 1;
            }
        }
    }
    let n0 = (n * n.saturating_sub(1) / 2) as i64;
    let denom = ((n0 - tx) as f64 * (n0 - ty) as f64).sqrt();
    (denom > 0.0).then(|| (c - d) as f64 / denom)
}

pub fn o_rmse(p: &[f64], t: &[f64]) -> f64 {
    o_mean(&p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).collect::<Vec<_>>()).sqrt()
}

// ------------------------------------------------------------ OLS oracle

/// Intercept and slope from the 2×2 normal equations by Cramer's rule.
pub fn o_ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * sxx - sx * sx;
    let a = (n * sxy - sx * sy) / det;
    let b = (sxx * sy - sx * sxy) / det;
    (a, b)
}

// ------------------------------------------------------ traversal oracles

pub fn o_tree(nodes: &[eqm::forest::Node], x: &[f64]) -> f64 {
    fn walk(nodes: &[eqm::forest::Node], i: usize, x: &[f64]) -> f64 {
        match nodes[i] {
            eqm::forest::Node::Leaf(v) => v,
            eqm::forest::Node::Split(f, t, l, r, _) => walk(nodes, if x[f] > t { r } else { l }, x),
        }
    }
    walk(nodes, 0, x)
}

pub fn o_forest(forest: &eqm::forest::Forest, x: &[f64]) -> f64 {
    let s: f64 = forest.trees.iter().map(|t| o_tree(&t.nodes, x)).sum();
    s / forest.trees.len() as f64
}

/// Base plus residual, each stage averaged over its trees, clamped to 0–100.
pub fn o_two_stage(model: &eqm::model::EqmModel, get: &dyn Fn(&str) -> f64) -> f64 {
    let pick = |keys: &[String]| keys.iter().map(|k| get(k)).collect::<Vec<f64>>();
    let raw = match &model.base {
        None => o_forest(&model.residual, &pick(&model.features.residual)),
        Some(base) => {
            let b = o_forest(base, &pick(&model.features.base));
            let mut xr = vec![b];
            xr.extend(pick(&model.features.residual[1..]));
            b + o_forest(&model.residual, &xr)
        }
    };
    raw.max(0.0).min(100.0)
}
