//! Sequence parameter set parsing (H.265 7.3.2.2), including the VUI
//! fields that carry timing and signal range.

use super::bits::{BitError, BitReader};
use super::nal::{NalUnit, NAL_SPS};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpsError {
    #[error("NAL unit type {0} is not an SPS")]
    NotSps(u8),
    #[error("malformed SPS: {0}")]
    Bits(#[from] BitError),
    #[error("malformed SPS: {name} = {value} out of range")]
    OutOfRange { name: &'static str, value: u64 },
    #[error("malformed SPS: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChromaFormat {
    Mono,
    Yuv420,
    Yuv422,
    Yuv444,
}

impl ChromaFormat {
    pub fn from_idc(idc: u32) -> Option<Self> {
        match idc {
            0 => Some(ChromaFormat::Mono),
            1 => Some(ChromaFormat::Yuv420),
            2 => Some(ChromaFormat::Yuv422),
            3 => Some(ChromaFormat::Yuv444),
            _ => None,
        }
    }

    pub fn idc(self) -> u32 {
        self as u32
    }

    /// (SubWidthC, SubHeightC)
    fn subsampling(self) -> (u32, u32) {
        match self {
            ChromaFormat::Mono | ChromaFormat::Yuv444 => (1, 1),
            ChromaFormat::Yuv420 => (2, 2),
            ChromaFormat::Yuv422 => (2, 1),
        }
    }
}

impl fmt::Display for ChromaFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChromaFormat::Mono => "gray",
            ChromaFormat::Yuv420 => "yuv420p",
            ChromaFormat::Yuv422 => "yuv422p",
            ChromaFormat::Yuv444 => "yuv444p",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConformanceWindow {
    pub left: u32,
    pub right: u32,
    pub top: u32,
    pub bottom: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VuiTiming {
    pub num_units_in_tick: u32,
    pub time_scale: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColourDescription {
    pub colour_primaries: u8,
    pub transfer_characteristics: u8,
    pub matrix_coeffs: u8,
}

/// The subset of the SPS that downstream code cares about.
///
/// `width_luma`/`height_luma` are the display (conformance-cropped) size;
/// the coded size is kept alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct SpsInfo {
    pub sps_id: u32,
    pub profile_idc: u8,
    pub level_idc: u8,
    pub max_sub_layers: u8,
    pub chroma_format: ChromaFormat,
    pub coded_width: u32,
    pub coded_height: u32,
    pub conformance_window: ConformanceWindow,
    pub width_luma: u32,
    pub height_luma: u32,
    pub bit_depth_luma: u8,
    pub bit_depth_chroma: u8,
    pub full_range: Option<bool>,
    pub colour: Option<ColourDescription>,
    pub timing: Option<VuiTiming>,
    pub frame_rate: Option<f64>,
}

fn ue_max(r: &mut BitReader<'_>, name: &'static str, max: u32) -> Result<u32, SpsError> {
    let v = r.read_ue()?;
    if v > max {
        return Err(SpsError::OutOfRange { name, value: v as u64 });
    }
    Ok(v)
}

fn profile_tier_level(
    r: &mut BitReader<'_>,
    max_sub_layers_minus1: u32,
) -> Result<(u8, u8), SpsError> {
    let _profile_space = r.read_bits(2)?;
    let _tier = r.read_flag()?;
    let profile_idc = r.read_bits(5)? as u8;
    // compatibility flags (32), source flags (4), constraint flags (43), inbld/reserved (1)
    r.skip(32 + 4 + 43 + 1)?;
    let level_idc = r.read_bits(8)? as u8;
    let mut profile_present = [false; 8];
    let mut level_present = [false; 8];
    for i in 0..max_sub_layers_minus1 as usize {
        profile_present[i] = r.read_flag()?;
        level_present[i] = r.read_flag()?;
    }
    if max_sub_layers_minus1 > 0 {
        for _ in max_sub_layers_minus1..8 {
            r.skip(2)?;
        }
    }
    for i in 0..max_sub_layers_minus1 as usize {
        if profile_present[i] {
            r.skip(88)?;
        }
        if level_present[i] {
            r.skip(8)?;
        }
    }
    Ok((profile_idc, level_idc))
}

fn scaling_list_data(r: &mut BitReader<'_>) -> Result<(), SpsError> {
    for size_id in 0..4u32 {
        let step = if size_id == 3 { 3 } else { 1 };
        let mut matrix_id = 0;
        while matrix_id < 6 {
            let pred_mode = r.read_flag()?;
            if !pred_mode {
                let max_delta = if size_id == 3 { matrix_id / 3 } else { matrix_id };
                ue_max(r, "scaling_list_pred_matrix_id_delta", max_delta)?;
            } else {
                let coef_num = 64.min(1u32 << (4 + (size_id << 1)));
                if size_id > 1 {
                    let dc = r.read_se()?;
                    if !(-7..=247).contains(&dc) {
                        return Err(SpsError::OutOfRange {
                            name: "scaling_list_dc_coef_minus8",
                            value: dc as u64,
                        });
                    }
                }
                for _ in 0..coef_num {
                    let delta = r.read_se()?;
                    if !(-128..=127).contains(&delta) {
                        return Err(SpsError::OutOfRange {
                            name: "scaling_list_delta_coef",
                            value: delta as u64,
                        });
                    }
                }
            }
            matrix_id += step;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
struct RefPicSet {
    negative: Vec<i32>,
    positive: Vec<i32>,
}

impl RefPicSet {
    fn num_delta_pocs(&self) -> usize {
        self.negative.len() + self.positive.len()
    }
}

fn st_ref_pic_set(
    r: &mut BitReader<'_>,
    idx: usize,
    sets: &[RefPicSet],
) -> Result<RefPicSet, SpsError> {
    let inter = if idx != 0 { r.read_flag()? } else { false };
    if inter {
        // delta_idx_minus1 is only coded in slice headers; here RefRpsIdx = idx - 1
        let reference = &sets[idx - 1];
        let sign = r.read_flag()?;
        let abs_minus1 = ue_max(r, "abs_delta_rps_minus1", (1 << 15) - 1)? as i32;
        let delta_rps = if sign { -(abs_minus1 + 1) } else { abs_minus1 + 1 };
        let n = reference.num_delta_pocs();
        let mut use_delta = vec![true; n + 1];
        for flag in use_delta.iter_mut() {
            let used_by_curr = r.read_flag()?;
            if !used_by_curr {
                *flag = r.read_flag()?;
            }
        }
        let n_neg = reference.negative.len();
        let mut out = RefPicSet::default();
        for j in (0..reference.positive.len()).rev() {
            let d = reference.positive[j] + delta_rps;
            if d < 0 && use_delta[n_neg + j] {
                out.negative.push(d);
            }
        }
        if delta_rps < 0 && use_delta[n] {
            out.negative.push(delta_rps);
        }
        for (j, r) in reference.negative.iter().enumerate().take(n_neg) {
            let d = r + delta_rps;
            if d < 0 && use_delta[j] {
                out.negative.push(d);
            }
        }
        for j in (0..n_neg).rev() {
            let d = reference.negative[j] + delta_rps;
            if d > 0 && use_delta[j] {
                out.positive.push(d);
            }
        }
        if delta_rps > 0 && use_delta[n] {
            out.positive.push(delta_rps);
        }
        for j in 0..reference.positive.len() {
            let d = reference.positive[j] + delta_rps;
            if d > 0 && use_delta[n_neg + j] {
                out.positive.push(d);
            }
        }
        if out.num_delta_pocs() > 32 {
            return Err(SpsError::Malformed("reference picture set too large"));
        }
        Ok(out)
    } else {
        let num_negative = ue_max(r, "num_negative_pics", 16)?;
        let num_positive = ue_max(r, "num_positive_pics", 16)?;
        let mut out = RefPicSet::default();
        let mut poc = 0i32;
        for _ in 0..num_negative {
            let d = ue_max(r, "delta_poc_s0_minus1", 1 << 15)? as i32;
            r.read_flag()?;
            poc -= d + 1;
            out.negative.push(poc);
        }
        poc = 0;
        for _ in 0..num_positive {
            let d = ue_max(r, "delta_poc_s1_minus1", 1 << 15)? as i32;
            r.read_flag()?;
            poc += d + 1;
            out.positive.push(poc);
        }
        Ok(out)
    }
}

fn sub_layer_hrd(r: &mut BitReader<'_>, cpb_cnt: u32, sub_pic: bool) -> Result<(), SpsError> {
    for _ in 0..cpb_cnt {
        r.read_ue()?;
        r.read_ue()?;
        if sub_pic {
            r.read_ue()?;
            r.read_ue()?;
        }
        r.read_flag()?;
    }
    Ok(())
}

fn hrd_parameters(r: &mut BitReader<'_>, max_sub_layers_minus1: u32) -> Result<(), SpsError> {
    let nal_hrd = r.read_flag()?;
    let vcl_hrd = r.read_flag()?;
    let mut sub_pic = false;
    if nal_hrd || vcl_hrd {
        sub_pic = r.read_flag()?;
        if sub_pic {
            r.skip(8 + 5 + 1 + 5)?;
        }
        r.skip(4 + 4)?;
        if sub_pic {
            r.skip(4)?;
        }
        r.skip(5 + 5 + 5)?;
    }
    for _ in 0..=max_sub_layers_minus1 {
        let fixed_general = r.read_flag()?;
        let fixed_within_cvs = if !fixed_general { r.read_flag()? } else { true };
        let mut low_delay = false;
        if fixed_within_cvs {
            ue_max(r, "elemental_duration_in_tc_minus1", 2047)?;
        } else {
            low_delay = r.read_flag()?;
        }
        let mut cpb_cnt = 1;
        if !low_delay {
            cpb_cnt = ue_max(r, "cpb_cnt_minus1", 31)? + 1;
        }
        if nal_hrd {
            sub_layer_hrd(r, cpb_cnt, sub_pic)?;
        }
        if vcl_hrd {
            sub_layer_hrd(r, cpb_cnt, sub_pic)?;
        }
    }
    Ok(())
}

#[derive(Debug, Default)]
struct Vui {
    full_range: Option<bool>,
    colour: Option<ColourDescription>,
    timing: Option<VuiTiming>,
}

fn vui_parameters(r: &mut BitReader<'_>, max_sub_layers_minus1: u32) -> Result<Vui, SpsError> {
    let mut vui = Vui::default();
    if r.read_flag()? {
        let aspect_ratio_idc = r.read_bits(8)?;
        if aspect_ratio_idc == 255 {
            r.skip(32)?;
        }
    }
    if r.read_flag()? {
        r.read_flag()?;
    }
    if r.read_flag()? {
        let _video_format = r.read_bits(3)?;
        vui.full_range = Some(r.read_flag()?);
        if r.read_flag()? {
            vui.colour = Some(ColourDescription {
                colour_primaries: r.read_bits(8)? as u8,
                transfer_characteristics: r.read_bits(8)? as u8,
                matrix_coeffs: r.read_bits(8)? as u8,
            });
        }
    }
    if r.read_flag()? {
        ue_max(r, "chroma_sample_loc_type_top_field", 5)?;
        ue_max(r, "chroma_sample_loc_type_bottom_field", 5)?;
    }
    // neutral_chroma_indication, field_seq, frame_field_info_present
    r.skip(3)?;
    if r.read_flag()? {
        for _ in 0..4 {
            r.read_ue()?;
        }
    }
    if r.read_flag()? {
        let num_units_in_tick = r.read_u32(32)?;
        let time_scale = r.read_u32(32)?;
        if num_units_in_tick == 0 {
            return Err(SpsError::OutOfRange { name: "vui_num_units_in_tick", value: 0 });
        }
        if time_scale == 0 {
            return Err(SpsError::OutOfRange { name: "vui_time_scale", value: 0 });
        }
        vui.timing = Some(VuiTiming { num_units_in_tick, time_scale });
        if r.read_flag()? {
            r.read_ue()?;
        }
        if r.read_flag()? {
            hrd_parameters(r, max_sub_layers_minus1)?;
        }
    }
    if r.read_flag()? {
        r.skip(3)?;
        ue_max(r, "min_spatial_segmentation_idc", 4095)?;
        ue_max(r, "max_bytes_per_pic_denom", 16)?;
        ue_max(r, "max_bits_per_min_cu_denom", 16)?;
        ue_max(r, "log2_max_mv_length_horizontal", 15)?;
        ue_max(r, "log2_max_mv_length_vertical", 15)?;
    }
    Ok(vui)
}

/// Decodes an SPS NAL unit.
pub fn parse_sps(unit: &NalUnit) -> Result<SpsInfo, SpsError> {
    if unit.nal_type != NAL_SPS {
        return Err(SpsError::NotSps(unit.nal_type));
    }
    parse_sps_rbsp(&unit.payload)
}

/// Decodes an SPS from its RBSP (the bytes after the 2-byte NAL header).
pub fn parse_sps_rbsp(rbsp: &[u8]) -> Result<SpsInfo, SpsError> {
    let mut r = BitReader::new(rbsp);
    let _vps_id = r.read_bits(4)?;
    let max_sub_layers_minus1 = r.read_u32(3)?;
    if max_sub_layers_minus1 > 6 {
        return Err(SpsError::OutOfRange {
            name: "sps_max_sub_layers_minus1",
            value: max_sub_layers_minus1 as u64,
        });
    }
    let _temporal_id_nesting = r.read_flag()?;
    let (profile_idc, level_idc) = profile_tier_level(&mut r, max_sub_layers_minus1)?;
    let sps_id = ue_max(&mut r, "sps_seq_parameter_set_id", 15)?;
    let chroma_idc = ue_max(&mut r, "chroma_format_idc", 3)?;
    let chroma_format = ChromaFormat::from_idc(chroma_idc).expect("range checked");
    if chroma_format == ChromaFormat::Yuv444 {
        let _separate_colour_plane = r.read_flag()?;
    }
    let coded_width = r.read_ue()?;
    let coded_height = r.read_ue()?;
    if coded_width == 0 {
        return Err(SpsError::OutOfRange { name: "pic_width_in_luma_samples", value: 0 });
    }
    if coded_height == 0 {
        return Err(SpsError::OutOfRange { name: "pic_height_in_luma_samples", value: 0 });
    }
    let mut window = ConformanceWindow::default();
    if r.read_flag()? {
        window = ConformanceWindow {
            left: r.read_ue()?,
            right: r.read_ue()?,
            top: r.read_ue()?,
            bottom: r.read_ue()?,
        };
    }
    let (sub_w, sub_h) = chroma_format.subsampling();
    let crop_w = sub_w as u64 * (window.left as u64 + window.right as u64);
    let crop_h = sub_h as u64 * (window.top as u64 + window.bottom as u64);
    if crop_w >= coded_width as u64 || crop_h >= coded_height as u64 {
        return Err(SpsError::Malformed("conformance window exceeds picture"));
    }
    let width_luma = coded_width - crop_w as u32;
    let height_luma = coded_height - crop_h as u32;

    let bit_depth_luma = ue_max(&mut r, "bit_depth_luma_minus8", 8)? as u8 + 8;
    let bit_depth_chroma = ue_max(&mut r, "bit_depth_chroma_minus8", 8)? as u8 + 8;
    let log2_max_poc_lsb = ue_max(&mut r, "log2_max_pic_order_cnt_lsb_minus4", 12)? + 4;
    let ordering_info_all = r.read_flag()?;
    let first = if ordering_info_all { 0 } else { max_sub_layers_minus1 };
    for _ in first..=max_sub_layers_minus1 {
        r.read_ue()?;
        r.read_ue()?;
        r.read_ue()?;
    }
    let log2_min_cb_minus3 = ue_max(&mut r, "log2_min_luma_coding_block_size_minus3", 3)?;
    let log2_diff_cb = ue_max(&mut r, "log2_diff_max_min_luma_coding_block_size", 3)?;
    if log2_min_cb_minus3 + log2_diff_cb > 3 {
        return Err(SpsError::Malformed("CTB size above 64"));
    }
    ue_max(&mut r, "log2_min_luma_transform_block_size_minus2", 3)?;
    ue_max(&mut r, "log2_diff_max_min_luma_transform_block_size", 3)?;
    ue_max(&mut r, "max_transform_hierarchy_depth_inter", 4)?;
    ue_max(&mut r, "max_transform_hierarchy_depth_intra", 4)?;
    if r.read_flag()? && r.read_flag()? {
        scaling_list_data(&mut r)?;
    }
    // amp_enabled_flag, sample_adaptive_offset_enabled_flag
    r.skip(2)?;
    if r.read_flag()? {
        r.skip(4 + 4)?;
        r.read_ue()?;
        r.read_ue()?;
        r.read_flag()?;
    }
    let num_st_rps = ue_max(&mut r, "num_short_term_ref_pic_sets", 64)? as usize;
    let mut sets = Vec::with_capacity(num_st_rps);
    for i in 0..num_st_rps {
        let set = st_ref_pic_set(&mut r, i, &sets)?;
        sets.push(set);
    }
    if r.read_flag()? {
        let num_lt = ue_max(&mut r, "num_long_term_ref_pics_sps", 32)?;
        for _ in 0..num_lt {
            r.skip(log2_max_poc_lsb as usize + 1)?;
        }
    }
    // sps_temporal_mvp_enabled_flag, strong_intra_smoothing_enabled_flag
    r.skip(2)?;
    let vui = if r.read_flag()? {
        vui_parameters(&mut r, max_sub_layers_minus1)?
    } else {
        Vui::default()
    };
    let extension = r.read_flag()?;
    if !extension && !r.at_trailing_bits() {
        return Err(SpsError::Malformed("unexpected data before rbsp_trailing_bits"));
    }
    let frame_rate = vui
        .timing
        .map(|t| t.time_scale as f64 / t.num_units_in_tick as f64);
    Ok(SpsInfo {
        sps_id,
        profile_idc,
        level_idc,
        max_sub_layers: max_sub_layers_minus1 as u8 + 1,
        chroma_format,
        coded_width,
        coded_height,
        conformance_window: window,
        width_luma,
        height_luma,
        bit_depth_luma,
        bit_depth_chroma,
        full_range: vui.full_range,
        colour: vui.colour,
        timing: vui.timing,
        frame_rate,
    })
}
