//! Rate-quality plot data and crossover points between resolutions.

use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RqPoint {
    pub resolution: u64,
    pub bitrate: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossover {
    pub resolution_low: u64,
    pub resolution_high: u64,
    pub bitrate: f64,
    pub score: f64,
}

/// Points sorted by resolution then bitrate, with scores of equal
/// (resolution, bitrate) averaged.
pub fn rq_curves(points: &[RqPoint]) -> BTreeMap<u64, Vec<(f64, f64)>> {
    let mut out: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for p in points {
        out.entry(p.resolution).or_default().push((p.bitrate, p.score));
    }
    for curve in out.values_mut() {
        curve.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut merged: Vec<(f64, f64, usize)> = Vec::new();
        for &(b, s) in curve.iter() {
            match merged.last_mut() {
                Some(last) if last.0 == b => {
                    last.1 += s;
                    last.2 += 1;
                }
                _ => merged.push((b, s, 1)),
            }
        }
        *curve = merged.into_iter().map(|(b, s, n)| (b, s / n as f64)).collect();
    }
    out
}

/// Linear interpolation on a bitrate-sorted curve; `None` outside its range.
pub fn interpolate(curve: &[(f64, f64)], bitrate: f64) -> Option<f64> {
    let first = curve.first()?;
    let last = curve.last()?;
    if bitrate < first.0 || bitrate > last.0 {
        return None;
    }
    let k = curve.partition_point(|p| p.0 < bitrate);
    if curve[k].0 == bitrate {
        return Some(curve[k].1);
    }
    let (b0, s0) = curve[k - 1];
    let (b1, s1) = curve[k];
    Some(s0 + (s1 - s0) * (bitrate - b0) / (b1 - b0))
}

/// Bitrates where the piecewise-linear curves of two resolutions intersect,
/// searched over their common bitrate range.
pub fn crossovers(curves: &BTreeMap<u64, Vec<(f64, f64)>>) -> Vec<Crossover> {
    let keys: Vec<u64> = curves.keys().copied().collect();
    let mut out = Vec::new();
    for (i, &lo) in keys.iter().enumerate() {
        for &hi in &keys[i + 1..] {
            let (a, b) = (&curves[&lo], &curves[&hi]);
            if a.len() < 2 || b.len() < 2 {
                continue;
            }
            let start = a[0].0.max(b[0].0);
            let end = a[a.len() - 1].0.min(b[b.len() - 1].0);
            if start >= end {
                continue;
            }
            let mut knots: Vec<f64> =
                a.iter().chain(b.iter()).map(|p| p.0).filter(|&x| x >= start && x <= end).collect();
            knots.push(start);
            knots.push(end);
            knots.sort_by(f64::total_cmp);
            knots.dedup();
            let diff = |x: f64| interpolate(a, x).unwrap() - interpolate(b, x).unwrap();
            for w in knots.windows(2) {
                let (x0, x1) = (w[0], w[1]);
                let (d0, d1) = (diff(x0), diff(x1));
                let hit = if d0 == 0.0 {
                    Some(x0)
                } else if d0.signum() != d1.signum() && d1 != 0.0 {
                    Some(x0 + (x1 - x0) * d0 / (d0 - d1))
                } else if d1 == 0.0 && x1 == end {
                    Some(x1)
                } else {
                    None
                };
                if let Some(x) = hit {
                    if out.last().is_none_or(|c: &Crossover| !(c.resolution_low == lo && c.resolution_high == hi && c.bitrate == x)) {
                        out.push(Crossover { resolution_low: lo, resolution_high: hi, bitrate: x, score: interpolate(a, x).unwrap() });
                    }
                }
            }
        }
    }
    out
}
