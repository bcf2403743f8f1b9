//! Rank and linear agreement metrics and the repeated k-fold harness.

use crate::dataset::LabeledDataset;
use crate::forest::mix64;
use crate::model::{train_eqm, ModelError, TrainOptions};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub const MIN_SAMPLES: usize = 3;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {pred} predictions, {truth} targets")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("need at least {MIN_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("need folds >= 2 and rows >= folds (folds {folds}, rows {rows})")]
    TooFewRows { folds: usize, rows: usize },
    #[error("reps must be at least 1")]
    NoRepetitions,
    #[error("model: {0}")]
    Model(#[from] ModelError),
}

/// Metrics of one prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub srocc: f64,
    pub plcc: f64,
    pub krocc: f64,
    pub rmse: f64,
    pub n: usize,
    /// Some correlation had a zero-variance input and was reported as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub srocc: f64,
    pub plcc: f64,
    pub krocc: f64,
    pub rmse: f64,
    pub n: usize,
    pub degenerate: bool,
    /// One entry per cross-validation repetition; empty for a plain
    /// evaluation.
    pub repetitions: Vec<Metrics>,
}

impl From<Metrics> for EvalReport {
    fn from(m: Metrics) -> Self {
        EvalReport {
            srocc: m.srocc,
            plcc: m.plcc,
            krocc: m.krocc,
            rmse: m.rmse,
            n: m.n,
            degenerate: m.degenerate,
            repetitions: Vec::new(),
        }
    }
}

impl EvalReport {
    pub fn from_repetitions(reps: Vec<Metrics>) -> Self {
        let k = reps.len() as f64;
        let avg = |f: fn(&Metrics) -> f64| reps.iter().map(f).sum::<f64>() / k;
        EvalReport {
            srocc: avg(|m| m.srocc),
            plcc: avg(|m| m.plcc),
            krocc: avg(|m| m.krocc),
            rmse: avg(|m| m.rmse),
            n: reps.first().map_or(0, |m| m.n),
            degenerate: reps.iter().any(|m| m.degenerate),
            repetitions: reps,
        }
    }
}

/// Average ranks starting at 1; tied values share the mean of their ranks.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Pearson correlation, or `None` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn tie_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as u64;
        total += t * (t - 1) / 2;
        i = j;
    }
    total
}

/// Merge sort that returns the number of inversions (strictly out of order
/// pairs).
fn sort_count_swaps(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_count_swaps(&mut v[..mid], buf) + sort_count_swaps(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall tau-b in O(n log n), or `None` when either side is all ties.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let n1 = tie_pairs(&xs);
    let mut joint = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && xs[j] == xs[i] && ys[j] == ys[i] {
            j += 1;
        }
        let t = (j - i) as u64;
        joint += t * (t - 1) / 2;
        i = j;
    }
    let swaps = sort_count_swaps(&mut ys, &mut Vec::with_capacity(n));
    let n2 = tie_pairs(&ys);
    let denom = ((n0 - n1) as f64) * ((n0 - n2) as f64);
    if denom == 0.0 {
        return None;
    }
    let s = n0 as f64 - n1 as f64 - n2 as f64 + joint as f64 - 2.0 * swaps as f64;
    Some((s / denom.sqrt()).clamp(-1.0, 1.0))
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    (s / pred.len() as f64).sqrt()
}

pub fn correlations(pred: &[f64], truth: &[f64]) -> Result<Metrics, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    if pred.len() < MIN_SAMPLES {
        return Err(EvalError::TooFewSamples(pred.len()));
    }
    if let Some(i) = pred.iter().zip(truth).position(|(p, t)| !p.is_finite() || !t.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    let srocc = pearson(&average_ranks(pred), &average_ranks(truth));
    let plcc = pearson(pred, truth);
    let krocc = kendall_tau_b(pred, truth);
    Ok(Metrics {
        srocc: srocc.unwrap_or(0.0),
        plcc: plcc.unwrap_or(0.0),
        krocc: krocc.unwrap_or(0.0),
        rmse: rmse(pred, truth),
        n: pred.len(),
        degenerate: srocc.is_none() || plcc.is_none() || krocc.is_none(),
    })
}

/// Seed of repetition `rep`.
pub fn repetition_seed(seed: u64, rep: usize) -> u64 {
    mix64(seed ^ mix64(0x5EED_0000_0000 ^ rep as u64))
}

/// Row indices of each fold for one repetition: a seeded shuffle cut into
/// `folds` contiguous runs whose sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64, rep: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(repetition_seed(seed, rep)));
    (0..folds).map(|f| order[f * n / folds..(f + 1) * n / folds].to_vec()).collect()
}

/// Out-of-fold predictions for one repetition, in row order.
pub fn out_of_fold_predictions(
    data: &LabeledDataset,
    opts: &TrainOptions,
    folds: usize,
    seed: u64,
    rep: usize,
) -> Result<Vec<f64>, EvalError> {
    let n = data.len();
    let mut pred = vec![f64::NAN; n];
    let assignment = fold_assignment(n, folds, seed, rep);
    for (f, held) in assignment.iter().enumerate() {
        let mut in_fold = vec![false; n];
        for &i in held {
            in_fold[i] = true;
        }
        let train_idx: Vec<usize> = (0..n).filter(|&i| !in_fold[i]).collect();
        let mut o = opts.clone();
        let salt = mix64(repetition_seed(seed, rep) ^ f as u64);
        o.base.seed ^= salt;
        o.residual.seed ^= salt;
        let model = train_eqm(&data.subset(&train_idx), &o)?;
        for &i in held {
            pred[i] = model.predict_row(&data.columns, &data.rows[i].features)?;
        }
    }
    Ok(pred)
}

/// Repeated k-fold cross-validation. Metrics are computed on the pooled
/// held-out predictions of each repetition, then averaged.
pub fn cross_validate(
    data: &LabeledDataset,
    opts: &TrainOptions,
    folds: usize,
    reps: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if folds < 2 || data.len() < folds {
        return Err(EvalError::TooFewRows { folds, rows: data.len() });
    }
    if reps == 0 {
        return Err(EvalError::NoRepetitions);
    }
    let truth = data.mos();
    let per_rep = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let pred = out_of_fold_predictions(data, opts, folds, seed, rep)?;
            correlations(&pred, &truth)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_repetitions(per_rep))
}
