//! Univariate anomaly scoring of sparse-part fibers and top-K labeling.
//!
//! Every mode-2 (week) fiber of the sparse tensor is scored on its own, which
//! amounts to fitting a univariate model per (hour, day, zone) cell.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GlossError, Result};
use crate::scalar::Real;
use crate::tensor::{lexicographic_key, DenseTensor, LabelTensor};

/// Mode whose fibers are scored (weeks).
pub const FIBER_MODE: usize = 2;
/// Neighbor count used by the local outlier factor.
pub const DEFAULT_LOF_NEIGHBORS: usize = 10;
/// Lower bound on the robust scale of a fiber.
pub const SCALE_FLOOR: f64 = 1e-12;
/// Added to mean reachability distances so duplicated points keep a finite density.
const REACH_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ScoreMethod {
    /// Elliptic envelope: squared robust z-score from the univariate minimum covariance determinant.
    Ee,
    /// Local outlier factor.
    Lof,
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMethod::Ee => "EE",
            ScoreMethod::Lof => "LOF",
        })
    }
}

impl FromStr for ScoreMethod {
    type Err = GlossError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EE" => Ok(ScoreMethod::Ee),
            "LOF" => Ok(ScoreMethod::Lof),
            other => Err(GlossError::InvalidParameter(format!("unknown scoring method `{other}`"))),
        }
    }
}

/// Per-entry anomaly scores; larger is more anomalous.
#[derive(Clone, Debug)]
pub struct ScoreTensor<T> {
    pub scores: DenseTensor<T>,
    pub method: ScoreMethod,
}

fn sorted_copy<T: Real>(fiber: &[T]) -> Vec<T> {
    let mut v = fiber.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    v
}

/// Robust location and scale of a sample from its shortest half.
///
/// The half-sample holds `floor(n / 2) + 1` consecutive order statistics;
/// among all such windows the one with the smallest range is kept (first one
/// on ties). Location is the midpoint of that window, scale its standard
/// deviation floored at [`SCALE_FLOOR`].
pub fn shortest_half<T: Real>(fiber: &[T]) -> (T, T) {
    let sorted = sorted_copy(fiber);
    let n = sorted.len();
    let h = n / 2 + 1;
    let mut best = 0;
    let mut best_range = sorted[h - 1] - sorted[0];
    for start in 1..=n - h {
        let range = sorted[start + h - 1] - sorted[start];
        if range < best_range {
            best = start;
            best_range = range;
        }
    }
    let window = &sorted[best..best + h];
    let location = (window[0] + window[h - 1]) * T::lit(0.5);
    let mean = window.iter().fold(T::zero(), |a, &b| a + b) / T::lit(h as f64);
    let var = window
        .iter()
        .fold(T::zero(), |a, &b| a + (b - mean) * (b - mean))
        / T::lit(h as f64);
    (location, var.sqrt().max(T::lit(SCALE_FLOOR)))
}

fn clamp_finite<T: Real>(v: T) -> T {
    if v.is_finite_value() {
        v
    } else {
        T::max_value().expect("bounded real type")
    }
}

/// Squared robust z-scores of one fiber.
pub fn ee_fiber_scores<T: Real>(fiber: &[T]) -> Result<Vec<T>> {
    if fiber.len() < 4 {
        return Err(GlossError::InvalidParameter(format!(
            "elliptic envelope needs at least 4 samples per fiber, got {}",
            fiber.len()
        )));
    }
    let (location, scale) = shortest_half(fiber);
    Ok(fiber
        .iter()
        .map(|&x| {
            let z = (x - location) / scale;
            clamp_finite(z * z)
        })
        .collect())
}

/// Local outlier factor of each point of a one-dimensional sample.
///
/// The k-distance neighborhood of a point contains every other point no
/// farther than its k-th nearest neighbor, so ties can make it larger than k.
pub fn lof_fiber_scores<T: Real>(fiber: &[T], k: usize) -> Result<Vec<T>> {
    let n = fiber.len();
    if k == 0 || k >= n {
        return Err(GlossError::InvalidParameter(format!(
            "local outlier factor needs 1 <= k < fiber length ({n}), got k = {k}"
        )));
    }
    let x: Vec<f64> = fiber.iter().map(|v| v.as_f64()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let pos_of = {
        let mut p = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            p[i] = pos;
        }
        p
    };

    // k-distance and neighborhoods by expanding outward in sorted order.
    let mut kdist = vec![0.0; n];
    let mut neighborhoods: Vec<Vec<usize>> = Vec::with_capacity(n);
    for p in 0..n {
        let pos = pos_of[p];
        let (mut lo, mut hi) = (pos, pos);
        let mut taken = 0;
        let mut last = 0.0f64;
        while taken < k {
            let left = (lo > 0).then(|| x[p] - x[order[lo - 1]]);
            let right = (hi + 1 < n).then(|| x[order[hi + 1]] - x[p]);
            match (left, right) {
                (Some(l), Some(r)) if l <= r => {
                    lo -= 1;
                    last = l;
                }
                (Some(l), None) => {
                    lo -= 1;
                    last = l;
                }
                (_, Some(r)) => {
                    hi += 1;
                    last = r;
                }
                (None, None) => unreachable!("k < n guarantees enough neighbors"),
            }
            taken += 1;
        }
        while lo > 0 && x[p] - x[order[lo - 1]] <= last {
            lo -= 1;
        }
        while hi + 1 < n && x[order[hi + 1]] - x[p] <= last {
            hi += 1;
        }
        kdist[p] = last;
        neighborhoods.push((lo..=hi).filter(|&q| q != pos).map(|q| order[q]).collect());
    }

    let lrd: Vec<f64> = (0..n)
        .map(|p| {
            let nb = &neighborhoods[p];
            let reach: f64 = nb.iter().map(|&o| kdist[o].max((x[p] - x[o]).abs())).sum();
            1.0 / (reach / nb.len() as f64 + REACH_EPS)
        })
        .collect();
    Ok((0..n)
        .map(|p| {
            let nb = &neighborhoods[p];
            let ratio: f64 = nb.iter().map(|&o| lrd[o]).sum::<f64>() / nb.len() as f64 / lrd[p];
            clamp_finite(T::lit(ratio))
        })
        .collect())
}

fn score_fiber<T: Real>(fiber: &[T], method: ScoreMethod, k: usize) -> Result<Vec<T>> {
    match method {
        ScoreMethod::Ee => ee_fiber_scores(fiber),
        ScoreMethod::Lof => lof_fiber_scores(fiber, k),
    }
}

/// Scores every fiber along `mode` independently and writes the scores back in place.
pub fn score_tensor_along<T: Real>(
    s: &DenseTensor<T>,
    mode: usize,
    method: ScoreMethod,
    k: usize,
) -> Result<ScoreTensor<T>> {
    let starts = s.fiber_starts(mode)?;
    let data = s.as_slice();
    let scored = starts
        .par_iter()
        .map(|&start| {
            let offsets = s.fiber_offsets(mode, start)?;
            let fiber: Vec<T> = offsets.iter().map(|&o| data[o]).collect();
            let scores = score_fiber(&fiber, method, k).map_err(|e| {
                let mut coords = s.index_of(start);
                coords[mode] = usize::MAX;
                GlossError::Fiber {
                    coords,
                    reason: e.to_string(),
                }
            })?;
            Ok((offsets, scores))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = s.zeros_like();
    let buf = out.as_mut_slice();
    for (offsets, scores) in scored {
        for (o, v) in offsets.into_iter().zip(scores) {
            buf[o] = v;
        }
    }
    Ok(ScoreTensor { scores: out, method })
}

/// Scores the week fibers of the sparse part. `k` is only used by LOF.
pub fn score_tensor<T: Real>(s: &DenseTensor<T>, method: ScoreMethod, k: usize) -> Result<ScoreTensor<T>> {
    if s.order() <= FIBER_MODE {
        return Err(GlossError::InvalidParameter(format!(
            "scoring uses mode-{FIBER_MODE} fibers; tensor has only {} modes",
            s.order()
        )));
    }
    score_tensor_along(s, FIBER_MODE, method, k)
}

/// Number of entries flagged at `k_percent`: `ceil(k_percent / 100 * total)`.
pub fn top_k_count(total: usize, k_percent: f64) -> Result<usize> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(GlossError::InvalidParameter(format!(
            "top-K percentage must lie in (0, 100], got {k_percent}"
        )));
    }
    let exact = k_percent * total as f64 / 100.0;
    let rounded = exact.round();
    let count = if (exact - rounded).abs() <= 1e-9 * exact.max(1.0) {
        rounded
    } else {
        exact.ceil()
    };
    Ok((count as usize).min(total))
}

/// Offsets sorted by descending score, ties by lexicographic index.
pub fn ranking<T: Real>(scores: &DenseTensor<T>) -> Vec<usize> {
    let shape = scores.shape();
    let data = scores.as_slice();
    let mut keyed: Vec<(usize, usize)> = (0..data.len()).map(|o| (o, lexicographic_key(shape, o))).collect();
    keyed.sort_by(|a, b| {
        data[b.0]
            .partial_cmp(&data[a.0])
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    keyed.into_iter().map(|(o, _)| o).collect()
}

/// Flags the `ceil(k_percent / 100 * total)` highest-scoring entries.
pub fn top_k_labels<T: Real>(st: &ScoreTensor<T>, k_percent: f64) -> Result<LabelTensor> {
    let total = st.scores.len();
    let count = top_k_count(total, k_percent)?;
    let mut mask = vec![false; total];
    for o in ranking(&st.scores).into_iter().take(count) {
        mask[o] = true;
    }
    LabelTensor::from_mask(st.scores.shape(), mask)
}
