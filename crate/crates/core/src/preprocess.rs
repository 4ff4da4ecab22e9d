//! Motion-artifact stripe detection and repair by histogram matching.

use std::collections::BTreeSet;

use ndarray::{s, Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::Volume3D;

pub const DEFAULT_Z_THRESH: f64 = 2.0;
pub const DEFAULT_MATCH_BINS: usize = 256;

/// Per en-face row anomaly scores and the rows flagged as artifacts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArtifactReport {
    /// `(z, y)` rows, sorted.
    pub flagged: Vec<(usize, usize)>,
    /// `scores[z][y]`: z-score of row `y`'s mean within slice `z`.
    pub scores: Vec<Vec<f64>>,
}

/// Flags rows whose mean intensity z-score (over the rows of the same
/// en-face slice) exceeds `z_thresh`.
pub fn detect_artifacts<T: Scalar>(vol: &Volume3D<T>, z_thresh: f64) -> Result<ArtifactReport> {
    let [nz, ny, _] = vol.dims();
    if ny < 3 {
        return Err(Error::Dims(format!("need at least 3 rows per slice, got {ny}")));
    }
    let mut report = ArtifactReport::default();
    for z in 0..nz {
        let means: Array1<f64> = vol
            .slice_view(z)
            .map(|v| v.as_f64())
            .mean_axis(Axis(1))
            .expect("non-empty rows");
        let mu = means.mean().unwrap_or(0.0);
        let sd = means.mapv(|m| (m - mu).powi(2)).mean().unwrap_or(0.0).sqrt();
        if sd <= 1e-12 * mu.abs().max(1.0) {
            log::warn!("slice {z}: zero-variance row means, no artifact rows flagged");
            report.scores.push(vec![0.0; ny]);
            continue;
        }
        let scores: Vec<f64> = means.iter().map(|m| (m - mu) / sd).collect();
        for (y, &sc) in scores.iter().enumerate() {
            if sc > z_thresh {
                report.flagged.push((z, y));
            }
        }
        report.scores.push(scores);
    }
    Ok(report)
}

struct Cdf {
    width: f64,
    counts: Vec<f64>,
    cum: Vec<f64>,
}

impl Cdf {
    fn new(values: &[f64], bins: usize) -> Self {
        let width = 255.0 / bins as f64;
        let mut counts = vec![0.0; bins];
        for &v in values {
            counts[Self::bin(v, width, bins)] += 1.0;
        }
        let n = values.len() as f64;
        counts.iter_mut().for_each(|c| *c /= n);
        let mut cum = Vec::with_capacity(bins + 1);
        cum.push(0.0);
        for c in &counts {
            cum.push(cum.last().unwrap() + c);
        }
        Self { width, counts, cum }
    }

    #[inline]
    fn bin(v: f64, width: f64, bins: usize) -> usize {
        ((v.clamp(0.0, 255.0) / width).floor() as usize).min(bins - 1)
    }

    fn inverse(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let last = self.counts.iter().rposition(|&c| c > 0.0).unwrap_or(0);
        for (j, &c) in self.counts.iter().enumerate() {
            if c > 0.0 && (self.cum[j + 1] >= p || j == last) {
                let frac = ((p - self.cum[j]) / c).clamp(0.0, 1.0);
                return (j as f64 + frac) * self.width;
            }
        }
        0.0
    }
}

/// Maps `src` through `F_ref⁻¹ ∘ F_src`, with `F_src` the rank of each voxel
/// (mid-bin, ties in index order) and `F_ref` piecewise-linear over `bins`
/// equal bins of `[0, 255]`. Monotone non-decreasing in the source value.
pub fn histogram_match<T: Scalar>(src: &[T], reference: &[T], bins: usize) -> Result<Vec<T>> {
    if src.is_empty() || reference.is_empty() {
        return Err(Error::Param("histogram_match needs non-empty inputs".into()));
    }
    if bins == 0 {
        return Err(Error::Param("bins must be >= 1".into()));
    }
    let r: Vec<f64> = reference.iter().map(|v| v.as_f64()).collect();
    let (lo, hi) = r.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if lo == hi {
        return Ok(vec![T::lit(lo); src.len()]);
    }
    let f_ref = Cdf::new(&r, bins);
    // exact specification: rank, ties broken by position, so a saturated
    // plateau spreads over its quantile band instead of collapsing to one value
    let mut order: Vec<usize> = (0..src.len()).collect();
    order.sort_by(|&a, &b| src[a].as_f64().total_cmp(&src[b].as_f64()));
    let n = src.len() as f64;
    let mut out = vec![T::zero(); src.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = T::lit(f_ref.inverse((rank as f64 + 0.5) / n));
    }
    Ok(out)
}

/// Nearest row not in `flagged`, ties resolved toward the smaller index.
fn nearest_clean_row(y: usize, ny: usize, flagged: &BTreeSet<usize>) -> Option<usize> {
    (1..ny).find_map(|d| {
        let below = y.checked_sub(d).filter(|c| !flagged.contains(c));
        let above = Some(y + d).filter(|&c| c < ny && !flagged.contains(&c));
        below.or(above)
    })
}

/// Replaces every flagged row by its histogram matched to the nearest
/// unflagged row of the same slice. Unflagged voxels are untouched.
pub fn remove_motion_artifacts<T: Scalar>(vol: &Volume3D<T>, report: &ArtifactReport) -> Result<Volume3D<T>> {
    let [nz, ny, _] = vol.dims();
    if let Some(&(z, y)) = report.flagged.iter().find(|(z, y)| *z >= nz || *y >= ny) {
        return Err(Error::OutOfRange(format!("flagged row ({z}, {y}) outside {nz}x{ny}")));
    }
    let mut data = vol.data().clone();
    for z in 0..nz {
        let flagged: BTreeSet<usize> = report.flagged.iter().filter(|(fz, _)| *fz == z).map(|&(_, y)| y).collect();
        if flagged.is_empty() {
            continue;
        }
        if flagged.len() == ny {
            log::warn!("slice {z}: every row flagged, left unchanged");
            continue;
        }
        for &y in &flagged {
            let clean = nearest_clean_row(y, ny, &flagged).expect("some row is clean");
            let src = vol.data().slice(s![z, y, ..]).to_vec();
            let reference = vol.data().slice(s![z, clean, ..]).to_vec();
            let matched = histogram_match(&src, &reference, DEFAULT_MATCH_BINS)?;
            for (dst, v) in data.slice_mut(s![z, y, ..]).iter_mut().zip(matched) {
                *dst = v;
            }
        }
    }
    vol.with_data(data)
}
