//! Two-cluster 1D k-means (Lloyd) on voxel intensities.

use crate::error::{Error, Result};

pub const MAX_ITERS: usize = 100;
pub const TOLERANCE: f64 = 1e-4;

/// Converged centres `(low, high)` and the split value between them;
/// values strictly above `split` belong to the high cluster.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoMeans {
    pub low: f64,
    pub high: f64,
    pub split: f64,
    pub iterations: usize,
    /// False when the Lloyd fixed point was a local optimum and the exact
    /// sorted-split scan replaced it.
    pub lloyd_optimal: bool,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, f) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + f * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Lloyd iterations from the 25th/75th percentiles, then a check against
/// every split of the sorted sample (1D two-means is exactly solvable, and
/// Lloyd can stall in a local optimum). Ties at the midpoint go to the low
/// cluster.
pub fn two_means(values: &[f64]) -> Result<TwoMeans> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (first, last) = match (sorted.first(), sorted.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        _ => return Err(Error::DegenerateHistogram),
    };
    let mut prefix = Vec::with_capacity(sorted.len() + 1);
    prefix.push(0.0);
    for v in &sorted {
        prefix.push(prefix.last().unwrap() + v);
    }
    let (mut lo, mut hi) = (percentile(&sorted, 0.25), percentile(&sorted, 0.75));
    if lo == hi {
        // heavy mass at one value: start from the extremes instead
        (lo, hi) = (first, last);
    }
    let n = sorted.len();
    let mut iterations = 0;
    loop {
        let split = 0.5 * (lo + hi);
        let k = sorted.partition_point(|&v| v <= split);
        let new_lo = if k > 0 { prefix[k] / k as f64 } else { lo };
        let new_hi = if k < n { (prefix[n] - prefix[k]) / (n - k) as f64 } else { hi };
        let shift = (new_lo - lo).abs().max((new_hi - hi).abs());
        (lo, hi) = (new_lo, new_hi);
        iterations += 1;
        if shift < TOLERANCE || iterations >= MAX_ITERS {
            break;
        }
    }

    // Minimizing the within-cluster SSE ⇔ maximizing S0²/n0 + S1²/n1.
    let gain = |k: usize| {
        let (s0, s1) = (prefix[k], prefix[n] - prefix[k]);
        s0 * s0 / k as f64 + s1 * s1 / (n - k) as f64
    };
    let lloyd_k = sorted.partition_point(|&v| v <= 0.5 * (lo + hi)).clamp(1, n - 1);
    let (best_k, best_gain) = (1..n)
        .filter(|&k| sorted[k] > sorted[k - 1])
        .map(|k| (k, gain(k)))
        .fold((lloyd_k, gain(lloyd_k)), |acc, c| if c.1 > acc.1 { c } else { acc });
    let lloyd_optimal = best_k == lloyd_k || best_gain <= gain(lloyd_k) * (1.0 + 1e-12);
    if !lloyd_optimal {
        lo = prefix[best_k] / best_k as f64;
        hi = (prefix[n] - prefix[best_k]) / (n - best_k) as f64;
    }
    // keep the split strictly between the two parts
    let k = if lloyd_optimal { lloyd_k } else { best_k };
    let split = (0.5 * (lo + hi)).clamp(sorted[k - 1], sorted[k]);
    let split = if split >= sorted[k] { sorted[k - 1] } else { split };
    Ok(TwoMeans { low: lo, high: hi, split, iterations, lloyd_optimal })
}
