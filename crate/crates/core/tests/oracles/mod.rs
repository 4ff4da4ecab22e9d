//! Brute-force reference implementations shared by integration tests and
//! the acceptance run.
#![allow(dead_code)]

pub mod registration;

use num_bigint::BigInt;

/// Exhaustive Otsu over bin boundaries: returns the winning boundary value.
///
/// Bin membership is recounted from the sorted raw values at each edge and
/// the between-class variance `N0·N1·(μ0 − μ1)²` (bin index as value) is
/// compared as exact rationals, keeping the first maximum.
pub fn otsu_exhaustive(values: &[f64], bins: usize) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (*sorted.first()?, *sorted.last()?);
    if hi <= lo {
        return None;
    }
    let w = (hi - lo) / bins as f64;
    let edge = |i: usize| if i == bins { hi } else { lo + i as f64 * w };
    // voxels at or below each interior edge
    let below: Vec<usize> = (0..=bins).map(|i| if i == bins { sorted.len() } else { sorted.partition_point(|&v| v <= edge(i)) }).collect();
    let counts: Vec<i64> = (0..bins).map(|i| (below[i + 1] - if i == 0 { 0 } else { below[i] }) as i64).collect();
    let mut best: Option<(f64, BigInt, BigInt)> = None;
    for t in 0..bins - 1 {
        let (n0, s0): (i64, i64) = (0..=t).fold((0, 0), |(n, s), i| (n + counts[i], s + i as i64 * counts[i]));
        let (n1, s1): (i64, i64) = (t + 1..bins).fold((0, 0), |(n, s), i| (n + counts[i], s + i as i64 * counts[i]));
        if n0 == 0 || n1 == 0 {
            continue;
        }
        // N0 N1 (S0/N0 − S1/N1)² = (N1 S0 − N0 S1)² / (N0 N1)
        let d = BigInt::from(n1) * s0 - BigInt::from(n0) * s1;
        let num = &d * &d;
        let den = BigInt::from(n0) * n1;
        if best.as_ref().is_none_or(|(_, bn, bd)| &num * bd > bn * &den) {
            best = Some((edge(t + 1), num, den));
        }
    }
    best.map(|b| b.0)
}

fn sse(part: &[f64]) -> f64 {
    if part.is_empty() {
        return 0.0;
    }
    let m = part.iter().sum::<f64>() / part.len() as f64;
    part.iter().map(|v| (v - m).powi(2)).sum()
}

/// Within-cluster SSE of a two-way partition given as a predicate.
pub fn partition_sse(values: &[f64], high: impl Fn(f64) -> bool) -> f64 {
    let (a, b): (Vec<f64>, Vec<f64>) = values.iter().partition(|&&v| !high(v));
    sse(&a) + sse(&b)
}

/// Minimum SSE over every split between distinct sorted values.
pub fn two_means_exhaustive(values: &[f64]) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    (1..sorted.len())
        .filter(|&k| sorted[k] > sorted[k - 1])
        .map(|k| sse(&sorted[..k]) + sse(&sorted[k..]))
        .min_by(f64::total_cmp)
}
