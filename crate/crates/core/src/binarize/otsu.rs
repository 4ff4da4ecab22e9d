//! Global Otsu threshold with exact (integer) variance comparison.

use num_bigint::BigUint;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_BINS: usize = 256;

/// Equal-width histogram over `[lo, hi]` with left-open bins
/// `(e_i, e_{i+1}]` (the first also holds `lo`).
#[derive(Clone, Debug)]
pub struct Histogram {
    pub counts: Vec<u64>,
    /// `bins + 1` edges; `edges[0] = lo`, `edges[bins] = hi`.
    pub edges: Vec<f64>,
}

impl Histogram {
    pub fn new(values: impl Iterator<Item = f64> + Clone, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Param(format!("need at least 2 bins, got {bins}")));
        }
        let (lo, hi) = values.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::DegenerateHistogram);
        }
        let width = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
        edges[bins] = hi;
        let mut counts = vec![0u64; bins];
        for v in values {
            counts[Self::bin_of(&edges, v)] += 1;
        }
        Ok(Self { counts, edges })
    }

    /// Index of the bin holding `v`: the number of interior edges below it.
    fn bin_of(edges: &[f64], v: f64) -> usize {
        let interior = &edges[1..edges.len() - 1];
        interior.partition_point(|&e| e < v)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }
}

/// Index `t` of the last background bin maximizing the between-class
/// variance; ties resolve to the smallest `t`.
pub fn otsu_split(counts: &[u64]) -> Result<usize> {
    // With bin index as the value, σ_B² = (N·S0 − N0·S)² / (N² N0 N1);
    // compare (N·S0 − N0·S)² / (N0 N1) by cross-multiplication.
    let n: u128 = counts.iter().map(|&c| c as u128).sum();
    let s: u128 = counts.iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();
    let (mut n0, mut s0) = (0u128, 0u128);
    let mut best: Option<(usize, BigUint, BigUint)> = None;
    for (t, &c) in counts.iter().enumerate().take(counts.len() - 1) {
        n0 += c as u128;
        s0 += t as u128 * c as u128;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let (a, b) = (BigUint::from(n) * s0, BigUint::from(n0) * s);
        let diff = if a >= b { a - b } else { b - a };
        let num = &diff * &diff;
        let den = BigUint::from(n0) * n1;
        let better = match &best {
            None => true,
            Some((_, bn, bd)) => &num * bd > bn * &den,
        };
        if better {
            best = Some((t, num, den));
        }
    }
    best.map(|(t, ..)| t).ok_or(Error::DegenerateHistogram)
}

/// Otsu threshold over `bins` bins; foreground is `v > threshold`.
pub fn otsu_threshold<T: Scalar>(values: &[T], bins: usize) -> Result<T> {
    let hist = Histogram::new(values.iter().map(|v| v.as_f64()), bins)?;
    let t = otsu_split(&hist.counts)?;
    Ok(T::lit(hist.edges[t + 1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_deltas() {
        let vals: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.0 } else { 255.0 }).collect();
        let t = otsu_threshold(&vals, 256).unwrap();
        assert!((0.0..255.0).contains(&t));
        assert!(vals.iter().all(|&v| (v > t) == (v == 255.0)));
    }

    #[test]
    fn constant_is_degenerate() {
        assert!(matches!(otsu_threshold(&[3.0f32; 10], 256), Err(Error::DegenerateHistogram)));
    }

    #[test]
    fn ties_go_low() {
        // symmetric three-spike histogram: splits after bin 0 and after bin 1 tie
        assert_eq!(otsu_split(&[5, 0, 0, 5, 0, 0, 5]).unwrap(), 0);
    }

    #[test]
    fn bins_are_left_open() {
        let h = Histogram::new([0.0, 1.0, 2.0, 4.0].into_iter(), 4).unwrap();
        assert_eq!(h.edges, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(h.counts, vec![2, 1, 0, 1]);
    }
}
