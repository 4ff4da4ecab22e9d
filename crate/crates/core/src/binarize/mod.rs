//! Diffusion + Otsu + island removal, and the standalone threshold baselines.

mod diffusion;
mod islands;
mod kmeans;
mod otsu;

pub use diffusion::{perona_malik, DiffusionMode, DiffusionParams};
pub use islands::{label_components, remove_small_components, Connectivity};
pub use kmeans::{two_means, TwoMeans};
pub use otsu::{otsu_split, otsu_threshold, Histogram, DEFAULT_BINS};

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::volume::Volume3D;

/// Islands below this many voxels are dropped.
pub const DEFAULT_MIN_ISLAND: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub params: Value,
}

/// A `{0, 1}` volume plus the chain of stages that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    pub data: Array3<u8>,
    pub provenance: Vec<Stage>,
}

impl BinaryMask {
    pub fn new(data: Array3<u8>, stage: &str, params: Value) -> Self {
        debug_assert!(data.iter().all(|&v| v <= 1));
        Self { data, provenance: vec![Stage { name: stage.into(), params }] }
    }

    fn then(mut self, data: Array3<u8>, stage: &str, params: Value) -> Self {
        self.data = data;
        self.provenance.push(Stage { name: stage.into(), params });
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        let (z, y, x) = self.data.dim();
        [z, y, x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn to_volume<T: Scalar>(&self) -> Volume3D<T> {
        Volume3D::new(self.data.mapv(|v| T::lit(v as f64))).expect("mask is non-empty")
    }

    /// Thresholds a stored mask volume at 0.5.
    pub fn from_volume<T: Scalar>(vol: &Volume3D<T>, stage: &str) -> Self {
        Self::new(vol.data().mapv(|v| u8::from(v.as_f64() > 0.5)), stage, Value::Null)
    }
}

/// Global Otsu threshold and the mask `v > threshold`.
pub fn otsu<T: Scalar>(vol: &Volume3D<T>, bins: usize) -> Result<(T, BinaryMask)> {
    let values: Vec<T> = vol.data().iter().cloned().collect();
    let t = otsu_threshold(&values, bins)?;
    let data = vol.data().mapv(|v| u8::from(v > t));
    Ok((t, BinaryMask::new(data, "otsu", json!({ "bins": bins, "threshold": t.as_f64() }))))
}

/// Foreground = voxels in the higher-centre cluster of 1D two-means.
pub fn kmeans_binarize<T: Scalar>(vol: &Volume3D<T>) -> Result<BinaryMask> {
    let values: Vec<f64> = vol.data().iter().map(|v| v.as_f64()).collect();
    let m = two_means(&values)?;
    let data = vol.data().mapv(|v| u8::from(v.as_f64() > m.split));
    Ok(BinaryMask::new(
        data,
        "kmeans",
        json!({ "k": 2, "centers": [m.low, m.high], "iterations": m.iterations, "lloyd_optimal": m.lloyd_optimal }),
    ))
}

pub fn remove_islands(mask: &BinaryMask, min_size: usize, conn: Connectivity) -> BinaryMask {
    let data = remove_small_components(&mask.data, min_size, conn);
    mask.clone().then(data, "remove_islands", json!({ "min_size": min_size, "connectivity": conn.count() }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinarizeParams {
    pub diffusion: DiffusionParams,
    pub bins: usize,
    pub min_island: usize,
    pub connectivity: Connectivity,
}

impl Default for BinarizeParams {
    fn default() -> Self {
        Self {
            diffusion: DiffusionParams::default(),
            bins: DEFAULT_BINS,
            min_island: DEFAULT_MIN_ISLAND,
            connectivity: Connectivity::Full,
        }
    }
}

/// Perona-Malik → Otsu → island removal.
pub fn binarize_pipeline<T: Scalar>(vol: &Volume3D<T>, p: &BinarizeParams) -> Result<BinaryMask> {
    let smoothed = perona_malik(vol, &p.diffusion)?;
    let (_, mask) = otsu(&smoothed, p.bins)?;
    let mut mask = remove_islands(&mask, p.min_island, p.connectivity);
    mask.provenance.insert(0, Stage { name: "perona_malik".into(), params: serde_json::to_value(&p.diffusion)? });
    Ok(mask)
}
