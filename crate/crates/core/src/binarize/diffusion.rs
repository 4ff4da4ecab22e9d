//! Explicit Perona-Malik diffusion with the rational conductance
//! `g(s) = 1 / (1 + (s/K)²)`.

use ndarray::{Array2, Array3, ArrayViewMut2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::Volume3D;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffusionMode {
    /// Each en-face slice independently (4-neighbor stencil).
    #[default]
    Slice2d,
    /// Whole volume (6-neighbor stencil).
    Volume3d,
}

impl DiffusionMode {
    fn dims(self) -> usize {
        match self {
            DiffusionMode::Slice2d => 2,
            DiffusionMode::Volume3d => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionParams {
    /// Edge-stopping contrast, in intensity units.
    #[serde(rename = "K")]
    pub k: f64,
    pub lambda: f64,
    pub iters: usize,
    pub mode: DiffusionMode,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        Self { k: 10.0, lambda: 0.2, iters: 10, mode: DiffusionMode::Slice2d }
    }
}

impl DiffusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::Param(format!("K must be > 0, got {}", self.k)));
        }
        let bound = 1.0 / (2.0 * self.mode.dims() as f64);
        if !(self.lambda > 0.0 && self.lambda <= bound) {
            return Err(Error::Param(format!(
                "lambda {} outside (0, {bound}] for {}D diffusion",
                self.lambda,
                self.mode.dims()
            )));
        }
        Ok(())
    }
}

#[inline]
fn flux(diff: f64, inv_k2: f64) -> f64 {
    diff / (1.0 + diff * diff * inv_k2)
}

/// Adds `lambda ·` the flux across every face along `axis` to `delta`.
/// The same value leaves one voxel and enters the other, so sums are
/// conserved up to rounding.
fn accumulate_axis<D: ndarray::Dimension + ndarray::RemoveAxis>(
    cur: &ndarray::Array<f64, D>,
    delta: &mut ndarray::Array<f64, D>,
    axis: Axis,
    inv_k2: f64,
) {
    let n = cur.len_of(axis);
    for i in 0..n.saturating_sub(1) {
        let a = cur.index_axis(axis, i);
        let b = cur.index_axis(axis, i + 1);
        let f = Zip::from(&a).and(&b).map_collect(|&a, &b| flux(b - a, inv_k2));
        delta.index_axis_mut(axis, i).zip_mut_with(&f, |d, &f| *d += f);
        delta.index_axis_mut(axis, i + 1).zip_mut_with(&f, |d, &f| *d -= f);
    }
}

fn diffuse_2d(mut slice: ArrayViewMut2<f64>, p: &DiffusionParams) {
    let inv_k2 = 1.0 / (p.k * p.k);
    let mut cur = slice.to_owned();
    for _ in 0..p.iters {
        let mut delta = Array2::<f64>::zeros(cur.raw_dim());
        accumulate_axis(&cur, &mut delta, Axis(0), inv_k2);
        accumulate_axis(&cur, &mut delta, Axis(1), inv_k2);
        cur.scaled_add(p.lambda, &delta);
    }
    slice.assign(&cur);
}

fn diffuse_3d(cur: &mut Array3<f64>, p: &DiffusionParams) {
    let inv_k2 = 1.0 / (p.k * p.k);
    for _ in 0..p.iters {
        let mut delta = Array3::<f64>::zeros(cur.raw_dim());
        for a in 0..3 {
            accumulate_axis(cur, &mut delta, Axis(a), inv_k2);
        }
        cur.scaled_add(p.lambda, &delta);
    }
}

/// Zero-flux (Neumann) explicit diffusion; `iters = 0` is the identity.
pub fn perona_malik<T: Scalar>(vol: &Volume3D<T>, p: &DiffusionParams) -> Result<Volume3D<T>> {
    p.validate()?;
    if p.iters == 0 {
        return Ok(vol.clone());
    }
    let mut work = vol.data().mapv(|v| v.as_f64());
    match p.mode {
        DiffusionMode::Slice2d => {
            Zip::from(work.axis_iter_mut(Axis(0))).par_for_each(|s| diffuse_2d(s, p));
        }
        DiffusionMode::Volume3d => diffuse_3d(&mut work, p),
    }
    vol.with_data(work.mapv(T::lit))
}
