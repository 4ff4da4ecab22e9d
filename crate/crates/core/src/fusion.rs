//! Local intensity fusion (LIF) of registered neighbor slices and the
//! contrast-enhanced variant (CE-LIF).

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::box_mean_2d;
use crate::registration::{register_2d, warp, RegParams};
use crate::scalar::Scalar;
use crate::volume::{EnFaceSlice, Volume3D};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionParams {
    /// Neighborhood radius in slices; `2R + 1` atlases including the target.
    #[serde(rename = "R")]
    pub radius: usize,
    pub patch_radius: usize,
    pub beta: f64,
    /// Error floor, on intensities rescaled to `[0, 1]`.
    pub eps: f64,
    pub contrast_factor: f64,
}

impl Default for FusionParams {
    // beta/eps differ from the textbook (2, 1e-3): with the target as its own
    // zero-error atlas those values leave the neighbors with ~0.3% weight.
    fn default() -> Self {
        Self { radius: 2, patch_radius: 2, beta: 1.0, eps: 0.1, contrast_factor: 1.5 }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Param(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Param(format!("eps must be > 0, got {}", self.eps)));
        }
        if !(self.contrast_factor >= 1.0 && self.contrast_factor.is_finite()) {
            return Err(Error::Param(format!("contrast_factor must be >= 1, got {}", self.contrast_factor)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FusionResult<T> {
    pub lif: EnFaceSlice<T>,
    pub ce_lif: EnFaceSlice<T>,
    /// One weight map per atlas, ordered like `offsets`.
    pub weights: Array3<f64>,
    /// Slice offsets (relative to the target) of the atlases actually used.
    pub offsets: Vec<isize>,
}

/// Inverse local-error weights, normalized to sum to one at every pixel.
pub fn local_weights<T: Scalar>(
    target: &EnFaceSlice<T>,
    atlases: &[EnFaceSlice<T>],
    params: &FusionParams,
) -> Result<Array3<f64>> {
    params.validate()?;
    if atlases.is_empty() {
        return Err(Error::Param("local_weights needs at least one atlas".into()));
    }
    let dims = target.dims();
    if let Some(a) = atlases.iter().find(|a| a.dims() != dims) {
        return Err(Error::Dims(format!("atlas {:?} vs target {:?}", a.dims(), dims)));
    }
    let t = target.data.mapv(|v| v.as_f64() / 255.0);
    let mut weights = Array3::zeros((atlases.len(), dims.0, dims.1));
    for (k, atlas) in atlases.iter().enumerate() {
        let sq = ndarray::Zip::from(&t).and(&atlas.data).map_collect(|&a, &b| (a - b.as_f64() / 255.0).powi(2));
        let err = box_mean_2d(&sq, params.patch_radius);
        weights.index_axis_mut(Axis(0), k).assign(&err.mapv(|e| (e + params.eps).powf(-params.beta)));
    }
    let total = weights.sum_axis(Axis(0));
    for mut w in weights.axis_iter_mut(Axis(0)) {
        w /= &total;
    }
    Ok(weights)
}

fn fuse<T: Scalar>(atlases: &[EnFaceSlice<T>], weights: &Array3<f64>) -> Array2<T> {
    let (_, h, w) = weights.dim();
    let mut acc = Array2::<f64>::zeros((h, w));
    for (k, atlas) in atlases.iter().enumerate() {
        ndarray::Zip::from(&mut acc)
            .and(&weights.index_axis(Axis(0), k))
            .and(&atlas.data)
            .for_each(|a, &wk, &v| *a += wk * v.as_f64());
    }
    // rounding can nudge a convex combination just past its extremes
    let (lo, hi) = atlases.iter().fold(
        (Array2::from_elem((h, w), f64::INFINITY), Array2::from_elem((h, w), f64::NEG_INFINITY)),
        |(mut lo, mut hi), a| {
            ndarray::Zip::from(&mut lo).and(&mut hi).and(&a.data).for_each(|l, u, &v| {
                *l = l.min(v.as_f64());
                *u = u.max(v.as_f64());
            });
            (lo, hi)
        },
    );
    ndarray::Zip::from(&acc).and(&lo).and(&hi).map_collect(|&a, &l, &u| T::lit(a.clamp(l, u)))
}

/// `clamp(mean + factor·(x − mean), 0, 255)` with the mean over the slice.
pub fn contrast_enhance<T: Scalar>(slice: &EnFaceSlice<T>, factor: f64) -> EnFaceSlice<T> {
    let mean = slice.mean();
    EnFaceSlice::new(
        slice.data.mapv(|v| T::lit((mean + factor * (v.as_f64() - mean)).clamp(0.0, 255.0))),
        slice.z_index,
    )
}

/// Fuses slice `z` with its registered neighbors; the target itself enters
/// unwarped as atlas `0`.
pub fn lif_slice<T: Scalar>(vol: &Volume3D<T>, z: usize, params: &FusionParams, reg: &RegParams) -> Result<FusionResult<T>> {
    params.validate()?;
    let nz = vol.dims()[0];
    if z >= nz {
        return Err(Error::OutOfRange(format!("slice {z} of {nz}")));
    }
    let target = vol.slice(z);
    let r = params.radius as isize;
    let offsets: Vec<isize> = std::iter::once(0)
        .chain((-r..=r).filter(|&d| d != 0 && (0..nz as isize).contains(&(z as isize + d))))
        .collect();
    let atlases = offsets
        .par_iter()
        .map(|&d| {
            if d == 0 {
                return Ok(target.clone());
            }
            let moving = vol.slice((z as isize + d) as usize);
            let field = register_2d(&moving, &target, reg)?;
            warp(&moving, &field)
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = local_weights(&target, &atlases, params)?;
    let lif = EnFaceSlice::new(fuse(&atlases, &weights), z);
    let ce_lif = contrast_enhance(&lif, params.contrast_factor);
    Ok(FusionResult { lif, ce_lif, weights, offsets })
}

/// LIF and CE-LIF for every slice of `vol`.
pub fn lif_volume<T: Scalar>(vol: &Volume3D<T>, params: &FusionParams, reg: &RegParams) -> Result<(Volume3D<T>, Volume3D<T>)> {
    let results = (0..vol.dims()[0])
        .into_par_iter()
        .map(|z| lif_slice(vol, z, params, reg))
        .collect::<Result<Vec<_>>>()?;
    let lif: Vec<_> = results.iter().map(|r| r.lif.data.clone()).collect();
    let ce: Vec<_> = results.into_iter().map(|r| r.ce_lif.data).collect();
    let wrap = |s: Vec<Array2<T>>| -> Result<Volume3D<T>> {
        Ok(Volume3D::from_slices(&s)?.with_spacing(vol.spacing()).with_intensity_range(vol.intensity_range()))
    };
    Ok((wrap(lif)?, wrap(ce)?))
}
