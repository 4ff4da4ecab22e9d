//! Multi-resolution 2D deformable registration driven by local normalized
//! cross-correlation, demons-style (additive updates, Gaussian-regularized
//! field, no inverse consistency).

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{bilinear, box_mean_2d, downsample2, gaussian_blur_2d};
use crate::scalar::Scalar;
use crate::volume::{EnFaceSlice, Volume3D};

/// Per-pixel displacement: `u` along x, `v` along y, in pixels.
///
/// Warping samples the moving image at `(y + v, x + u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField2D<T> {
    pub u: Array2<T>,
    pub v: Array2<T>,
}

impl<T: Scalar> DeformationField2D<T> {
    pub fn zeros(dims: (usize, usize)) -> Self {
        Self { u: Array2::zeros(dims), v: Array2::zeros(dims) }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.u.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }

    pub fn magnitude(&self, y: usize, x: usize) -> f64 {
        self.u[[y, x]].as_f64().hypot(self.v[[y, x]].as_f64())
    }

    pub fn max_magnitude(&self) -> f64 {
        let (h, w) = self.dims();
        (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).map(|(y, x)| self.magnitude(y, x)).fold(0.0, f64::max)
    }

    pub fn rms(&self) -> f64 {
        let n = self.u.len() as f64;
        let ss: f64 = self.u.iter().zip(self.v.iter()).map(|(a, b)| a.as_f64().powi(2) + b.as_f64().powi(2)).sum();
        (ss / n).sqrt()
    }

    /// Two-channel volume (`z = 0` holds `u`, `z = 1` holds `v`).
    pub fn to_volume(&self) -> Result<Volume3D<T>> {
        let (h, w) = self.dims();
        let mut data = Array3::zeros((2, h, w));
        data.index_axis_mut(Axis(0), 0).assign(&self.u);
        data.index_axis_mut(Axis(0), 1).assign(&self.v);
        Volume3D::new(data)
    }

    pub fn from_volume(vol: &Volume3D<T>) -> Result<Self> {
        if vol.dims()[0] != 2 {
            return Err(Error::Dims(format!("field volume needs 2 channels, got {}", vol.dims()[0])));
        }
        Ok(Self { u: vol.slice_view(0).to_owned(), v: vol.slice_view(1).to_owned() })
    }

    fn clamp_magnitude(&mut self, cap: f64) {
        ndarray::Zip::from(&mut self.u).and(&mut self.v).for_each(|u, v| {
            let m = u.as_f64().hypot(v.as_f64());
            if m > cap {
                let s = T::lit(cap / m);
                *u *= s;
                *v *= s;
            }
        });
    }

    /// Resamples to `dims`, scaling displacements by the size ratio.
    fn upsample_to(&self, dims: (usize, usize)) -> Self {
        let (h, w) = self.dims();
        let sy = h as f64 / dims.0 as f64;
        let sx = w as f64 / dims.1 as f64;
        let resample = |a: &Array2<T>, gain: f64| {
            Array2::from_shape_fn(dims, |(y, x)| bilinear(a, y as f64 * sy, x as f64 * sx) * T::lit(gain))
        };
        Self { u: resample(&self.u, 1.0 / sx), v: resample(&self.v, 1.0 / sy) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegParams {
    pub levels: usize,
    pub iters_per_level: usize,
    /// Gaussian σ (pixels) regularizing the displacement field.
    pub smoothing_sigma: f64,
    /// Largest per-iteration update (pixels at the current level).
    pub step: f64,
    /// Side length of the local correlation window (pixels, odd).
    pub metric_window: usize,
    pub max_disp: f64,
    /// Weight of the `mean(|d|²) / max_disp²` penalty subtracted from the
    /// similarity; keeps the field from chasing decorrelated speckle. It is
    /// scaled by `1 − local_ncc` of the unregistered pair, so well-correlated
    /// inputs are barely penalized.
    pub displacement_penalty: f64,
}

impl Default for RegParams {
    fn default() -> Self {
        Self { levels: 3, iters_per_level: 30, smoothing_sigma: 1.5, step: 0.5, metric_window: 5, max_disp: 8.0, displacement_penalty: 0.5 }
    }
}

impl RegParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Param("levels must be >= 1".into()));
        }
        if self.smoothing_sigma < 0.0 || !self.smoothing_sigma.is_finite() {
            return Err(Error::Param("smoothing_sigma must be >= 0".into()));
        }
        if self.max_disp <= 0.0 {
            return Err(Error::Param("max_disp must be > 0".into()));
        }
        if !(self.displacement_penalty >= 0.0) {
            return Err(Error::Param("displacement_penalty must be >= 0".into()));
        }
        if self.step <= 0.0 {
            return Err(Error::Param("step must be > 0".into()));
        }
        Ok(())
    }

    fn radius(&self) -> usize {
        (self.metric_window / 2).max(1)
    }
}

/// Window statistics for local correlation between `fixed` and `moving`.
struct LocalStats {
    mean_f: Array2<f64>,
    mean_m: Array2<f64>,
    var_f: Array2<f64>,
    var_m: Array2<f64>,
    cov: Array2<f64>,
}

impl LocalStats {
    fn new(fixed: &Array2<f64>, moving: &Array2<f64>, r: usize) -> Self {
        let mean_f = box_mean_2d(fixed, r);
        let mean_m = box_mean_2d(moving, r);
        let ff = box_mean_2d(&(fixed * fixed), r);
        let mm = box_mean_2d(&(moving * moving), r);
        let fm = box_mean_2d(&(fixed * moving), r);
        let var_f = (&ff - &(&mean_f * &mean_f)).mapv(|v| v.max(0.0));
        let var_m = (&mm - &(&mean_m * &mean_m)).mapv(|v| v.max(0.0));
        let cov = &fm - &(&mean_f * &mean_m);
        Self { mean_f, mean_m, var_f, var_m, cov }
    }
}

const VAR_FLOOR: f64 = 1e-6;

/// Mean over pixels of the squared local correlation coefficient.
pub fn local_ncc<T: Scalar>(fixed: &Array2<T>, moving: &Array2<T>, radius: usize) -> f64 {
    let f = fixed.mapv(|v| v.as_f64());
    let m = moving.mapv(|v| v.as_f64());
    local_ncc_f64(&f, &m, radius)
}

fn local_ncc_f64(f: &Array2<f64>, m: &Array2<f64>, radius: usize) -> f64 {
    let st = LocalStats::new(f, m, radius);
    let mut acc = 0.0;
    ndarray::Zip::from(&st.cov).and(&st.var_f).and(&st.var_m).for_each(|&c, &a, &b| {
        if a > VAR_FLOOR && b > VAR_FLOOR {
            acc += c * c / (a * b);
        }
    });
    acc / f.len() as f64
}

/// Pearson correlation of two images.
pub fn global_ncc<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let mb = b.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x.as_f64() - ma, y.as_f64() - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

fn warp_array<T: Scalar>(img: &Array2<T>, field: &DeformationField2D<T>) -> Array2<T> {
    Array2::from_shape_fn(img.dim(), |(y, x)| {
        bilinear(img, y as f64 + field.v[[y, x]].as_f64(), x as f64 + field.u[[y, x]].as_f64())
    })
}

/// Resamples `slice` at `(y + v, x + u)` with bilinear interpolation and
/// edge clamping.
pub fn warp<T: Scalar>(slice: &EnFaceSlice<T>, field: &DeformationField2D<T>) -> Result<EnFaceSlice<T>> {
    if slice.dims() != field.dims() {
        return Err(Error::Dims(format!("slice {:?} vs field {:?}", slice.dims(), field.dims())));
    }
    if !field.is_finite() {
        return Err(Error::Param("deformation field contains non-finite values".into()));
    }
    Ok(EnFaceSlice::new(warp_array(&slice.data, field), slice.z_index))
}

fn central_gradient(a: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = a.dim();
    let gy = Array2::from_shape_fn((h, w), |(y, x)| {
        let (lo, hi) = (y.saturating_sub(1), (y + 1).min(h - 1));
        if hi == lo { 0.0 } else { (a[[hi, x]] - a[[lo, x]]) / (hi - lo) as f64 }
    });
    let gx = Array2::from_shape_fn((h, w), |(y, x)| {
        let (lo, hi) = (x.saturating_sub(1), (x + 1).min(w - 1));
        if hi == lo { 0.0 } else { (a[[y, hi]] - a[[y, lo]]) / (hi - lo) as f64 }
    });
    (gy, gx)
}

/// Optimizes one pyramid level in place; returns the best objective seen.
fn optimize_level(
    fixed: &Array2<f64>,
    moving: &Array2<f64>,
    field: &mut DeformationField2D<f64>,
    params: &RegParams,
    cap: f64,
    penalty: f64,
) -> f64 {
    let r = params.radius();
    let lambda = penalty / (cap * cap);
    let objective = |f: &DeformationField2D<f64>| {
        let pen = f.u.iter().zip(f.v.iter()).map(|(a, b)| a * a + b * b).sum::<f64>() / f.u.len() as f64;
        local_ncc_f64(fixed, &warp_array(moving, f), r) - lambda * pen
    };
    let mut best = field.clone();
    let mut best_score = objective(field);
    let mut step = params.step;
    for _ in 0..params.iters_per_level {
        let warped = warp_array(moving, field);
        let st = LocalStats::new(fixed, &warped, r);
        let (gy, gx) = central_gradient(&warped);
        let mut fu = Array2::<f64>::zeros(fixed.dim());
        let mut fv = Array2::<f64>::zeros(fixed.dim());
        for ((y, x), &c) in st.cov.indexed_iter() {
            let (a, b) = (st.var_f[[y, x]], st.var_m[[y, x]]);
            if a <= VAR_FLOOR || b <= VAR_FLOOR {
                continue;
            }
            let df = fixed[[y, x]] - st.mean_f[[y, x]];
            let dm = warped[[y, x]] - st.mean_m[[y, x]];
            // d(cov²/(var_f·var_m))/dJ at this pixel
            let dcc = 2.0 * c / (a * b) * (df - c / b * dm);
            fu[[y, x]] = dcc * gx[[y, x]];
            fv[[y, x]] = dcc * gy[[y, x]];
        }
        fu.scaled_add(-2.0 * lambda, &field.u);
        fv.scaled_add(-2.0 * lambda, &field.v);
        let fu = gaussian_blur_2d(&fu, params.smoothing_sigma);
        let fv = gaussian_blur_2d(&fv, params.smoothing_sigma);
        let peak = fu.iter().zip(fv.iter()).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
        if peak < 1e-12 {
            break;
        }
        let scale = step / peak;
        let mut candidate = DeformationField2D { u: &field.u + &(fu * scale), v: &field.v + &(fv * scale) };
        candidate.u = gaussian_blur_2d(&candidate.u, params.smoothing_sigma * 0.5);
        candidate.v = gaussian_blur_2d(&candidate.v, params.smoothing_sigma * 0.5);
        candidate.clamp_magnitude(cap);
        let score = objective(&candidate);
        if score >= best_score {
            best_score = score;
            best = candidate.clone();
            *field = candidate;
        } else {
            step *= 0.5;
            *field = best.clone();
            if step < 1e-3 {
                break;
            }
        }
    }
    *field = best;
    best_score
}

/// Registers `moving` onto `fixed`; the result never scores below the
/// identity field under [`local_ncc`].
pub fn register_2d<T: Scalar>(
    moving: &EnFaceSlice<T>,
    fixed: &EnFaceSlice<T>,
    params: &RegParams,
) -> Result<DeformationField2D<T>> {
    params.validate()?;
    if moving.dims() != fixed.dims() {
        return Err(Error::Dims(format!("moving {:?} vs fixed {:?}", moving.dims(), fixed.dims())));
    }
    let dims = fixed.dims();
    let f0 = fixed.data.mapv(|v| v.as_f64());
    let m0 = moving.data.mapv(|v| v.as_f64());
    let (lo, hi) = f0.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi - lo <= 0.0 {
        log::warn!("register_2d: constant fixed image, returning identity");
        return Ok(DeformationField2D::zeros(dims));
    }

    let mut fixed_pyr = vec![f0];
    let mut moving_pyr = vec![m0];
    for _ in 1..params.levels {
        let (h, w) = fixed_pyr.last().unwrap().dim();
        if h < 16 || w < 16 {
            break;
        }
        fixed_pyr.push(downsample2(fixed_pyr.last().unwrap()));
        moving_pyr.push(downsample2(moving_pyr.last().unwrap()));
    }

    let r = params.radius();
    let identity = local_ncc_f64(&fixed_pyr[0], &moving_pyr[0], r);
    let penalty = params.displacement_penalty * (1.0 - identity).max(0.0);
    let coarsest = fixed_pyr.len() - 1;
    let mut field = DeformationField2D::<f64>::zeros(fixed_pyr[coarsest].dim());
    for level in (0..=coarsest).rev() {
        let (f, m) = (&fixed_pyr[level], &moving_pyr[level]);
        if field.dims() != f.dim() {
            field = field.upsample_to(f.dim());
        }
        let cap = params.max_disp / (1usize << level) as f64;
        field.clamp_magnitude(cap);
        optimize_level(f, m, &mut field, params, cap, penalty);
    }

    let result = local_ncc_f64(&fixed_pyr[0], &warp_array(&moving_pyr[0], &field), r);
    if result < identity {
        field = DeformationField2D::zeros(dims);
    }
    Ok(DeformationField2D { u: field.u.mapv(T::lit), v: field.v.mapv(T::lit) })
}
