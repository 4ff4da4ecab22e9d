//! Hessian-based (Frangi) and flux-based (OOF) tubularity filters.

mod eigen;
mod oof;

pub use eigen::{eig_sym3, eigenvalues_sym3, Mat3, SymEigen3};
pub use oof::{fibonacci_sphere, oof, OOF_SPHERE_POINTS};

use ndarray::{Array3, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{convolve_axis, gaussian_kernels};
use crate::scalar::Scalar;
use crate::volume::Volume3D;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VesselnessParams {
    pub sigmas: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// Structureness constant as a fraction of the per-scale maximum
    /// Frobenius norm of the Hessian.
    pub c: f64,
    pub oof_radii: Vec<f64>,
    /// Pre-smoothing σ of the gradient field sampled by OOF.
    pub oof_sigma: f64,
    pub bright_on_dark: bool,
}

impl Default for VesselnessParams {
    fn default() -> Self {
        Self {
            sigmas: vec![1.0, 2.0, 3.0, 4.0],
            alpha: 0.5,
            beta: 0.5,
            c: 0.5,
            oof_radii: vec![1.0, 2.0, 3.0],
            oof_sigma: 1.0,
            bright_on_dark: true,
        }
    }
}

fn check_scales(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Param(format!("{name} is empty")));
    }
    if v.iter().any(|s| !(s.is_finite() && *s > 0.0)) || v.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Param(format!("{name} must be positive and sorted: {v:?}")));
    }
    Ok(())
}

impl VesselnessParams {
    pub fn validate(&self) -> Result<()> {
        check_scales("sigmas", &self.sigmas)?;
        check_scales("oof_radii", &self.oof_radii)?;
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("c", self.c)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Param(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.oof_sigma.is_finite() && self.oof_sigma >= 0.0) {
            return Err(Error::Param(format!("oof_sigma must be >= 0, got {}", self.oof_sigma)));
        }
        Ok(())
    }
}

/// Six unique second derivatives at one scale, σ²-normalized.
#[derive(Clone, Debug)]
pub struct HessianField<T> {
    pub zz: Array3<T>,
    pub yy: Array3<T>,
    pub xx: Array3<T>,
    pub zy: Array3<T>,
    pub zx: Array3<T>,
    pub yx: Array3<T>,
    pub scale: f64,
}

impl<T: Scalar> HessianField<T> {
    /// Full matrix at a voxel, axes ordered (z, y, x).
    pub fn at(&self, z: usize, y: usize, x: usize) -> Mat3 {
        let g = |a: &Array3<T>| a[[z, y, x]].as_f64();
        let (zy, zx, yx) = (g(&self.zy), g(&self.zx), g(&self.yx));
        [[g(&self.zz), zy, zx], [zy, g(&self.yy), yx], [zx, yx, g(&self.xx)]]
    }

    pub fn dims(&self) -> [usize; 3] {
        let (z, y, x) = self.xx.dim();
        [z, y, x]
    }
}

pub const MIN_SIGMA: f64 = 0.5;

/// Derivative along each axis in `orders` (0, 1 or 2), with the derivative
/// passes applied before the smoothing passes.
pub(crate) fn gaussian_derivative<T: Scalar>(data: &Array3<T>, sigma: f64, orders: [u8; 3]) -> Array3<T> {
    let (smooth, d1, d2) = gaussian_kernels::<T>(sigma);
    let mut axes: Vec<usize> = (0..3).collect();
    axes.sort_by_key(|&a| std::cmp::Reverse(orders[a]));
    let mut out = data.clone();
    for a in axes {
        let k = match orders[a] {
            0 => &smooth,
            1 => &d1,
            _ => &d2,
        };
        out = convolve_axis(&out, Axis(a), k);
    }
    out
}

pub fn hessian_3d<T: Scalar>(vol: &Volume3D<T>, sigma: f64) -> Result<HessianField<T>> {
    if !(sigma >= MIN_SIGMA) {
        return Err(Error::Param(format!("sigma {sigma} below {MIN_SIGMA}")));
    }
    let data = vol.data();
    let norm = T::lit(sigma * sigma);
    let d = |orders| gaussian_derivative(data, sigma, orders).mapv(|v| v * norm);
    let ([zz, yy, xx], [zy, zx, yx]) = rayon::join(
        || [[2, 0, 0], [0, 2, 0], [0, 0, 2]].map(d),
        || [[1, 1, 0], [1, 0, 1], [0, 1, 1]].map(d),
    );
    Ok(HessianField { zz, yy, xx, zy, zx, yx, scale: sigma })
}

/// The three Frangi ratios of one decomposition.
#[derive(Clone, Debug)]
pub struct FrangiTerms {
    /// `|λ2| / |λ3|`: plate versus line.
    pub ra: Array3<f64>,
    /// `|λ1| / sqrt(|λ2 λ3|)`: blob versus line.
    pub rb: Array3<f64>,
    /// Frobenius norm `sqrt(Σλ²)`.
    pub s: Array3<f64>,
    /// Voxels whose eigenvalue signs rule out the expected vessel polarity.
    pub gated: Array3<bool>,
}

pub fn frangi_terms<T: Scalar>(h: &HessianField<T>, bright_on_dark: bool) -> FrangiTerms {
    let [nz, ny, nx] = h.dims();
    let mut ra = Array3::zeros((nz, ny, nx));
    let mut rb = Array3::zeros((nz, ny, nx));
    let mut s = Array3::zeros((nz, ny, nx));
    let mut gated = Array3::from_elem((nz, ny, nx), false);
    Zip::indexed(&mut ra).and(&mut rb).and(&mut s).and(&mut gated).par_for_each(|(z, y, x), ra, rb, s, g| {
        let [l1, l2, l3] = eig_sym3(&h.at(z, y, x)).values;
        *ra = if l3 == 0.0 { 0.0 } else { l2.abs() / l3.abs() };
        let den = (l2 * l3).abs().sqrt();
        *rb = if den == 0.0 { 0.0 } else { l1.abs() / den };
        *s = (l1 * l1 + l2 * l2 + l3 * l3).sqrt();
        *g = if bright_on_dark { l2 > 0.0 || l3 > 0.0 } else { l2 < 0.0 || l3 < 0.0 };
    });
    FrangiTerms { ra, rb, s, gated }
}

fn frangi_scale(terms: &FrangiTerms, p: &VesselnessParams) -> Array3<f64> {
    let c = p.c * terms.s.iter().cloned().fold(0.0, f64::max);
    let (a2, b2, c2) = (2.0 * p.alpha * p.alpha, 2.0 * p.beta * p.beta, 2.0 * c * c);
    Zip::from(&terms.ra).and(&terms.rb).and(&terms.s).and(&terms.gated).par_map_collect(|&ra, &rb, &s, &g| {
        if g || c2 == 0.0 {
            0.0
        } else {
            (1.0 - (-ra * ra / a2).exp()) * (-rb * rb / b2).exp() * (1.0 - (-s * s / c2).exp())
        }
    })
}

/// Multiscale Frangi vesselness, maximum over `params.sigmas`.
pub fn frangi<T: Scalar>(vol: &Volume3D<T>, params: &VesselnessParams) -> Result<Volume3D<T>> {
    params.validate()?;
    let per_scale = params
        .sigmas
        .par_iter()
        .map(|&s| Ok(frangi_scale(&frangi_terms(&hessian_3d(vol, s)?, params.bright_on_dark), params)))
        .collect::<Result<Vec<_>>>()?;
    let mut best = Array3::<f64>::zeros(vol.data().raw_dim());
    for v in per_scale {
        Zip::from(&mut best).and(&v).for_each(|b, &x| *b = b.max(x));
    }
    vol.with_data(best.mapv(T::lit))
}
