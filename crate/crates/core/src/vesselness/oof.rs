//! Optimally oriented flux by direct quadrature over sphere samples.

use ndarray::{Array3, Zip};
use rayon::prelude::*;

use super::eigen::eigenvalues_sym3;
use super::{gaussian_derivative, VesselnessParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::Volume3D;

pub const OOF_SPHERE_POINTS: usize = 110;

/// Near-uniform unit vectors on the sphere (golden-angle spiral), as
/// (z, y, x) triples.
pub fn fibonacci_sphere(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            let theta = golden * i as f64;
            [z, rho * theta.sin(), rho * theta.cos()]
        })
        .collect()
}

fn trilinear(a: &Array3<f64>, p: [f64; 3]) -> f64 {
    let (nz, ny, nx) = a.dim();
    let dims = [nz, ny, nx];
    let mut lo = [0usize; 3];
    let mut frac = [0.0; 3];
    for k in 0..3 {
        let c = p[k].clamp(0.0, (dims[k] - 1) as f64);
        let f = c.floor();
        lo[k] = (f as usize).min(dims[k].saturating_sub(2));
        frac[k] = c - lo[k] as f64;
    }
    let at = |dz: usize, dy: usize, dx: usize| {
        a[[(lo[0] + dz).min(nz - 1), (lo[1] + dy).min(ny - 1), (lo[2] + dx).min(nx - 1)]]
    };
    let mut acc = 0.0;
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - frac[0] } else { frac[0] };
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - frac[2] } else { frac[2] };
                let w = wz * wy * wx;
                if w != 0.0 {
                    acc += w * at(dz, dy, dx);
                }
            }
        }
    }
    acc
}

/// `max(0, −(λ1 + λ2) / 2) / r` over radii, where λ1 ≤ λ2 are the two
/// smallest eigenvalues of the symmetrized flux matrix of the smoothed
/// gradient through the sphere of radius `r`.
pub fn oof<T: Scalar>(vol: &Volume3D<T>, params: &VesselnessParams) -> Result<Volume3D<T>> {
    params.validate()?;
    let dims = vol.dims();
    let half = *dims.iter().min().unwrap() as f64 / 2.0;
    if let Some(r) = params.oof_radii.iter().find(|&&r| r > half) {
        return Err(Error::Param(format!("OOF radius {r} exceeds half the smallest dimension ({half})")));
    }
    let data = vol.data().mapv(|v| v.as_f64());
    let sigma = params.oof_sigma.max(super::MIN_SIGMA);
    let grad = [[1, 0, 0], [0, 1, 0], [0, 0, 1]].map(|o| gaussian_derivative(&data, sigma, o));
    let sphere = fibonacci_sphere(OOF_SPHERE_POINTS);
    let sign = if params.bright_on_dark { 1.0 } else { -1.0 };

    let mut best = Array3::<f64>::zeros((dims[0], dims[1], dims[2]));
    for &r in &params.oof_radii {
        let area = 4.0 * std::f64::consts::PI * r * r / sphere.len() as f64;
        let resp: Vec<f64> = (0..best.len())
            .into_par_iter()
            .map(|flat| {
                let x = flat % dims[2];
                let y = (flat / dims[2]) % dims[1];
                let z = flat / (dims[1] * dims[2]);
                let mut q = [[0.0f64; 3]; 3];
                for n in &sphere {
                    let p = [z as f64 + r * n[0], y as f64 + r * n[1], x as f64 + r * n[2]];
                    let g = [trilinear(&grad[0], p), trilinear(&grad[1], p), trilinear(&grad[2], p)];
                    for i in 0..3 {
                        for j in 0..3 {
                            q[i][j] += g[i] * n[j];
                        }
                    }
                }
                let sym: [[f64; 3]; 3] =
                    std::array::from_fn(|i| std::array::from_fn(|j| sign * area * 0.5 * (q[i][j] + q[j][i])));
                let [_, l2, l1] = eigenvalues_sym3(&sym);
                (-(l1 + l2) / 2.0).max(0.0) / r
            })
            .collect();
        let resp = Array3::from_shape_vec(best.raw_dim(), resp).expect("one response per voxel");
        Zip::from(&mut best).and(&resp).for_each(|b, &v| *b = b.max(v));
    }
    vol.with_data(best.mapv(T::lit))
}
