//! Known-displacement registration cases on textured phantom slices.

use ndarray::Array2;
use octa_core::filter::bilinear;
use octa_core::phantom::{generate_phantom, PhantomSpec};
use octa_core::registration::DeformationField2D;

pub fn textured_slice(seed: u64) -> Array2<f64> {
    let spec = PhantomSpec { dims: [6, 96, 96], n_trees: 12, seed, ..Default::default() };
    let (vol, _) = generate_phantom::<f64>(&spec).unwrap();
    vol.slice(3).data
}

/// `fixed` resampled at `p + (tx, ty)`: registering it back onto `fixed`
/// should find the displacement `(−tx, −ty)` everywhere.
pub fn translated(fixed: &Array2<f64>, tx: f64, ty: f64) -> Array2<f64> {
    Array2::from_shape_fn(fixed.dim(), |(y, x)| bilinear(fixed, y as f64 + ty, x as f64 + tx))
}

/// Smooth forward displacement `(u, v)` at `(y, x)` with the given amplitude.
pub fn sinusoid(amplitude: f64, phase: f64) -> impl Fn(f64, f64) -> (f64, f64) + Copy {
    move |y, x| (amplitude * (y / 15.0 + phase).sin(), amplitude * (x / 17.0 + 0.5 * phase).cos())
}

pub fn warped(fixed: &Array2<f64>, g: impl Fn(f64, f64) -> (f64, f64)) -> Array2<f64> {
    Array2::from_shape_fn(fixed.dim(), |(y, x)| {
        let (gu, gv) = g(y as f64, x as f64);
        bilinear(fixed, y as f64 + gv, x as f64 + gu)
    })
}

/// Solves `u = −g(p + u)` by fixed-point iteration, the exact inverse of a
/// smooth forward displacement `g` (contraction for |∇g| < 1).
pub fn inverse_of(g: impl Fn(f64, f64) -> (f64, f64), y: f64, x: f64) -> (f64, f64) {
    let (mut u, mut v) = (0.0, 0.0);
    for _ in 0..100 {
        let (gu, gv) = g(y + v, x + u);
        u = -gu;
        v = -gv;
    }
    (u, v)
}

/// Endpoint errors over the central 80% of the field.
pub fn central_epe(field: &DeformationField2D<f64>, truth: impl Fn(usize, usize) -> (f64, f64)) -> Vec<f64> {
    let (h, w) = field.dims();
    let (y0, y1, x0, x1) = (h / 10, h - h / 10, w / 10, w - w / 10);
    let mut out = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            let (tu, tv) = truth(y, x);
            out.push((field.u[[y, x]] - tu).hypot(field.v[[y, x]] - tv));
        }
    }
    out
}
