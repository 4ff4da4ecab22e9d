//! Stride-1, zero-padded 2D convolution via im2col + GEMM.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use octa_core::Scalar;

/// Rows are `(c, ky, kx)` taps, columns output pixels in raster order.
pub(super) fn im2col<T: Scalar>(x: ArrayView3<T>, k: usize, pad: usize) -> Array2<T> {
    let (c, h, w) = x.dim();
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let mut cols = Array2::zeros((c * k * k, h * w));
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let mut r = cols.row_mut(row);
                let dst = r.as_slice_mut().expect("row-major");
                let dy = ky as isize - pad as isize;
                let dx = kx as isize - pad as isize;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let sx0 = (x0 as isize + dx) as usize;
                    dst[y * w + x0..y * w + x1].copy_from_slice(&srow[sx0..sx0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
pub(super) fn col2im<T: Scalar>(cols: ArrayView2<T>, c: usize, h: usize, w: usize, k: usize, pad: usize) -> Array3<T> {
    let mut out = Array3::zeros((c, h, w));
    let dst = out.as_slice_mut().expect("fresh array");
    let cols = cols.as_standard_layout();
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let r = cols.row(row);
                let src = r.as_slice().expect("row-major");
                let dy = ky as isize - pad as isize;
                let dx = kx as isize - pad as isize;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let base = ci * h * w + sy as usize * w;
                    for xx in x0..x1 {
                        dst[base + (xx as isize + dx) as usize] += src[y * w + xx];
                    }
                }
            }
        }
    }
    out
}

pub(super) struct ConvOut<T> {
    pub value: Array4<T>,
    pub cols: Vec<Array2<T>>,
}

pub(super) fn forward<T: Scalar>(x: &Array4<T>, w: &Array4<T>, b: Option<&Array4<T>>, keep_cols: bool) -> ConvOut<T> {
    let (n, _, h, wd) = x.dim();
    let (cout, cin, k, _) = w.dim();
    let pad = k / 2;
    let wm = w.view().into_shape_with_order((cout, cin * k * k)).expect("weight is contiguous");
    let mut value = Array4::zeros((n, cout, h, wd));
    let mut cols_kept = Vec::with_capacity(if keep_cols { n } else { 0 });
    for i in 0..n {
        let cols = im2col(x.index_axis(Axis(0), i), k, pad);
        let mut out = value.index_axis_mut(Axis(0), i);
        let mut om = out.view_mut().into_shape_with_order((cout, h * wd)).expect("fresh array");
        general_mat_mul(T::one(), &wm, &cols, T::zero(), &mut om);
        if let Some(b) = b {
            for (co, mut row) in om.outer_iter_mut().enumerate() {
                let bias = b[[0, co, 0, 0]];
                row.mapv_inplace(|v| v + bias);
            }
        }
        if keep_cols {
            cols_kept.push(cols);
        }
    }
    ConvOut { value, cols: cols_kept }
}

pub(super) struct ConvGrads<T> {
    pub dx: Option<Array4<T>>,
    pub dw: Option<Array4<T>>,
    pub db: Option<Array4<T>>,
}

pub(super) fn backward<T: Scalar>(
    g: &Array4<T>,
    x_dims: (usize, usize, usize, usize),
    w: &Array4<T>,
    cols: &[Array2<T>],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (n, cin, h, wd) = x_dims;
    let (cout, _, k, _) = w.dim();
    let pad = k / 2;
    let wm = w.view().into_shape_with_order((cout, cin * k * k)).expect("weight is contiguous");
    let mut dx = need.0.then(|| Array4::zeros(x_dims));
    let mut dwm = need.1.then(|| Array2::zeros((cout, cin * k * k)));
    for i in 0..n {
        let gi = g.index_axis(Axis(0), i);
        let gi = gi.as_standard_layout();
        let gm = gi.view().into_shape_with_order((cout, h * wd)).expect("standard layout");
        if let Some(dwm) = dwm.as_mut() {
            general_mat_mul(T::one(), &gm, &cols[i].t(), T::one(), dwm);
        }
        if let Some(dx) = dx.as_mut() {
            let dcols = wm.t().dot(&gm);
            let img = col2im(dcols.view(), cin, h, wd, k, pad);
            dx.slice_mut(s![i, .., .., ..]).assign(&img);
        }
    }
    let db = need.2.then(|| {
        let mut db = Array4::zeros((1, cout, 1, 1));
        for co in 0..cout {
            db[[0, co, 0, 0]] = g.index_axis(Axis(1), co).sum();
        }
        db
    });
    ConvGrads { dx, dw: dwm.map(|m| m.into_shape_with_order((cout, cin, k, k)).expect("contiguous")), db }
}
