//! Separable Gaussian and box filtering shared by several stages.

use ndarray::{Array2, Array3, ArrayBase, Axis, Data, Dimension, RemoveAxis, Zip};

use crate::scalar::Scalar;

/// One-dimensional kernel in one of three symmetric forms.
///
/// Odd and even derivative kernels are stored as one-sided coefficients and
/// applied to sample differences, so adding a constant to the input leaves
/// the result bit-identical whenever the differences are exact.
#[derive(Clone, Debug)]
pub enum Kernel1D<T> {
    /// Full symmetric kernel `k[-r..=r]` stored as `k[0..=2r]`.
    Smooth(Vec<T>),
    /// `out[i] = Σ_{k≥1} c[k-1] · (x[i+k] − x[i−k])`.
    Odd(Vec<T>),
    /// `out[i] = Σ_{k≥1} c[k-1] · (x[i+k] + x[i−k] − 2x[i])`.
    EvenZeroSum(Vec<T>),
}

impl<T: Scalar> Kernel1D<T> {
    pub fn radius(&self) -> usize {
        match self {
            Kernel1D::Smooth(k) => k.len() / 2,
            Kernel1D::Odd(c) | Kernel1D::EvenZeroSum(c) => c.len(),
        }
    }

    /// Applies the kernel to a padded line; `padded.len() == out.len() + 2r`.
    fn apply(&self, padded: &[T], out: &mut [T]) {
        let r = self.radius();
        match self {
            Kernel1D::Smooth(k) => {
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for (j, &w) in k.iter().enumerate() {
                        acc += w * padded[i + j];
                    }
                    *o = acc;
                }
            }
            Kernel1D::Odd(c) => {
                for (i, o) in out.iter_mut().enumerate() {
                    let center = i + r;
                    let mut acc = T::zero();
                    for (k, &w) in c.iter().enumerate() {
                        acc += w * (padded[center + k + 1] - padded[center - k - 1]);
                    }
                    *o = acc;
                }
            }
            Kernel1D::EvenZeroSum(c) => {
                for (i, o) in out.iter_mut().enumerate() {
                    let center = i + r;
                    let x0 = padded[center];
                    let mut acc = T::zero();
                    for (k, &w) in c.iter().enumerate() {
                        acc += w * ((padded[center + k + 1] - x0) + (padded[center - k - 1] - x0));
                    }
                    *o = acc;
                }
            }
        }
    }
}

/// Gaussian smoothing, first- and second-derivative kernels at scale `sigma`.
///
/// Truncated at `ceil(4σ)`; each kernel is renormalized to be exact on
/// constants, linear ramps and quadratics respectively.
pub fn gaussian_kernels<T: Scalar>(sigma: f64) -> (Kernel1D<T>, Kernel1D<T>, Kernel1D<T>) {
    let r = ((4.0 * sigma).ceil() as usize).max(1);
    let g: Vec<f64> = (0..=r).map(|k| (-(k as f64).powi(2) / (2.0 * sigma * sigma)).exp()).collect();

    let total: f64 = g[0] + 2.0 * g[1..].iter().sum::<f64>();
    let mut smooth = Vec::with_capacity(2 * r + 1);
    for k in (1..=r).rev() {
        smooth.push(T::lit(g[k] / total));
    }
    for gk in g.iter().take(r + 1) {
        smooth.push(T::lit(gk / total));
    }

    // d/dx: Σ c_k (x[i+k] − x[i−k]) must equal 1 on x[i] = i, i.e. Σ 2k c_k = 1
    let raw1: Vec<f64> = (1..=r).map(|k| k as f64 * g[k]).collect();
    let norm1: f64 = raw1.iter().enumerate().map(|(i, c)| 2.0 * (i + 1) as f64 * c).sum();
    let odd = raw1.iter().map(|c| T::lit(c / norm1)).collect();

    // d²/dx²: Σ d_k (x[i+k] + x[i−k] − 2x[i]) must equal 2 on x² , i.e. Σ d_k k² = 1
    let raw2: Vec<f64> = (1..=r)
        .map(|k| {
            let kf = k as f64;
            (kf * kf / sigma.powi(4) - 1.0 / (sigma * sigma)) * g[k]
        })
        .collect();
    let norm2: f64 = raw2.iter().enumerate().map(|(i, d)| ((i + 1) as f64).powi(2) * d).sum();
    let even = raw2.iter().map(|d| T::lit(d / norm2)).collect();

    (Kernel1D::Smooth(smooth), Kernel1D::Odd(odd), Kernel1D::EvenZeroSum(even))
}

/// Symmetric (half-sample) reflection of an index into `0..n`.
#[inline]
pub fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Convolves every lane along `axis` with reflective boundaries.
pub fn convolve_axis<T, S, D>(input: &ArrayBase<S, D>, axis: Axis, kernel: &Kernel1D<T>) -> ndarray::Array<T, D>
where
    T: Scalar,
    S: Data<Elem = T>,
    D: Dimension + RemoveAxis,
{
    let n = input.len_of(axis);
    let r = kernel.radius();
    let mut out = ndarray::Array::<T, D>::zeros(input.raw_dim());
    let mut padded = vec![T::zero(); n + 2 * r];
    let mut line = vec![T::zero(); n];
    Zip::from(out.lanes_mut(axis)).and(input.lanes(axis)).for_each(|mut o, i| {
        for (p, slot) in padded.iter_mut().enumerate() {
            *slot = i[reflect(p as isize - r as isize, n)];
        }
        kernel.apply(&padded, &mut line);
        for (dst, &src) in o.iter_mut().zip(line.iter()) {
            *dst = src;
        }
    });
    out
}

/// Isotropic Gaussian smoothing of a 2D array (no-op for `sigma <= 0`).
pub fn gaussian_blur_2d<T: Scalar>(a: &Array2<T>, sigma: f64) -> Array2<T> {
    if sigma <= 0.0 {
        return a.clone();
    }
    let (k0, _, _) = gaussian_kernels::<T>(sigma);
    let tmp = convolve_axis(a, Axis(0), &k0);
    convolve_axis(&tmp, Axis(1), &k0)
}

/// Isotropic Gaussian smoothing of a 3D array.
pub fn gaussian_blur_3d<T: Scalar>(a: &Array3<T>, sigma: f64) -> Array3<T> {
    if sigma <= 0.0 {
        return a.clone();
    }
    let (k0, _, _) = gaussian_kernels::<T>(sigma);
    let mut out = convolve_axis(a, Axis(0), &k0);
    out = convolve_axis(&out, Axis(1), &k0);
    convolve_axis(&out, Axis(2), &k0)
}

/// Local mean over a `(2r+1)²` window, averaging only in-bounds pixels.
pub fn box_mean_2d(a: &Array2<f64>, r: usize) -> Array2<f64> {
    let (h, w) = a.dim();
    let mut integral = Array2::<f64>::zeros((h + 1, w + 1));
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += a[[y, x]];
            integral[[y + 1, x + 1]] = integral[[y, x + 1]] + row;
        }
    }
    Array2::from_shape_fn((h, w), |(y, x)| {
        let y0 = y.saturating_sub(r);
        let x0 = x.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        let x1 = (x + r + 1).min(w);
        let sum = integral[[y1, x1]] - integral[[y0, x1]] - integral[[y1, x0]] + integral[[y0, x0]];
        sum / ((y1 - y0) * (x1 - x0)) as f64
    })
}

/// Bilinear sample with edge clamping.
#[inline]
pub fn bilinear<T: Scalar>(a: &Array2<T>, y: f64, x: f64) -> T {
    let (h, w) = a.dim();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = T::lit(y - y0 as f64);
    let fx = T::lit(x - x0 as f64);
    let one = T::one();
    let top = a[[y0, x0]] * (one - fx) + a[[y0, x1]] * fx;
    let bottom = a[[y1, x0]] * (one - fx) + a[[y1, x1]] * fx;
    top * (one - fy) + bottom * fy
}

/// Downsamples by 2 after a σ=1 anti-alias blur (odd sizes round up).
pub fn downsample2<T: Scalar>(a: &Array2<T>) -> Array2<T> {
    let blurred = gaussian_blur_2d(a, 1.0);
    let (h, w) = a.dim();
    Array2::from_shape_fn((h.div_ceil(2), w.div_ceil(2)), |(y, x)| blurred[[2 * y, 2 * x]])
}
