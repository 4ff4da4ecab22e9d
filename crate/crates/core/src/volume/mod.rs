//! Volume container, en-face slices and intensity utilities.

mod augment;
mod io;

pub use augment::{augment, augment_stack, augment_stack_with_rng, AugmentationSpec};
pub use io::{load_volume, save_volume, volume_paths, VolumeHeader};

use ndarray::{s, Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A Z×H×W scalar volume indexed `(z, y, x)`.
///
/// Spacing is informational only (micrometers, `[dz, dy, dx]`); no kernel
/// resamples between spacings.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D<T> {
    data: Array3<T>,
    spacing: [f64; 3],
    intensity_range: [f64; 2],
}

/// One constant-depth plane of a volume.
#[derive(Clone, Debug, PartialEq)]
pub struct EnFaceSlice<T> {
    pub data: Array2<T>,
    pub z_index: usize,
}

impl<T: Scalar> EnFaceSlice<T> {
    pub fn new(data: Array2<T>, z_index: usize) -> Self {
        Self { data, z_index }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum::<f64>() / self.data.len().max(1) as f64
    }
}

impl<T: Scalar> Volume3D<T> {
    pub fn new(data: Array3<T>) -> Result<Self> {
        let (z, h, w) = data.dim();
        if z == 0 || h == 0 || w == 0 {
            return Err(Error::Dims(format!("volume dims must be >= 1, got {z}x{h}x{w}")));
        }
        Ok(Self { data, spacing: [1.0; 3], intensity_range: [0.0, 255.0] })
    }

    pub fn from_vec(dims: [usize; 3], values: Vec<T>) -> Result<Self> {
        let expected = dims.iter().product::<usize>();
        if values.len() != expected {
            return Err(Error::SizeMismatch { expected, actual: values.len() });
        }
        let data = Array3::from_shape_vec((dims[0], dims[1], dims[2]), values)
            .map_err(|e| Error::Dims(e.to_string()))?;
        Self::new(data)
    }

    pub fn filled(dims: [usize; 3], value: T) -> Result<Self> {
        Self::new(Array3::from_elem((dims[0], dims[1], dims[2]), value))
    }

    pub fn zeros(dims: [usize; 3]) -> Result<Self> {
        Self::filled(dims, T::zero())
    }

    pub fn from_slices(slices: &[Array2<T>]) -> Result<Self> {
        let first = slices.first().ok_or_else(|| Error::Dims("no slices".into()))?;
        let (h, w) = first.dim();
        let mut data = Array3::zeros((slices.len(), h, w));
        for (z, sl) in slices.iter().enumerate() {
            if sl.dim() != (h, w) {
                return Err(Error::Dims(format!(
                    "slice {z} is {:?}, expected {:?}",
                    sl.dim(),
                    (h, w)
                )));
            }
            data.index_axis_mut(Axis(0), z).assign(sl);
        }
        Self::new(data)
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn with_intensity_range(mut self, range: [f64; 2]) -> Self {
        self.intensity_range = range;
        self
    }

    /// `[Z, H, W]`.
    pub fn dims(&self) -> [usize; 3] {
        let (z, h, w) = self.data.dim();
        [z, h, w]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &Array3<T> {
        &self.data
    }

    pub fn into_data(self) -> Array3<T> {
        self.data
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn intensity_range(&self) -> [f64; 2] {
        self.intensity_range
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> T {
        self.data[[z, y, x]]
    }

    pub fn slice_view(&self, z: usize) -> ArrayView2<'_, T> {
        self.data.index_axis(Axis(0), z)
    }

    pub fn slice(&self, z: usize) -> EnFaceSlice<T> {
        EnFaceSlice::new(self.slice_view(z).to_owned(), z)
    }

    pub fn slices(&self) -> Vec<EnFaceSlice<T>> {
        (0..self.dims()[0]).map(|z| self.slice(z)).collect()
    }

    /// Returns a copy carrying the same metadata but new voxel data.
    pub fn with_data(&self, data: Array3<T>) -> Result<Self> {
        if data.dim() != self.data.dim() {
            return Err(Error::Dims(format!(
                "replacement data {:?} does not match {:?}",
                data.dim(),
                self.data.dim()
            )));
        }
        Ok(Self { data, spacing: self.spacing, intensity_range: self.intensity_range })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.mapv(f),
            spacing: self.spacing,
            intensity_range: self.intensity_range,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Volume3D<U> {
        Volume3D {
            data: self.data.mapv(|v| U::lit(v.as_f64())),
            spacing: self.spacing,
            intensity_range: self.intensity_range,
        }
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum::<f64>() / self.len() as f64
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }
}

/// Affine rescale so the minimum maps to 0 and the maximum to 255.
///
/// Constant volumes map to all zeros.
pub fn normalize<T: Scalar>(vol: &Volume3D<T>) -> Volume3D<T> {
    let (lo, hi) = vol.min_max();
    let (lo, hi) = (lo.as_f64(), hi.as_f64());
    let range = hi - lo;
    let out = if range > 0.0 && range.is_finite() {
        let scale = 255.0 / range;
        vol.data.mapv(|v| T::lit(((v.as_f64() - lo) * scale).clamp(0.0, 255.0)))
    } else {
        Array3::zeros(vol.data.dim())
    };
    Volume3D { data: out, spacing: vol.spacing, intensity_range: [0.0, 255.0] }
}

/// Same affine map as [`normalize`], applied to a single 2D array.
pub fn normalize_array<T: Scalar>(a: &Array2<T>) -> Array2<T> {
    let (lo, hi) = a
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v.as_f64()), h.max(v.as_f64())));
    let range = hi - lo;
    if range > 0.0 && range.is_finite() {
        a.mapv(|v| T::lit(((v.as_f64() - lo) * 255.0 / range).clamp(0.0, 255.0)))
    } else {
        Array2::zeros(a.dim())
    }
}

/// Keeps slices `[z0, z1)`.
pub fn crop_slab<T: Scalar>(vol: &Volume3D<T>, z0: usize, z1: usize) -> Result<Volume3D<T>> {
    let depth = vol.dims()[0];
    if z0 >= z1 || z1 > depth {
        return Err(Error::OutOfRange(format!(
            "slab [{z0}, {z1}) invalid for depth {depth}"
        )));
    }
    Ok(Volume3D {
        data: vol.data.slice(s![z0..z1, .., ..]).to_owned(),
        spacing: vol.spacing,
        intensity_range: vol.intensity_range,
    })
}
