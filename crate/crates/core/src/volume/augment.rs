use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EnFaceSlice;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Random crop + flip augmentation applied identically to co-registered slices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSpec {
    /// `(h, w)` in pixels.
    pub window: (usize, usize),
    pub windows_per_slice: usize,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            window: (320, 320),
            windows_per_slice: 10,
            flip_horizontal: true,
            flip_vertical: true,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    fn validate(&self, dims: (usize, usize)) -> Result<()> {
        if self.windows_per_slice == 0 {
            return Err(Error::Param("windows_per_slice must be >= 1".into()));
        }
        if self.window.0 == 0 || self.window.1 == 0 {
            return Err(Error::Param("window must be non-empty".into()));
        }
        if self.window.0 > dims.0 || self.window.1 > dims.1 {
            return Err(Error::Param(format!(
                "window {:?} larger than slice {:?}",
                self.window, dims
            )));
        }
        Ok(())
    }
}

/// Crops the same windows out of a pair of slices.
pub fn augment<T: Scalar>(
    pair: (&EnFaceSlice<T>, &EnFaceSlice<T>),
    spec: &AugmentationSpec,
) -> Result<Vec<(Array2<T>, Array2<T>)>> {
    let stacks = augment_stack(&[pair.0, pair.1], spec)?;
    Ok(stacks
        .into_iter()
        .map(|mut v| {
            let b = v.pop().expect("two members");
            let a = v.pop().expect("two members");
            (a, b)
        })
        .collect())
}

/// Generalization of [`augment`] to any number of aligned slices.
///
/// Returns `windows_per_slice` groups; member `i` of every group is cut from
/// `slices[i]` with the group's shared origin and flips.
pub fn augment_stack<T: Scalar>(
    slices: &[&EnFaceSlice<T>],
    spec: &AugmentationSpec,
) -> Result<Vec<Vec<Array2<T>>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    augment_stack_with_rng(slices, spec, &mut rng)
}

pub fn augment_stack_with_rng<T: Scalar, R: Rng>(
    slices: &[&EnFaceSlice<T>],
    spec: &AugmentationSpec,
    rng: &mut R,
) -> Result<Vec<Vec<Array2<T>>>> {
    let first = slices.first().ok_or_else(|| Error::Param("no slices to augment".into()))?;
    let dims = first.dims();
    if let Some(bad) = slices.iter().find(|s| s.dims() != dims) {
        return Err(Error::Dims(format!("slice dims differ: {:?} vs {:?}", bad.dims(), dims)));
    }
    spec.validate(dims)?;
    let (wh, ww) = spec.window;
    let mut out = Vec::with_capacity(spec.windows_per_slice);
    for _ in 0..spec.windows_per_slice {
        let y0 = rng.random_range(0..=dims.0 - wh);
        let x0 = rng.random_range(0..=dims.1 - ww);
        let flip_h = spec.flip_horizontal && rng.random_bool(0.5);
        let flip_v = spec.flip_vertical && rng.random_bool(0.5);
        let group = slices
            .iter()
            .map(|sl| {
                let mut view = sl.data.slice(s![y0..y0 + wh, x0..x0 + ww]);
                if flip_h {
                    view.invert_axis(Axis(1));
                }
                if flip_v {
                    view.invert_axis(Axis(0));
                }
                view.to_owned()
            })
            .collect();
        out.push(group);
    }
    Ok(out)
}
