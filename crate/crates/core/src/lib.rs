//! Self-supervised OCT-A vessel segmentation: volumetric kernels.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the `f32` storage type used by files and the CLI.

pub mod binarize;
pub mod error;
pub mod eval;
pub mod filter;
pub mod fusion;
pub mod phantom;
pub mod preprocess;
pub mod registration;
pub mod scalar;
pub mod vesselness;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use volume::{crop_slab, load_volume, normalize, save_volume, AugmentationSpec, EnFaceSlice, Volume3D};

/// Volume with `f32` voxels, the on-disk representation.
pub type Volume = Volume3D<f32>;
/// En-face slice with `f32` pixels.
pub type Slice = EnFaceSlice<f32>;
