use ndarray::Array3;
use octa_core::eval::LatentSource;
use octa_core::{normalize, Scalar, Volume3D};
use rayon::prelude::*;
use serde_json::Value;

use crate::error::Result;
use crate::model::LifeModel;

/// Per-slice μ, reassembled and rescaled to `[0, 255]`. No sampling, so two
/// runs are bit-identical.
pub fn infer_latent<T: Scalar>(vol: &Volume3D<T>, model: &LifeModel<T>) -> Result<Volume3D<T>> {
    let [nz, h, w] = vol.dims();
    let slices: Vec<_> = (0..nz)
        .into_par_iter()
        .map(|z| model.forward_pipeline(&vol.slice_view(z).to_owned(), None))
        .collect::<Result<_>>()?;
    if let Some(p) = slices.iter().find_map(|s| s.padded_to) {
        log::warn!("slices {h}x{w} padded to {}x{} for stride {}", p.0, p.1, model.stride());
    }
    let sign: T = model.polarity().sign();
    let mut data = Array3::zeros((nz, h, w));
    for (z, s) in slices.into_iter().enumerate() {
        data.index_axis_mut(ndarray::Axis(0), z).assign(&s.latent.mu.mapv(|v| v * sign));
    }
    Ok(normalize(&vol.with_data(data)?))
}

impl<T: Scalar> LatentSource<T> for LifeModel<T> {
    fn latent(&self, vol: &Volume3D<T>) -> octa_core::Result<Volume3D<T>> {
        infer_latent(vol, self).map_err(|e| match e {
            crate::NetError::Core(c) => c,
            other => octa_core::Error::Param(other.to_string()),
        })
    }

    fn describe(&self) -> Value {
        serde_json::to_value(self.config()).unwrap_or(Value::Null)
    }
}
