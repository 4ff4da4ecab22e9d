//! Raw little-endian f32 payload plus JSON sidecar header.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Volume3D;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    #[serde(default = "unit_spacing")]
    pub spacing: [f64; 3],
    pub dtype: String,
    pub order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity_range: Option<[f64; 2]>,
}

fn unit_spacing() -> [f64; 3] {
    [1.0; 3]
}

/// Resolves `<base>.json` and `<base>.raw` from any of `base`, `base.json`
/// or `base.raw`.
pub fn volume_paths(path: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let path = path.as_ref();
    let base = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut json = base.clone().into_os_string();
    json.push(".json");
    let mut raw = base.into_os_string();
    raw.push(".raw");
    (PathBuf::from(json), PathBuf::from(raw))
}

pub fn load_volume<T: Scalar>(path: impl AsRef<Path>) -> Result<Volume3D<T>> {
    let (json_path, raw_path) = volume_paths(path);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: VolumeHeader = serde_json::from_str(&text)
        .map_err(|e| Error::Header { path: json_path.clone(), reason: e.to_string() })?;
    if header.dtype != "f32le" || header.order != "zyx" {
        return Err(Error::Header {
            path: json_path,
            reason: format!("unsupported dtype/order {}/{}", header.dtype, header.order),
        });
    }
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = header.dims.iter().product::<usize>();
    if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
        return Err(Error::SizeMismatch { expected, actual: bytes.len() / 4 });
    }
    let mut values = Vec::with_capacity(expected);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::NonFinite(i));
        }
        values.push(T::from_f32_bits(v));
    }
    let mut vol = Volume3D::from_vec(header.dims, values)?.with_spacing(header.spacing);
    if let Some(range) = header.intensity_range {
        vol = vol.with_intensity_range(range);
    }
    Ok(vol)
}

pub fn save_volume<T: Scalar>(vol: &Volume3D<T>, path: impl AsRef<Path>) -> Result<()> {
    vol.check_finite()?;
    let (json_path, raw_path) = volume_paths(path);
    if let Some(parent) = json_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let header = VolumeHeader {
        dims: vol.dims(),
        spacing: vol.spacing(),
        dtype: "f32le".into(),
        order: "zyx".into(),
        intensity_range: Some(vol.intensity_range()),
    };
    let mut bytes = Vec::with_capacity(vol.len() * 4);
    // logical (z, y, x) iteration order, independent of memory layout
    for v in vol.data().iter() {
        bytes.extend_from_slice(&v.as_f32().to_le_bytes());
    }
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
    Ok(())
}
