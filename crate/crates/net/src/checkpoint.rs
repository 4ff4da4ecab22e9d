//! Single-file checkpoint: magic, version, JSON header, named `f32le` blobs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array4;
use octa_core::Scalar;
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::model::{LifeConfig, LifeModel, Polarity};

pub const MAGIC: &[u8; 8] = b"OCTALIFE";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: LifeConfig,
    #[serde(default)]
    polarity: Polarity,
    params: Vec<BlobInfo>,
}

#[derive(Serialize, Deserialize)]
struct BlobInfo {
    name: String,
    shape: [usize; 4],
}

pub fn save_checkpoint<T: Scalar>(model: &LifeModel<T>, path: &Path) -> Result<()> {
    let io = |source| NetError::Io { path: path.to_path_buf(), source };
    let header = Header {
        config: model.config().clone(),
        polarity: model.polarity(),
        params: model
            .params()
            .iter()
            .map(|(name, v)| {
                let (a, b, c, d) = v.dim();
                BlobInfo { name: name.to_string(), shape: [a, b, c, d] }
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for (name, v) in model.params().iter() {
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&4u32.to_le_bytes()).map_err(io)?;
        for d in v.shape() {
            w.write_all(&(*d as u64).to_le_bytes()).map_err(io)?;
        }
        for x in v.iter() {
            w.write_all(&x.as_f32().to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<LifeModel<T>> {
    let bad = |reason: String| NetError::Checkpoint { path: path.to_path_buf(), reason };
    let io = |source| NetError::Io { path: path.to_path_buf(), source };
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut read = |n: usize| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf).map_err(|e| bad(format!("truncated: {e}")))?;
        Ok(buf)
    };
    if read(8)?.as_slice() != MAGIC {
        return Err(bad("not a LIFE checkpoint".into()));
    }
    let version = u32::from_le_bytes(read(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(read(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(&read(len)?)?;
    let mut model = LifeModel::<T>::new(header.config)?;
    model.set_polarity(header.polarity);
    if header.params.len() != model.params().len() {
        return Err(bad(format!("{} blobs for {} parameters", header.params.len(), model.params().len())));
    }
    for info in &header.params {
        let n = u32::from_le_bytes(read(4)?.try_into().expect("4 bytes")) as usize;
        let name = String::from_utf8(read(n)?).map_err(|e| bad(e.to_string()))?;
        if name != info.name {
            return Err(bad(format!("blob {name} out of order, header says {}", info.name)));
        }
        let ndim = u32::from_le_bytes(read(4)?.try_into().expect("4 bytes")) as usize;
        if ndim != 4 {
            return Err(bad(format!("{name}: {ndim} dims")));
        }
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = u64::from_le_bytes(read(8)?.try_into().expect("8 bytes")) as usize;
        }
        let id = model.params().find(&name).ok_or_else(|| bad(format!("unknown parameter {name}")))?;
        let expect = model.params().value(id).shape().to_vec();
        if expect != shape || info.shape != shape {
            return Err(bad(format!("{name}: shape {shape:?}, model expects {expect:?}")));
        }
        let count: usize = shape.iter().product();
        let bytes = read(count * 4)?;
        let values: Vec<T> = bytes
            .chunks_exact(4)
            .map(|c| T::from_f32_bits(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        *model.params_mut().value_mut(id) =
            Array4::from_shape_vec((shape[0], shape[1], shape[2], shape[3]), values).expect("count matches shape");
    }
    Ok(model)
}
