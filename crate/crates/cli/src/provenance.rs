//! Content-hash provenance records written next to every artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use octa_core::volume::volume_paths;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// What produced an artifact. Inputs are keyed by role, not path, so the
/// record only changes when content or parameters do.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    pub tool_version: String,
    pub params: Value,
    pub inputs: BTreeMap<String, String>,
    /// File name → sha256 of its content.
    pub outputs: BTreeMap<String, String>,
}

fn is_volume(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "raw")
}

/// sha256 of an artifact; a `.raw` volume hashes its header and payload.
pub fn hash_artifact(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let files = if is_volume(path) {
        let (json, raw) = volume_paths(path);
        vec![json, raw]
    } else {
        vec![path.to_path_buf()]
    };
    for f in files {
        h.update(fs::read(&f).map_err(|e| CliError::io(&f, e))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Whether every file making up the artifact exists.
pub fn artifact_exists(path: &Path) -> bool {
    if is_volume(path) {
        let (json, raw) = volume_paths(path);
        json.is_file() && raw.is_file()
    } else {
        path.is_file()
    }
}

/// `dir/lif.raw` → `dir/lif.prov.json`.
pub fn provenance_path(artifact: &Path) -> PathBuf {
    let mut p = artifact.with_extension("").into_os_string();
    p.push(".prov.json");
    PathBuf::from(p)
}

pub fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn read(artifact: &Path) -> Option<Provenance> {
    let text = fs::read_to_string(provenance_path(artifact)).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn write(artifact: &Path, record: &Provenance) -> Result<()> {
    let path = provenance_path(artifact);
    fs::write(&path, serde_json::to_string_pretty(record)?).map_err(|e| CliError::io(&path, e))
}
