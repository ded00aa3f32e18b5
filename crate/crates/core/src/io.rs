//! Field export: flat little-endian `f64` arrays with a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lattice::{Lattice, ScalarField};

/// Sidecar describing a `.bin` file of `components * n^d` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub d: usize,
    pub n: usize,
    pub box_size: f64,
    /// Names of the stored components in file order.
    pub components: Vec<String>,
    /// Site order within a component.
    pub layout: String,
    pub base_seed: Option<u64>,
    pub sample_index: Option<u64>,
    /// Free-form resolved configuration of the producing run.
    pub config: serde_json::Value,
}

impl FieldMeta {
    pub fn new(lat: &Lattice, components: Vec<String>, config: serde_json::Value) -> Self {
        FieldMeta {
            d: lat.dim(),
            n: lat.n(),
            box_size: lat.box_size(),
            components,
            layout: "axis 0 fastest, component-major".into(),
            base_seed: None,
            sample_index: None,
            config,
        }
    }
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    let mut s = bin.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the components back to back and the sidecar next to them.
pub fn write_fields(path: &Path, fields: &[&[f64]], meta: &FieldMeta) -> Result<()> {
    if fields.len() != meta.components.len() {
        return Err(LabError::invalid("component names do not match the field count"));
    }
    let sites = meta.n.pow(meta.d as u32);
    let mut bytes = Vec::with_capacity(fields.len() * sites * 8);
    for f in fields {
        if f.len() != sites {
            return Err(LabError::invalid("field length does not match the lattice"));
        }
        for v in *f {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn read_fields(path: &Path) -> Result<(FieldMeta, Vec<ScalarField>)> {
    let meta: FieldMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let lat = Lattice::new(meta.d, meta.n, meta.box_size)?;
    let bytes = fs::read(path)?;
    let sites = lat.sites();
    if bytes.len() != meta.components.len() * sites * 8 {
        return Err(LabError::invalid(format!(
            "{} has {} bytes, expected {}",
            path.display(),
            bytes.len(),
            meta.components.len() * sites * 8
        )));
    }
    let fields = bytes
        .chunks_exact(sites * 8)
        .map(|chunk| ScalarField {
            lattice: lat,
            values: chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect(),
        })
        .collect();
    Ok((meta, fields))
}
