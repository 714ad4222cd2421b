// SPDX-License-Identifier: MIT OR Apache-2.0

//! Raw little-endian f32 payloads that accompany JSON index files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub(crate) fn encode_f32(values: impl IntoIterator<Item = f64>, out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub(crate) fn decode_f32(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect()
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `values` as raw f32 LE to `path`.
pub(crate) fn write_f32_file(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    encode_f32(values.iter().copied(), &mut bytes);
    write_bytes(path, &bytes)
}

pub(crate) fn read_f32_file(path: &Path) -> Result<Vec<f64>> {
    let bytes = read_bytes(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::InvalidFile {
            path: path.to_path_buf(),
            reason: format!("length {} is not a multiple of 4", bytes.len()),
        });
    }
    Ok(decode_f32(&bytes))
}

/// Path of the raw data file that accompanies a JSON index.
pub(crate) fn sidecar_path(index: &Path) -> PathBuf {
    index.with_extension("f32")
}

pub(crate) fn sidecar_name(index: &Path) -> String {
    sidecar_path(index)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub(crate) fn resolve_sidecar(index: &Path, name: &str) -> PathBuf {
    index.parent().unwrap_or(Path::new(".")).join(name)
}
