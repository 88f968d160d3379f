//! Manifest + blob storage for named `f32` tensors.
//!
//! A bundle `stem` is two files: `stem.json`, a manifest listing each tensor's
//! name, shape and byte offset, and `stem.bin`, the tensors concatenated as
//! little-endian `f32`. The manifest also carries a free-form `meta` value and
//! the SHA-256 of the blob, which is checked on load.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    pub blob_bytes: usize,
    pub blob_sha256: String,
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

pub fn blob_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serializes tensors into `(manifest, blob)` without touching disk.
pub fn encode(kind: &str, meta: serde_json::Value, tensors: &[(&str, &Tensor)]) -> (Manifest, Vec<u8>) {
    let total: usize = tensors.iter().map(|(_, t)| t.len() * 4).sum();
    let mut blob = Vec::with_capacity(total);
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len(),
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        meta,
        tensors: entries,
        blob_bytes: blob.len(),
        blob_sha256: sha256_hex(&blob),
    };
    (manifest, blob)
}

/// Inverse of [`encode`]. Checks version, checksum and every entry's extent.
pub fn decode(manifest: &Manifest, blob: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Integrity(format!(
            "unsupported bundle version {}",
            manifest.format_version
        )));
    }
    if blob.len() != manifest.blob_bytes {
        return Err(Error::Integrity(format!(
            "blob has {} bytes, manifest says {}",
            blob.len(),
            manifest.blob_bytes
        )));
    }
    let digest = sha256_hex(blob);
    if digest != manifest.blob_sha256 {
        return Err(Error::Integrity(format!(
            "blob checksum {digest} does not match manifest {}",
            manifest.blob_sha256
        )));
    }
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        let end = e.offset.checked_add(n * 4).filter(|&end| end <= blob.len());
        let Some(end) = end else {
            return Err(Error::Integrity(format!(
                "tensor `{}` overruns the blob ({} bytes at offset {})",
                e.name,
                n * 4,
                e.offset
            )));
        };
        let data = blob[e.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
    }
    Ok(out)
}

/// Writes `stem.json` and `stem.bin`, creating parent directories.
pub fn write(stem: &Path, kind: &str, meta: serde_json::Value, tensors: &[(&str, &Tensor)]) -> Result<Manifest> {
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let (manifest, blob) = encode(kind, meta, tensors);
    let bp = blob_path(stem);
    fs::write(&bp, &blob).map_err(|e| Error::io(&bp, e))?;
    let mp = manifest_path(stem);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&mp, text).map_err(|e| Error::io(&mp, e))?;
    Ok(manifest)
}

/// Reads a bundle, requiring its manifest `kind` to equal `expected_kind`.
pub fn read(stem: &Path, expected_kind: &str) -> Result<(Manifest, Vec<(String, Tensor)>)> {
    let mp = manifest_path(stem);
    if !mp.exists() {
        return Err(Error::MissingArtifact(mp));
    }
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Integrity(format!("{}: {e}", mp.display())))?;
    if manifest.kind != expected_kind {
        return Err(Error::Integrity(format!(
            "{} holds a `{}` bundle, expected `{expected_kind}`",
            mp.display(),
            manifest.kind
        )));
    }
    let bp = blob_path(stem);
    if !bp.exists() {
        return Err(Error::MissingArtifact(bp));
    }
    let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    let tensors = decode(&manifest, &blob)?;
    Ok((manifest, tensors))
}

/// Looks up a tensor by name in a decoded bundle.
pub fn take(tensors: &mut Vec<(String, Tensor)>, name: &str) -> Result<Tensor> {
    let pos = tensors
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::Integrity(format!("bundle has no tensor `{name}`")))?;
    Ok(tensors.swap_remove(pos).1)
}
