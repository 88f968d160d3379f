//! IDX files: a big-endian magic number, one `u32` per dimension, then
//! unsigned bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    /// Pixels scaled to `[0, 1]`, one flattened image per row.
    Images { rows: usize, cols: usize, pixels: Tensor },
    Labels(Vec<u8>),
}

pub fn parse_idx(path: &Path) -> Result<IdxData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_bytes(&bytes)
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    let chunk = bytes.get(offset..end).ok_or(Error::Length {
        expected: end,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
}

pub fn parse_idx_bytes(bytes: &[u8]) -> Result<IdxData> {
    let magic = read_u32(bytes, 0)?;
    let n_dims = match magic {
        IMAGES_MAGIC => 3,
        LABELS_MAGIC => 1,
        other => {
            return Err(Error::Format {
                offset: 0,
                detail: format!("unknown magic 0x{other:08x}"),
            })
        }
    };
    let dims: Vec<usize> = (0..n_dims)
        .map(|i| read_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<_>>()?;
    let header = 4 + 4 * n_dims;
    let count: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() < count {
        return Err(Error::Length {
            expected: header + count,
            found: bytes.len(),
        });
    }
    let body = &body[..count];
    Ok(match magic {
        IMAGES_MAGIC => IdxData::Images {
            rows: dims[1],
            cols: dims[2],
            pixels: Tensor::matrix(dims[0], dims[1] * dims[2], body.iter().map(|&b| b as f32 / 255.0).collect())?,
        },
        _ => IdxData::Labels(body.to_vec()),
    })
}

/// Encodes `[n, rows·cols]` pixels in `[0, 1]`, rounding to the nearest byte.
pub fn encode_images(pixels: &Tensor, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if pixels.rank() != 2 || pixels.cols() != rows * cols {
        return Err(Error::Shape {
            op: "encode_images",
            lhs: pixels.shape().to_vec(),
            rhs: vec![rows, cols],
        });
    }
    let mut out = IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [pixels.rows(), rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(pixels.data().iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = LABELS_MAGIC.to_be_bytes().to_vec();
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
