//! IDX files as shipped for MNIST and FashionMNIST.
//!
//! All header integers are big-endian. Images: magic `0x00000803`, then count,
//! rows, cols, then `count·rows·cols` `u8` pixels. Labels: magic `0x00000801`,
//! then count, then `count` `u8` labels.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            expected: at + 4,
            actual: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

fn payload(bytes: &[u8], header: usize, len: usize) -> Result<&[u8]> {
    let expected = header + len;
    bytes.get(header..expected).ok_or(Error::Truncated {
        expected,
        actual: bytes.len(),
    })
}

/// Returns `(rows, cols, pixels)` with one image per `rows·cols` slice.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    Ok((rows, cols, payload(bytes, 16, count * rows * cols)?))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    payload(bytes, 8, count)
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub(crate) fn dataset_from_idx(name: String, images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    let per = rows * cols;
    let count = pixels.len().checked_div(per).unwrap_or(0);
    if count != labels.len() {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    let inputs = pixels
        .chunks_exact(per.max(1))
        .take(count)
        .map(|img| {
            let data = img.iter().map(|&p| f64::from(p) / 255.0).collect();
            Tensor::raw(vec![rows, cols], data)
        })
        .collect();
    Dataset::new(name, inputs, labels.iter().map(|&l| usize::from(l)).collect())
}

/// Loads an image/label IDX pair, scaling pixels by `1/255`.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let img = fs::read(images).map_err(|e| Error::io(images, e))?;
    let lbl = fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let name = images
        .file_name()
        .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    dataset_from_idx(name, &img, &lbl)
}
