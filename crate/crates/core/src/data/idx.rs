//! IDX container decoding and encoding.
//!
//! Big-endian layout: images are magic `0x00000803`, then `count`, `rows`,
//! `cols` as `u32`, then `count·rows·cols` pixel bytes; labels are magic
//! `0x00000801`, then `count`, then `count` label bytes. Gzip-wrapped input
//! is detected by its magic bytes and inflated transparently.

use std::io::Read;

use flate2::read::GzDecoder;

use super::{DatasetKind, ImageSet};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
/// Inflated payloads larger than this are rejected.
pub const MAX_INFLATED_BYTES: u64 = 1 << 30;

#[derive(Debug, thiserror::Error)]
pub enum IdxError {
    #[error("bad magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated input: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("invalid image dimensions {rows}x{cols}")]
    BadDimensions { rows: usize, cols: usize },
    #[error("label {label} at index {index} is not a class id in 0..=9")]
    LabelOutOfRange { index: usize, label: u8 },
    #[error("gzip stream: {0}")]
    Gzip(#[from] std::io::Error),
    #[error("inflated payload exceeds {MAX_INFLATED_BYTES} bytes")]
    TooLarge,
}

fn inflate(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>, IdxError> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes).take(MAX_INFLATED_BYTES + 1).read_to_end(&mut out)?;
        if out.len() as u64 > MAX_INFLATED_BYTES {
            return Err(IdxError::TooLarge);
        }
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(IdxError::Truncated {
            needed: at + 4,
            available: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { expected, found });
    }
    Ok(())
}

/// Raw decoded image payload: `(count, rows, cols, pixel bytes)`.
pub fn decode_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>), IdxError> {
    let bytes = inflate(bytes)?;
    check_magic(&bytes, IMAGE_MAGIC)?;
    let count = read_u32(&bytes, 4)? as usize;
    let rows = read_u32(&bytes, 8)? as usize;
    let cols = read_u32(&bytes, 12)? as usize;
    if rows == 0 || cols == 0 {
        return Err(IdxError::BadDimensions { rows, cols });
    }
    let payload = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .and_then(|v| v.checked_add(16))
        .ok_or(IdxError::Truncated {
            needed: usize::MAX,
            available: bytes.len(),
        })?;
    if bytes.len() < payload {
        return Err(IdxError::Truncated {
            needed: payload,
            available: bytes.len(),
        });
    }
    Ok((count, rows, cols, bytes[16..payload].to_vec()))
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let bytes = inflate(bytes)?;
    check_magic(&bytes, LABEL_MAGIC)?;
    let count = read_u32(&bytes, 4)? as usize;
    let end = count.checked_add(8).ok_or(IdxError::Truncated {
        needed: usize::MAX,
        available: bytes.len(),
    })?;
    if bytes.len() < end {
        return Err(IdxError::Truncated {
            needed: end,
            available: bytes.len(),
        });
    }
    let labels = bytes[8..end].to_vec();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(IdxError::LabelOutOfRange { index, label });
    }
    Ok(labels)
}

/// Decodes an image/label stream pair; pixels are scaled by 1/255.
pub fn load_idx(image_bytes: &[u8], label_bytes: &[u8], source: DatasetKind) -> Result<ImageSet, IdxError> {
    let (count, rows, cols, pixels) = decode_images(image_bytes)?;
    let labels = decode_labels(label_bytes)?;
    if labels.len() != count {
        return Err(IdxError::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    let pixels = pixels.into_iter().map(|b| f32::from(b) / 255.0).collect();
    Ok(ImageSet::from_parts(pixels, rows, cols, labels, source).expect("decoded set is consistent"))
}

/// Encodes pixel values back to bytes (`round(v·255)`, clamped to 0..=255).
pub fn encode_images(set: &ImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + set.pixels().len());
    for v in [IMAGE_MAGIC, set.len() as u32, set.rows() as u32, set.cols() as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(set.pixels().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn encode_labels(set: &ImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + set.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(set.len() as u32).to_be_bytes());
    out.extend_from_slice(set.labels());
    out
}
