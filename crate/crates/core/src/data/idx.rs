//! IDX binary ingestion (the MNIST container format).
//!
//! Images: big-endian magic `0x00000803`, `u32` dims `[n, rows, cols]`, then
//! `n·rows·cols` unsigned bytes. Labels: magic `0x00000801`, `u32` `n`, then
//! `n` bytes. The payload length must match the header exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, ParseError, Result};
use crate::tensor::Tensor;

use super::dataset::{Dataset, Sample};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

type ParseResult<T> = std::result::Result<T, ParseError>;

fn read_be_u32(bytes: &[u8], offset: usize) -> ParseResult<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(ParseError::Truncated {
            offset,
            needed: 4,
            available: bytes.len().saturating_sub(offset),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> ParseResult<()> {
    let found = read_be_u32(bytes, 0)?;
    if found != expected {
        return Err(ParseError::BadMagic { expected, found });
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, expected: usize) -> ParseResult<()> {
    let available = bytes.len() - header;
    if available < expected {
        return Err(ParseError::Truncated {
            offset: header,
            needed: expected,
            available,
        });
    }
    if available > expected {
        return Err(ParseError::TrailingBytes {
            extra: available - expected,
        });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> ParseResult<IdxImages> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    if rows == 0 || cols == 0 {
        return Err(ParseError::InvalidHeader(format!("zero image extent {rows}x{cols}")));
    }
    let expected = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| ParseError::InvalidHeader("image dimensions overflow".into()))?;
    check_payload(bytes, 16, expected)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> ParseResult<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = read_be_u32(bytes, 4)? as usize;
    check_payload(bytes, 8, count)?;
    Ok(bytes[8..].to_vec())
}

/// Pairs parsed images and labels into a dataset with zero-padded index ids
/// and classes `"0"..="max label"`.
pub fn idx_dataset(name: &str, images: IdxImages, labels: &[u8]) -> std::result::Result<Dataset, ParseError> {
    if images.count != labels.len() {
        return Err(ParseError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let num_classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let plane = images.rows * images.cols;
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| Sample {
            id: format!("{i:06}"),
            image: Tensor::new(
                vec![1, images.rows, images.cols],
                images.pixels[i * plane..(i + 1) * plane]
                    .iter()
                    .map(|&p| p as f64 / 255.0)
                    .collect(),
            )
            .expect("dims checked"),
            label: label as usize,
            region: None,
        })
        .collect();
    let class_names = (0..num_classes).map(|c| c.to_string()).collect();
    Dataset::new(name, class_names, samples).map_err(|e| ParseError::InvalidHeader(e.to_string()))
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let label_bytes = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let images = parse_idx_images(&image_bytes).map_err(|e| Error::parse(images_path.display().to_string(), e))?;
    let labels = parse_idx_labels(&label_bytes).map_err(|e| Error::parse(labels_path.display().to_string(), e))?;
    let name = images_path
        .file_stem()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    idx_dataset(&name, images, &labels).map_err(|e| Error::parse(images_path.display().to_string(), e))
}

/// Encodes images in IDX layout (used for fixtures and exports).
pub fn encode_idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), count * rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_image_fixture() {
        let img = [
            0x00, 0x00, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, //
            0, 0, 0, 0, //
            255, 255, 255, 255,
        ];
        let lbl = [0x00, 0x00, 0x08, 0x01, 0, 0, 0, 2, 1, 0];
        let ds = idx_dataset("fx", parse_idx_images(&img).unwrap(), &parse_idx_labels(&lbl).unwrap()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.samples[0].image.data(), &[0.0; 4]);
        assert_eq!(ds.samples[1].image.data(), &[1.0; 4]);
        assert_eq!(ds.samples[0].label, 1);
        assert_eq!(ds.samples[1].id, "000001");
        assert_eq!(ds.class_names, vec!["0", "1"]);
    }

    #[test]
    fn count_mismatch() {
        let img = parse_idx_images(&encode_idx_images(2, 1, 1, &[1, 2])).unwrap();
        let err = idx_dataset("x", img, &[0, 1, 0]).unwrap_err();
        assert_eq!(err, ParseError::CountMismatch { images: 2, labels: 3 });
    }

    #[test]
    fn header_is_self_consistent() {
        let bytes = encode_idx_images(10, 28, 28, &vec![7u8; 10 * 28 * 28]);
        let parsed = parse_idx_images(&bytes).unwrap();
        assert_eq!(parsed.count, u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize);
        assert_eq!(parsed.pixels.len(), parsed.count * parsed.rows * parsed.cols);
    }

    #[test]
    fn wrong_magic_and_truncation() {
        let mut bytes = encode_idx_images(1, 2, 2, &[1, 2, 3, 4]);
        assert!(matches!(
            parse_idx_labels(&bytes),
            Err(ParseError::BadMagic { .. })
        ));
        bytes.pop();
        assert!(matches!(parse_idx_images(&bytes), Err(ParseError::Truncated { .. })));
        assert!(matches!(parse_idx_images(&bytes[..3]), Err(ParseError::Truncated { .. })));
        let mut long = encode_idx_labels(&[1, 2]);
        long.push(9);
        assert!(matches!(parse_idx_labels(&long), Err(ParseError::TrailingBytes { extra: 1 })));
    }
}
