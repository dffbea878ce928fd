//! IDX tensors and digit sources backed by IDX image/label files.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, IdxError, Result};
use crate::rng;
use crate::taskgen::{DigitSource, Glyph};

pub const DTYPE_U8: u8 = 0x08;

/// A decoded IDX file. Only unsigned-byte payloads are supported.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dtype: u8,
    pub dims: Vec<u32>,
    pub payload: Vec<u8>,
}

impl IdxTensor {
    pub fn u8(dims: Vec<u32>, payload: Vec<u8>) -> Result<Self, IdxError> {
        let expected = element_count(&dims)?;
        if payload.len() != expected {
            return Err(IdxError::Truncated {
                needed: expected,
                have: payload.len(),
            });
        }
        Ok(IdxTensor {
            dtype: DTYPE_U8,
            dims,
            payload,
        })
    }

    pub fn len(&self) -> usize {
        self.dims.first().map_or(0, |&d| d as usize)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn element_count(dims: &[u32]) -> Result<usize, IdxError> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or(IdxError::Overflow)
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor, IdxError> {
    if bytes.len() < 4 {
        return Err(IdxError::Truncated {
            needed: 4,
            have: bytes.len(),
        });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(IdxError::Magic(bytes[0], bytes[1]));
    }
    let dtype = bytes[2];
    if dtype != DTYPE_U8 {
        return Err(IdxError::UnsupportedDtype(dtype));
    }
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(IdxError::Truncated {
            needed: header,
            have: bytes.len(),
        });
    }
    let dims: Vec<u32> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let count = element_count(&dims)?;
    let needed = header.checked_add(count).ok_or(IdxError::Overflow)?;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            have: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(IdxError::TrailingBytes(bytes.len() - needed));
    }
    Ok(IdxTensor {
        dtype,
        dims,
        payload: bytes[header..].to_vec(),
    })
}

pub fn write_idx(t: &IdxTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * t.dims.len() + t.payload.len());
    out.extend([0, 0, t.dtype, t.dims.len() as u8]);
    for d in &t.dims {
        out.extend(d.to_be_bytes());
    }
    out.extend_from_slice(&t.payload);
    out
}

/// Digits read from IDX image/label files, fitted to a square side.
#[derive(Debug, Clone)]
pub struct IdxDigits {
    side: usize,
    glyphs: Vec<Glyph>,
}

impl IdxDigits {
    /// Builds a source from an `[n, rows, cols]` image tensor and an `[n]`
    /// label tensor.
    pub fn from_tensors(images: &IdxTensor, labels: &IdxTensor, side: usize) -> Result<Self> {
        if images.dims.len() != 3 {
            return Err(IdxError::Rank {
                expected: 3,
                found: images.dims.len(),
            }
            .into());
        }
        if labels.dims.len() != 1 {
            return Err(IdxError::Rank {
                expected: 1,
                found: labels.dims.len(),
            }
            .into());
        }
        let (n, rows, cols) = (
            images.dims[0] as usize,
            images.dims[1] as usize,
            images.dims[2] as usize,
        );
        if labels.len() != n {
            return Err(Error::DigitSource(format!(
                "{n} images but {} labels",
                labels.len()
            )));
        }
        if let Some(bad) = labels.payload.iter().find(|&&l| l > 9) {
            return Err(Error::DigitSource(format!("label {bad} is not a digit")));
        }
        let glyphs = images
            .payload
            .chunks_exact((rows * cols).max(1))
            .take(n)
            .zip(&labels.payload)
            .map(|(img, &label)| Glyph::new(label, fit_to_side(img, rows, cols, side)))
            .collect();
        Ok(IdxDigits { side, glyphs })
    }

    pub fn len(&self) -> usize {
        self.glyphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }
}

/// Zero-pads (centered) when the source is smaller than `side`, otherwise
/// resamples with nearest neighbour.
pub fn fit_to_side(img: &[u8], rows: usize, cols: usize, side: usize) -> Vec<u8> {
    let mut out = vec![0u8; side * side];
    if rows <= side && cols <= side {
        let (r0, c0) = ((side - rows) / 2, (side - cols) / 2);
        for r in 0..rows {
            out[(r0 + r) * side + c0..(r0 + r) * side + c0 + cols]
                .copy_from_slice(&img[r * cols..(r + 1) * cols]);
        }
    } else {
        for r in 0..side {
            for c in 0..side {
                let sr = (r * rows) / side;
                let sc = (c * cols) / side;
                out[r * side + c] = img[sr * cols + sc];
            }
        }
    }
    out
}

impl DigitSource for IdxDigits {
    fn image_side(&self) -> usize {
        self.side
    }

    fn capacity(&self) -> Option<usize> {
        Some(self.glyphs.len())
    }

    /// A seeded random subset without replacement.
    fn glyphs(&self, seed: u64, n: usize) -> Result<Vec<Glyph>> {
        if n > self.glyphs.len() {
            return Err(Error::InsufficientGlyphs {
                available: self.glyphs.len(),
                requested: n,
            });
        }
        let mut order: Vec<usize> = (0..self.glyphs.len()).collect();
        order.shuffle(&mut rng::stream(seed, 0, "idx-subset"));
        Ok(order[..n].iter().map(|&i| self.glyphs[i].clone()).collect())
    }
}

pub fn load_digit_source(image_path: &Path, label_path: &Path, side: usize) -> Result<IdxDigits> {
    let images = parse_idx(&std::fs::read(image_path)?)?;
    let labels = parse_idx(&std::fs::read(label_path)?)?;
    IdxDigits::from_tensors(&images, &labels, side)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_three_dim_tensor() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend(1..=8u8);
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.dims, vec![2, 2, 2]);
        assert_eq!(t.payload, (1..=8).collect::<Vec<u8>>());
    }

    #[test]
    fn parse_label_vector() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 5, 3, 1, 4, 1, 5];
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!(write_idx(&t), bytes);
    }

    #[test]
    fn typed_errors() {
        assert_eq!(
            parse_idx(&[0, 0, 8, 1, 0, 0, 0, 5, 1, 2]),
            Err(IdxError::Truncated { needed: 13, have: 10 })
        );
        assert_eq!(parse_idx(&[1, 0, 8, 0]), Err(IdxError::Magic(1, 0)));
        assert_eq!(parse_idx(&[0, 0, 0x0d, 0]), Err(IdxError::UnsupportedDtype(0x0d)));
        assert_eq!(parse_idx(&[0, 0, 8]), Err(IdxError::Truncated { needed: 4, have: 3 }));
        assert_eq!(parse_idx(&[0, 0, 8, 1, 0, 0]), Err(IdxError::Truncated { needed: 8, have: 6 }));
        assert_eq!(parse_idx(&[0, 0, 8, 1, 0, 0, 0, 1, 7, 7]), Err(IdxError::TrailingBytes(1)));
    }

    #[test]
    fn empty_dims() {
        let t = IdxTensor::u8(vec![0], vec![]).unwrap();
        let bytes = write_idx(&t);
        assert_eq!(bytes, vec![0, 0, 8, 1, 0, 0, 0, 0]);
        assert_eq!(parse_idx(&bytes).unwrap(), t);
    }

    #[test]
    fn padding_centers_small_images() {
        let img: Vec<u8> = (1..=4).collect();
        let out = fit_to_side(&img, 2, 2, 4);
        assert_eq!(out, vec![0, 0, 0, 0, 0, 1, 2, 0, 0, 3, 4, 0, 0, 0, 0, 0]);
        let down = fit_to_side(&out, 4, 4, 2);
        assert_eq!(down, vec![0, 0, 0, 4]);
    }

    #[test]
    fn source_from_tensors() {
        let images = IdxTensor::u8(vec![3, 2, 2], vec![9; 12]).unwrap();
        let labels = IdxTensor::u8(vec![3], vec![0, 5, 9]).unwrap();
        let src = IdxDigits::from_tensors(&images, &labels, 4).unwrap();
        assert_eq!(src.len(), 3);
        let g = src.glyphs(1, 3).unwrap();
        let mut classes: Vec<u8> = g.iter().map(|g| g.digit_class).collect();
        classes.sort();
        assert_eq!(classes, vec![0, 5, 9]);
        assert!(matches!(
            src.glyphs(1, 4),
            Err(Error::InsufficientGlyphs { available: 3, requested: 4 })
        ));

        let short = IdxTensor::u8(vec![2], vec![0, 1]).unwrap();
        assert!(IdxDigits::from_tensors(&images, &short, 4).is_err());
        let bad = IdxTensor::u8(vec![3], vec![0, 1, 10]).unwrap();
        assert!(IdxDigits::from_tensors(&images, &bad, 4).is_err());
    }
}
