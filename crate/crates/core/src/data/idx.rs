//! The IDX container used by MNIST: a big-endian magic word whose low byte is
//! the number of dimensions, one big-endian u32 per dimension, then u8 data.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const MNIST_CLASSES: u32 = 10;

#[derive(Clone, Debug, PartialEq)]
pub enum Idx {
    /// `[n, 1, h, w]` with values in `[0, 255]`.
    Images(Tensor),
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::TruncatedFile {
            expected: at + 4,
            found: bytes.len(),
        })
}

pub fn parse_idx(bytes: &[u8]) -> Result<Idx> {
    let magic = be_u32(bytes, 0)?;
    let rank = match magic {
        IDX_LABELS_MAGIC => 1,
        IDX_IMAGES_MAGIC => 3,
        other => return Err(Error::BadMagic(other)),
    };
    let dims = (0..rank)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * rank;
    let count: usize = dims.iter().product();
    let payload = bytes.get(header..header + count).ok_or(Error::TruncatedFile {
        expected: header + count,
        found: bytes.len(),
    })?;
    match rank {
        1 => {
            if let Some(&bad) = payload.iter().find(|&&l| l as u32 >= MNIST_CLASSES) {
                return Err(Error::LabelOutOfRange {
                    label: bad as u32,
                    classes: MNIST_CLASSES,
                });
            }
            Ok(Idx::Labels(payload.to_vec()))
        }
        _ => {
            let data = payload.iter().map(|&b| b as f32).collect();
            Tensor::new(vec![dims[0], 1, dims[1], dims[2]], data)
                .map(Idx::Images)
                .map_err(|_| Error::SizeMismatch(format!("IDX dims {dims:?}")))
        }
    }
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<Idx> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}

/// Encodes images (`[n,1,h,w]`, values rounded to u8) or labels.
pub fn write_idx(idx: &Idx) -> Vec<u8> {
    let mut out = Vec::new();
    match idx {
        Idx::Labels(labels) => {
            out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
            out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
            out.extend_from_slice(labels);
        }
        Idx::Images(t) => {
            let s = t.shape();
            out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
            for d in [s[0], s[2], s[3]] {
                out.extend_from_slice(&(d as u32).to_be_bytes());
            }
            out.extend(t.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_images_byte_exact() {
        let mut bytes = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [2u32, 2, 3] {
            bytes.extend_from_slice(&d.to_be_bytes());
        }
        bytes.extend(0u8..12);
        let Idx::Images(t) = parse_idx(&bytes).unwrap() else { panic!() };
        assert_eq!(t.shape(), &[2, 1, 2, 3]);
        assert_eq!(t.data()[11], 11.0);
        assert_eq!(write_idx(&Idx::Images(t)), bytes);
    }

    #[test]
    fn truncated_header_and_payload() {
        let bytes = IDX_IMAGES_MAGIC.to_be_bytes();
        assert!(matches!(parse_idx(&bytes[..3]), Err(Error::TruncatedFile { .. })));
        assert!(matches!(parse_idx(&bytes), Err(Error::TruncatedFile { .. })));
        let mut labels = write_idx(&Idx::Labels(vec![1, 2, 3]));
        labels.pop();
        assert!(matches!(parse_idx(&labels), Err(Error::TruncatedFile { .. })));
    }

    #[test]
    fn bad_magic_and_label_range() {
        assert!(matches!(parse_idx(&[0, 0, 8, 2, 0, 0, 0, 0]), Err(Error::BadMagic(0x0802))));
        let bytes = write_idx(&Idx::Labels(vec![3, 10]));
        assert!(matches!(parse_idx(&bytes), Err(Error::LabelOutOfRange { label: 10, .. })));
    }
}
