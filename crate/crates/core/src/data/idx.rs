//! IDX container format (unsigned-byte payloads only).

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGES_MAGIC: u32 = 0x0000_0803;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxFile {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

impl IdxFile {
    pub fn labels(values: Vec<u8>) -> Self {
        Self {
            magic: LABELS_MAGIC,
            dims: vec![values.len()],
            payload: values,
        }
    }

    pub fn images(count: usize, rows: usize, cols: usize, payload: Vec<u8>) -> Result<Self> {
        if payload.len() != count * rows * cols {
            return Err(Error::Malformed(format!(
                "image payload of {} bytes does not match {count}x{rows}x{cols}",
                payload.len()
            )));
        }
        Ok(Self {
            magic: IMAGES_MAGIC,
            dims: vec![count, rows, cols],
            payload,
        })
    }

    pub fn is_images(&self) -> bool {
        self.magic == IMAGES_MAGIC
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let header = bytes.get(..4).ok_or(Error::Truncated {
            offset: 0,
            needed: 4,
            available: bytes.len(),
        })?;
        let magic = u32::from_be_bytes(header.try_into().unwrap());
        let ndims = match magic {
            LABELS_MAGIC => 1,
            IMAGES_MAGIC => 3,
            _ => {
                return Err(Error::BadMagic {
                    expected: "0x00000801 or 0x00000803".into(),
                    found: format!("{magic:#010x}"),
                })
            }
        };
        let dims_end = 4 + 4 * ndims;
        if bytes.len() < dims_end {
            return Err(Error::Truncated {
                offset: 4,
                needed: 4 * ndims,
                available: bytes.len() - 4,
            });
        }
        let dims: Vec<usize> = bytes[4..dims_end]
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let expected = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Malformed(format!("dims {dims:?} overflow")))?;
        let payload = &bytes[dims_end..];
        if payload.len() < expected {
            return Err(Error::Truncated {
                offset: dims_end,
                needed: expected,
                available: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(Error::Malformed(format!(
                "dims {dims:?} describe {expected} bytes but payload holds {}",
                payload.len()
            )));
        }
        Ok(Self {
            magic,
            dims,
            payload: payload.to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.payload.len());
        out.extend_from_slice(&self.magic.to_be_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    /// Image payloads scale to `[0, 1]` by `/255`; label payloads keep their
    /// integer values.
    pub fn to_tensor(&self) -> Result<Tensor> {
        let scale = if self.is_images() { 1.0 / 255.0 } else { 1.0 };
        Tensor::new(
            &self.dims,
            self.payload.iter().map(|&b| b as f64 * scale).collect(),
        )
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<Tensor> {
    IdxFile::parse(bytes)?.to_tensor()
}

/// Quantizes a `[0, 1]` value to the nearest byte.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_image_header() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
        bytes.extend((0..12).map(|i| i as u8 * 20));
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.shape(), &[2, 2, 3]);
    }

    #[test]
    fn rejects_unknown_magic() {
        let bytes = [0, 0, 8, 2, 0, 0, 0, 1, 7];
        assert!(matches!(parse_idx(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn full_byte_is_one() {
        let f = IdxFile::images(1, 1, 2, vec![255, 0]).unwrap();
        let t = f.to_tensor().unwrap();
        assert_eq!(t.values(), &[1.0, 0.0]);
    }

    #[test]
    fn labels_keep_integer_values() {
        let t = parse_idx(&IdxFile::labels(vec![3, 9, 0]).to_bytes()).unwrap();
        assert_eq!(t.values(), &[3.0, 9.0, 0.0]);
    }

    #[test]
    fn truncation_and_mismatch_are_distinct() {
        let good = IdxFile::images(1, 2, 2, vec![1, 2, 3, 4]).unwrap().to_bytes();
        assert!(matches!(
            IdxFile::parse(&good[..good.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(IdxFile::parse(&good[..6]), Err(Error::Truncated { .. })));
        assert!(matches!(IdxFile::parse(&good[..2]), Err(Error::Truncated { .. })));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(IdxFile::parse(&long), Err(Error::Malformed(_))));
    }

    proptest! {
        #[test]
        fn serialize_then_parse_round_trips(
            (n, r, c, payload) in (1usize..4, 1usize..5, 1usize..5)
                .prop_flat_map(|(n, r, c)| (Just(n), Just(r), Just(c), proptest::collection::vec(any::<u8>(), n * r * c)))
        ) {
            let f = IdxFile::images(n, r, c, payload).unwrap();
            let back = IdxFile::parse(&f.to_bytes()).unwrap();
            prop_assert_eq!(&back, &f);
            let t = back.to_tensor().unwrap();
            let requant: Vec<u8> = t.values().iter().map(|&v| quantize(v)).collect();
            prop_assert_eq!(requant, f.payload);
        }
    }
}
