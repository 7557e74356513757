//! Binary voxel dump files.
//!
//! Layout, little-endian with no padding:
//!
//! | field        | type              |
//! |--------------|-------------------|
//! | magic        | `b"OCCD"`         |
//! | version      | u32 (= 1)         |
//! | n            | u64               |
//! | num_classes  | u16 (S)           |
//! | feature_dim  | u16               |
//! | flags        | u32               |
//! | labels       | n x u16           |
//! | logits       | n x (S+1) x f32   |
//! | features     | n x d x f32, if flags bit 0 |
//! | sigmas       | n x f32, if flags bit 1     |
//! | depths       | n x f32, if flags bit 2     |

use std::path::Path;

use crate::error::{Error, Result};
use crate::occ::VoxelBatch;

pub const MAGIC: [u8; 4] = *b"OCCD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;
pub const FLAG_FEATURES: u32 = 1;
pub const FLAG_SIGMAS: u32 = 2;
pub const FLAG_DEPTHS: u32 = 4;

fn flags_of(b: &VoxelBatch) -> u32 {
    let mut f = 0;
    if b.features.is_some() {
        f |= FLAG_FEATURES;
    }
    if b.sigmas.is_some() {
        f |= FLAG_SIGMAS;
    }
    if b.depths.is_some() {
        f |= FLAG_DEPTHS;
    }
    f
}

/// Byte length implied by a header, `None` on overflow.
fn payload_len(n: u64, num_classes: u16, feature_dim: u16, flags: u32) -> Option<u64> {
    let mut per_voxel: u64 = 2 + 4 * (num_classes as u64 + 1);
    if flags & FLAG_FEATURES != 0 {
        per_voxel += 4 * feature_dim as u64;
    }
    if flags & FLAG_SIGMAS != 0 {
        per_voxel += 4;
    }
    if flags & FLAG_DEPTHS != 0 {
        per_voxel += 4;
    }
    n.checked_mul(per_voxel)?.checked_add(HEADER_LEN as u64)
}

/// Serializes a batch; refuses batches that violate their invariants.
pub fn encode_dump(b: &VoxelBatch) -> Result<Vec<u8>> {
    b.validate()?;
    let num_classes = u16::try_from(b.num_classes)
        .map_err(|_| Error::InvalidBatch("num_classes does not fit in u16".into()))?;
    let feature_dim = u16::try_from(b.feature_dim)
        .map_err(|_| Error::InvalidBatch("feature_dim does not fit in u16".into()))?;
    let flags = flags_of(b);
    let n = b.n() as u64;
    let len = payload_len(n, num_classes, feature_dim, flags).expect("in-memory batch size fits") as usize;
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&num_classes.to_le_bytes());
    out.extend_from_slice(&feature_dim.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    for l in &b.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    let floats = [Some(&b.logits), b.features.as_ref(), b.sigmas.as_ref(), b.depths.as_ref()];
    for x in floats.into_iter().flatten().flatten() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    debug_assert_eq!(out.len(), len);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> &'a [u8] {
        let s = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        s
    }

    fn u16s(&mut self, n: usize) -> Vec<u16> {
        self.take(2 * n)
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect()
    }

    fn f32s(&mut self, n: usize) -> Vec<f32> {
        self.take(4 * n)
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    }
}

/// Parses a dump, checking magic, version and exact length.
pub fn decode_dump(bytes: &[u8]) -> Result<VoxelBatch> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::SizeMismatch {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let num_classes = u16::from_le_bytes(bytes[16..18].try_into().unwrap());
    let feature_dim = u16::from_le_bytes(bytes[18..20].try_into().unwrap());
    let flags = u32::from_le_bytes(bytes[20..24].try_into().unwrap());
    if flags & !(FLAG_FEATURES | FLAG_SIGMAS | FLAG_DEPTHS) != 0 {
        return Err(Error::Parse(format!("unknown flag bits {flags:#x}")));
    }
    let expected = payload_len(n, num_classes, feature_dim, flags).unwrap_or(u64::MAX);
    if expected != bytes.len() as u64 {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let n = n as usize;
    let w = num_classes as usize + 1;
    let d = feature_dim as usize;
    let mut c = Cursor {
        bytes,
        pos: HEADER_LEN,
    };
    let labels = c.u16s(n);
    let logits = c.f32s(n * w);
    let features = (flags & FLAG_FEATURES != 0).then(|| c.f32s(n * d));
    let sigmas = (flags & FLAG_SIGMAS != 0).then(|| c.f32s(n));
    let depths = (flags & FLAG_DEPTHS != 0).then(|| c.f32s(n));
    let batch = VoxelBatch {
        num_classes: num_classes as usize,
        feature_dim: if features.is_some() { d } else { 0 },
        labels,
        logits,
        features,
        sigmas,
        depths,
    };
    batch.validate()?;
    Ok(batch)
}

pub fn write_dump(batch: &VoxelBatch, path: &Path) -> Result<()> {
    let bytes = encode_dump(batch)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<VoxelBatch> {
    decode_dump(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occ::IGNORE;
    use proptest::prelude::*;

    #[test]
    fn empty_batch_is_header_only() {
        let b = VoxelBatch::new(4, Vec::new());
        let bytes = encode_dump(&b).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(&bytes[..4], b"OCCD");
        assert_eq!(decode_dump(&bytes).unwrap(), b);
    }

    #[test]
    fn flags_zero_means_no_optional_arrays() {
        let mut b = VoxelBatch::new(2, vec![0, 1, IGNORE]);
        b.logits = vec![1.5; 9];
        let bytes = encode_dump(&b).unwrap();
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 0);
        assert_eq!(bytes.len(), HEADER_LEN + 3 * 2 + 9 * 4);
    }

    #[test]
    fn distinct_read_errors() {
        let mut b = VoxelBatch::new(1, vec![0, 1]);
        b.sigmas = Some(vec![0.5, 0.25]);
        let good = encode_dump(&b).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        let e = decode_dump(&bad).unwrap_err();
        assert_eq!(e.to_string(), "bad magic");

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode_dump(&bad), Err(Error::UnsupportedVersion(2))));

        let e = decode_dump(&good[..good.len() - 1]).unwrap_err();
        assert!(e.to_string().starts_with("size mismatch"), "{e}");
        let codes = [
            Error::BadMagic.code(),
            Error::UnsupportedVersion(2).code(),
            e.code(),
        ];
        assert_eq!(codes, [10, 11, 12]);
    }

    #[test]
    fn invalid_batch_is_not_written() {
        let mut b = VoxelBatch::new(1, vec![0, 7]);
        b.logits = vec![0.0; 4];
        assert!(encode_dump(&b).is_err());
    }

    fn batch() -> impl Strategy<Value = VoxelBatch> {
        (0usize..40, 1usize..6, 0usize..5, any::<[bool; 2]>()).prop_flat_map(|(n, s, d, [sig, dep])| {
            let w = s + 1;
            (
                prop::collection::vec(prop_oneof![(0..=s as u16), Just(IGNORE)], n),
                prop::collection::vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), n * w),
                prop::collection::vec(-1e3f32..1e3, n * d),
                prop::collection::vec(1e-3f32..10.0, n),
                prop::collection::vec(0.0f32..100.0, n),
            )
                .prop_map(move |(labels, logits, features, sigmas, depths)| VoxelBatch {
                    num_classes: s,
                    feature_dim: d,
                    labels,
                    logits,
                    features: (d > 0).then_some(features),
                    sigmas: sig.then_some(sigmas),
                    depths: dep.then_some(depths),
                })
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(b in batch()) {
            let bytes = encode_dump(&b).unwrap();
            let back = decode_dump(&bytes).unwrap();
            prop_assert_eq!(&back, &b);
            prop_assert_eq!(encode_dump(&back).unwrap(), bytes);
        }
    }
}
