//! `CFF1` feature files and `CFL1` label files.
//!
//! ```text
//! CFF1: "CFF1" | u32 version | u64 n | u32 d | u8 l2_flag | 3 x u8 zero | n*d f32
//! CFL1: "CFL1" | u32 version | u64 n | u32 num_classes | n u32
//! ```
//!
//! All integers and floats are little-endian; the payload is row-major.

use std::fs;
use std::path::Path;

use super::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"CFF1";
pub const LABEL_MAGIC: &[u8; 4] = b"CFL1";
pub const FORMAT_VERSION: u32 = 1;

const FEATURE_HEADER_LEN: usize = 24;
const LABEL_HEADER_LEN: usize = 20;

pub fn encode_features(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let d = u32::try_from(m.d())
        .map_err(|_| Error::Format(format!("dimension {} does not fit in u32", m.d())))?;
    let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + 4 * m.n() * m.d());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.n() as u64).to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    out.push(u8::from(m.is_l2_normalized()));
    out.extend_from_slice(&[0u8; 3]);
    for (i, &v) in m.as_slice().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::Validation(format!(
                "value {v} at flat index {i} overflows 32-bit float"
            )));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(short_header(FEATURE_MAGIC, bytes));
    }
    check_magic(bytes, FEATURE_MAGIC)?;
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as u64;
    let l2 = match bytes[20] {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("l2 flag must be 0 or 1, got {other}"))),
    };
    if bytes[21..24] != [0, 0, 0] {
        return Err(Error::Format("reserved header bytes are not zero".into()));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("header shape {n}x{d} overflows")))?;
    let payload = &bytes[FEATURE_HEADER_LEN..];
    if payload.len() as u64 != expected {
        return Err(Error::Truncated {
            expected,
            actual: payload.len() as u64,
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FeatureMatrix::from_vec(n as usize, d as usize, values)?.with_l2_flag(l2)
}

pub fn encode_labels(l: &LabelVector) -> Result<Vec<u8>> {
    let classes = u32::try_from(l.num_classes()).map_err(|_| {
        Error::Format(format!("{} classes do not fit in u32", l.num_classes()))
    })?;
    let mut out = Vec::with_capacity(LABEL_HEADER_LEN + 4 * l.n());
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(l.n() as u64).to_le_bytes());
    out.extend_from_slice(&classes.to_le_bytes());
    for &v in l.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelVector> {
    if bytes.len() < LABEL_HEADER_LEN {
        return Err(short_header(LABEL_MAGIC, bytes));
    }
    check_magic(bytes, LABEL_MAGIC)?;
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let classes = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    let expected = n
        .checked_mul(4)
        .ok_or_else(|| Error::Format(format!("label count {n} overflows")))?;
    let payload = &bytes[LABEL_HEADER_LEN..];
    if payload.len() as u64 != expected {
        return Err(Error::Truncated {
            expected,
            actual: payload.len() as u64,
        });
    }
    let labels = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LabelVector::new(labels, classes as usize)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

pub fn write_features(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(m)?).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_labels(&bytes)
}

pub fn write_labels(path: impl AsRef<Path>, l: &LabelVector) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_labels(l)?).map_err(|e| Error::io(path, e))
}

fn check_magic(bytes: &[u8], magic: &[u8; 4]) -> Result<()> {
    if &bytes[0..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[0..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {FORMAT_VERSION}"
        )));
    }
    Ok(())
}

fn short_header(magic: &[u8; 4], bytes: &[u8]) -> Error {
    if bytes.len() >= 4 && &bytes[0..4] != magic {
        return Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[0..4]),
            String::from_utf8_lossy(magic)
        ));
    }
    let header = if magic == FEATURE_MAGIC {
        FEATURE_HEADER_LEN
    } else {
        LABEL_HEADER_LEN
    };
    Error::Truncated {
        expected: header as u64,
        actual: bytes.len() as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(n: u64, d: u32, l2: u8) -> Vec<u8> {
        let mut b = b"CFF1".to_vec();
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&n.to_le_bytes());
        b.extend_from_slice(&d.to_le_bytes());
        b.extend_from_slice(&[l2, 0, 0, 0]);
        b
    }

    #[test]
    fn decodes_hand_built_file() {
        let mut b = header(2, 3, 0);
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.5] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let m = decode_features(&b).unwrap();
        assert_eq!((m.n(), m.d()), (2, 3));
        assert_eq!(m.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.5]);
        assert_eq!(encode_features(&m).unwrap(), b);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut b = header(0, 3, 0);
        b[0] = b'X';
        assert!(matches!(decode_features(&b), Err(Error::Format(_))));
        let mut b = header(0, 3, 0);
        b[4] = 2;
        assert!(matches!(decode_features(&b), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_payload_length_mismatch() {
        let mut b = header(2, 2, 0);
        b.extend_from_slice(&[0u8; 12]);
        assert!(matches!(
            decode_features(&b),
            Err(Error::Truncated {
                expected: 16,
                actual: 12
            })
        ));
        b.extend_from_slice(&[0u8; 8]);
        assert!(matches!(decode_features(&b), Err(Error::Truncated { .. })));
    }

    #[test]
    fn rejects_non_finite_payload() {
        let mut b = header(1, 1, 0);
        b.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_features(&b), Err(Error::Validation(_))));
    }

    #[test]
    fn checks_l2_flag_against_payload() {
        let mut b = header(1, 2, 1);
        b.extend_from_slice(&3.0f32.to_le_bytes());
        b.extend_from_slice(&4.0f32.to_le_bytes());
        assert!(matches!(decode_features(&b), Err(Error::Validation(_))));
    }

    #[test]
    fn label_file_layout() {
        let l = LabelVector::new(vec![2, 0, 1], 3).unwrap();
        let b = encode_labels(&l).unwrap();
        assert_eq!(&b[0..4], b"CFL1");
        assert_eq!(b.len(), 20 + 12);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 3);
        assert_eq!(decode_labels(&b).unwrap(), l);
        assert!(matches!(
            decode_labels(&b[..b.len() - 1]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let l = LabelVector::new(vec![2, 0, 1], 3).unwrap();
        let mut b = encode_labels(&l).unwrap();
        b[16] = 2;
        assert!(matches!(decode_labels(&b), Err(Error::Validation(_))));
    }
}
