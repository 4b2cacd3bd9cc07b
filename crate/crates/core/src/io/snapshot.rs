//! Binary weight snapshots.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SOSD"
//! 4       4     version (u32 LE) = 1
//! 8       4     rows (u32 LE)
//! 12      4     cols (u32 LE)
//! 16      8·r·c payload, f64 LE, row-major
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const MAGIC: [u8; 4] = *b"SOSD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

pub fn encode_snapshot(m: &DenseMatrix) -> Result<Vec<u8>> {
    m.check_finite()?;
    let rows = u32::try_from(m.rows()).map_err(|_| Error::shape("row count exceeds u32"))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::shape("column count exceeds u32"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.as_slice().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn bad(offset: usize, reason: impl Into<String>) -> Error {
    Error::Snapshot {
        offset,
        reason: reason.into(),
    }
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

/// Decodes a snapshot, reporting the byte offset of the first inconsistency.
pub fn decode_snapshot(bytes: &[u8]) -> Result<DenseMatrix> {
    if let Some(i) = MAGIC.iter().zip(bytes).position(|(a, b)| a != b) {
        return Err(bad(i, "bad magic"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(bad(bytes.len(), "truncated header"));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(bad(4, format!("unsupported version {version}")));
    }
    let rows = u32_at(bytes, 8) as usize;
    if rows == 0 {
        return Err(bad(8, "zero rows"));
    }
    let cols = u32_at(bytes, 12) as usize;
    if cols == 0 {
        return Err(bad(12, "zero columns"));
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| bad(8, "dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(bad(
            bytes.len().min(expected),
            format!("length {} but {rows}x{cols} needs {expected}", bytes.len()),
        ));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (k, chunk) in bytes[HEADER_LEN..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(bad(HEADER_LEN + 8 * k, "non-finite value"));
        }
        data.push(v);
    }
    DenseMatrix::from_vec(rows, cols, data)
}

pub fn write_snapshot(path: &Path, m: &DenseMatrix) -> Result<()> {
    std::fs::write(path, encode_snapshot(m)?).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<DenseMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_snapshot(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn offset_of(e: Error) -> usize {
        match e {
            Error::Snapshot { offset, .. } => offset,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn one_by_one_is_24_bytes() {
        let bytes = encode_snapshot(&DenseMatrix::identity(1)).unwrap();
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[..4], b"SOSD");
        assert_eq!(&bytes[16..], &1.0f64.to_le_bytes());
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = rng::gaussian_matrix(&mut rng::stream(1, 0), 8, 8, 1.0);
        let back = decode_snapshot(&encode_snapshot(&m).unwrap()).unwrap();
        assert_eq!(back.shape(), (8, 8));
        for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn signed_zero_and_subnormal_survive() {
        let m = DenseMatrix::from_vec(1, 3, vec![-0.0, 5e-324, f64::MIN_POSITIVE / 3.0]).unwrap();
        let back = decode_snapshot(&encode_snapshot(&m).unwrap()).unwrap();
        for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        let good = encode_snapshot(&DenseMatrix::identity(2)).unwrap();
        assert_eq!(offset_of(decode_snapshot(&good[..good.len() - 1]).unwrap_err()), 47);
        let mut b = good.clone();
        b[2] = b'X';
        assert_eq!(offset_of(decode_snapshot(&b).unwrap_err()), 2);
        let mut b = good.clone();
        b[4] = 2;
        assert_eq!(offset_of(decode_snapshot(&b).unwrap_err()), 4);
        let mut b = good.clone();
        b[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(offset_of(decode_snapshot(&b).unwrap_err()), 8);
        let mut b = good.clone();
        b[24..32].copy_from_slice(&f64::NAN.to_le_bytes());
        assert_eq!(offset_of(decode_snapshot(&b).unwrap_err()), 24);
        assert_eq!(offset_of(decode_snapshot(b"SO").unwrap_err()), 2);
        let mut long = good;
        long.push(0);
        assert_eq!(offset_of(decode_snapshot(&long).unwrap_err()), 48);
    }
}
