//! Binary sketch format.
//!
//! Little-endian, no padding:
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `"DSK1"`                 |
//! | 4      | 2    | format version (`u16`, = 1)    |
//! | 6      | 4    | `t` (`u32`)                    |
//! | 10     | 4    | `k` (`u32`)                    |
//! | 14     | 8    | `n` (`u64`)                    |
//! | 22     | 8    | master seed (`u64`)            |
//! | 30     | 8·t·k| counters, binary64, row-major  |
//!
//! Counters are always written as binary64; `f32` sketches widen on write
//! and round on read.

use thiserror::Error;

use crate::scalar::Scalar;
use crate::sketch::{CountSketch, SketchDims};

pub const MAGIC: [u8; 4] = *b"DSK1";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated: need {expected} bytes, have {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{extra} trailing bytes after the counter table")]
    TrailingBytes { extra: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("non-finite counter at index {0}")]
    NonFiniteCounter(usize),
}

/// Encoded length of a sketch with `t * k` counters.
pub fn encoded_len(dims: &SketchDims) -> usize {
    HEADER_LEN + 8 * dims.table_len()
}

pub fn serialize<T: Scalar>(sketch: &CountSketch<T>) -> Vec<u8> {
    let dims = sketch.dims();
    let mut out = Vec::with_capacity(encoded_len(&dims));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.t as u32).to_le_bytes());
    out.extend_from_slice(&(dims.k as u32).to_le_bytes());
    out.extend_from_slice(&(dims.n as u64).to_le_bytes());
    out.extend_from_slice(&sketch.master_seed().to_le_bytes());
    for c in sketch.counters() {
        out.extend_from_slice(&c.as_f64().to_le_bytes());
    }
    out
}

fn take<const N: usize>(bytes: &[u8], at: usize) -> [u8; N] {
    bytes[at..at + N]
        .try_into()
        .expect("length checked by caller")
}

pub fn deserialize<T: Scalar>(bytes: &[u8]) -> Result<CountSketch<T>, WireError> {
    if bytes.len() < 4 {
        return Err(WireError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = take(bytes, 0);
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u16::from_le_bytes(take(bytes, 4));
    if version != FORMAT_VERSION {
        return Err(WireError::UnsupportedVersion(version));
    }
    let t = u32::from_le_bytes(take(bytes, 6)) as usize;
    let k = u32::from_le_bytes(take(bytes, 10)) as usize;
    let n = u64::from_le_bytes(take(bytes, 14));
    let seed = u64::from_le_bytes(take(bytes, 22));
    let n = usize::try_from(n)
        .map_err(|_| WireError::InvalidHeader(format!("n={n} exceeds address space")))?;
    let dims = SketchDims::new(t, k, n).map_err(|e| WireError::InvalidHeader(e.to_string()))?;

    let body = dims
        .table_len()
        .checked_mul(8)
        .ok_or_else(|| WireError::InvalidHeader("t * k too large".into()))?;
    let expected = HEADER_LEN + body;
    if bytes.len() < expected {
        return Err(WireError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(WireError::TrailingBytes {
            extra: bytes.len() - expected,
        });
    }
    let mut counters = Vec::with_capacity(dims.table_len());
    for (idx, chunk) in bytes[HEADER_LEN..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        if !v.is_finite() {
            return Err(WireError::NonFiniteCounter(idx));
        }
        counters.push(T::of(v));
    }
    Ok(CountSketch::from_counters(dims, seed, counters).expect("dims validated"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::sketch_of;

    fn sample() -> CountSketch<f64> {
        let dims = SketchDims::new(2, 3, 10).unwrap();
        let g: Vec<f64> = (0..10).map(|i| i as f64 * 0.37 - 1.5).collect();
        sketch_of(dims, 42, &g).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = serialize(&sample());
        assert_eq!(bytes.len(), HEADER_LEN + 6 * 8);
        assert_eq!(&bytes[..4], b"DSK1");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[2, 0, 0, 0]);
        assert_eq!(&bytes[10..14], &[3, 0, 0, 0]);
        assert_eq!(&bytes[14..22], &10u64.to_le_bytes());
        assert_eq!(&bytes[22..30], &42u64.to_le_bytes());
        let back: CountSketch<f64> = deserialize(&bytes).unwrap();
        assert_eq!(back.dims(), SketchDims { t: 2, k: 3, n: 10 });
        assert_eq!(back.master_seed(), 42);
    }

    #[test]
    fn round_trip_bit_exact() {
        let s = sample();
        let back: CountSketch<f64> = deserialize(&serialize(&s)).unwrap();
        assert_eq!(back, s);
        for (a, b) in back.counters().iter().zip(s.counters()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn distinct_parse_errors() {
        let bytes = serialize(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            deserialize::<f64>(&bad),
            Err(WireError::BadMagic(_))
        ));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(
            deserialize::<f64>(&bad),
            Err(WireError::UnsupportedVersion(2))
        );
        assert!(matches!(
            deserialize::<f64>(&bytes[..20]),
            Err(WireError::Truncated { .. })
        ));
        assert!(matches!(
            deserialize::<f64>(&bytes[..bytes.len() - 1]),
            Err(WireError::Truncated { .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(
            deserialize::<f64>(&long),
            Err(WireError::TrailingBytes { extra: 1 })
        );
        let mut bad = bytes.clone();
        bad[6..10].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            deserialize::<f64>(&bad),
            Err(WireError::InvalidHeader(_))
        ));
        let mut bad = bytes;
        bad[HEADER_LEN..HEADER_LEN + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert_eq!(
            deserialize::<f64>(&bad),
            Err(WireError::NonFiniteCounter(0))
        );
    }
}
