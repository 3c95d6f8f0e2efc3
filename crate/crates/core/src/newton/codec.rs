//! Binary state files.
//!
//! Little-endian layout:
//! `b"QBEBSTAT" | version u32 | k u32 | d u64 | n u64 | α f64 | γ f64 | grid d×f64 | weights dᵏ×f64 | crc32 u32`.
//! The checksum covers every byte before it.

use std::io::Write;

use serde::Serialize;

use crate::error::{Result, StateError};

pub const MAGIC: &[u8; 8] = b"QBEBSTAT";
pub const VERSION: u32 = 1;

const HEADER_LEN: usize = 8 + 4 + 4 + 8 + 8 + 8 + 8;
const CRC_LEN: usize = 4;

/// Decoded contents of a state file, before any semantic validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawState {
    pub k: u32,
    pub n: u64,
    pub alpha: f64,
    pub gamma: f64,
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
}

fn weight_count(k: u32, d: u64) -> Option<usize> {
    let d = usize::try_from(d).ok()?;
    d.checked_pow(k)
}

fn expected_len(k: u32, d: u64) -> Option<usize> {
    let d_us = usize::try_from(d).ok()?;
    let floats = d_us.checked_add(weight_count(k, d)?)?;
    floats.checked_mul(8)?.checked_add(HEADER_LEN + CRC_LEN)
}

pub fn encode(raw: &RawState) -> Vec<u8> {
    let d = raw.grid.len() as u64;
    let mut buf = Vec::with_capacity(expected_len(raw.k, d).unwrap_or(0));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&raw.k.to_le_bytes());
    buf.extend_from_slice(&d.to_le_bytes());
    buf.extend_from_slice(&raw.n.to_le_bytes());
    buf.extend_from_slice(&raw.alpha.to_le_bytes());
    buf.extend_from_slice(&raw.gamma.to_le_bytes());
    for v in raw.grid.iter().chain(&raw.weights) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

/// Parses a state file. Nothing is returned unless the checksum matches.
pub fn decode(bytes: &[u8]) -> std::result::Result<RawState, StateError> {
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(StateError::Truncated { expected: HEADER_LEN + CRC_LEN, found: bytes.len() });
    }
    let body = &bytes[..bytes.len() - CRC_LEN];
    let stored = u32_at(bytes, body.len());
    let computed = crc32fast::hash(body);
    let k = u32_at(bytes, 12);
    let d = u64_at(bytes, 16);
    let expected = expected_len(k, d);
    if stored != computed {
        // a short file fails the checksum too; report it as what it most likely is
        if &bytes[..8] == MAGIC && matches!(expected, Some(e) if e > bytes.len()) {
            return Err(StateError::Truncated { expected: expected.unwrap(), found: bytes.len() });
        }
        return Err(StateError::Checksum { stored, computed });
    }
    if &bytes[..8] != MAGIC {
        return Err(StateError::BadMagic);
    }
    let version = u32_at(bytes, 8);
    if version != VERSION {
        return Err(StateError::VersionMismatch { found: version, expected: VERSION });
    }
    let expected = expected.ok_or_else(|| StateError::Payload(format!("absurd size k={k}, d={d}")))?;
    if expected != bytes.len() {
        return Err(StateError::Truncated { expected, found: bytes.len() });
    }
    let d = d as usize;
    let floats_at = |i: usize| f64_at(bytes, HEADER_LEN + 8 * i);
    let grid = (0..d).map(floats_at).collect();
    let weights = (d..d + weight_count(k, d as u64).unwrap()).map(floats_at).collect();
    Ok(RawState {
        k,
        n: u64_at(bytes, 24),
        alpha: f64_at(bytes, 32),
        gamma: f64_at(bytes, 40),
        grid,
        weights,
    })
}

#[derive(Serialize)]
struct WeightLine<'a> {
    index: usize,
    theta: &'a [f64],
    weight: f64,
}

/// One JSON object per atom, e.g. `{"index":0,"theta":[0.5],"weight":0.25}`.
pub fn write_jsonl<W: Write>(
    mut out: W,
    atoms: impl Iterator<Item = (Vec<f64>, f64)>,
) -> Result<()> {
    for (index, (theta, weight)) in atoms.enumerate() {
        serde_json::to_writer(&mut out, &WeightLine { index, theta: &theta, weight })
            .map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RawState {
        RawState {
            k: 1,
            n: 42,
            alpha: 1.0,
            gamma: 0.99,
            grid: vec![0.5, 1.0, 1.5],
            weights: vec![0.2, 0.3, 0.5],
        }
    }

    #[test]
    fn round_trip() {
        let raw = sample();
        let bytes = encode(&raw);
        assert_eq!(bytes.len(), HEADER_LEN + 6 * 8 + 4);
        assert_eq!(decode(&bytes).unwrap(), raw);
    }

    #[test]
    fn every_corrupted_byte_is_caught() {
        let bytes = encode(&sample());
        for i in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x40;
            assert!(decode(&bad).is_err(), "flip at byte {i} went unnoticed");
        }
        let mut bad = bytes.clone();
        bad[HEADER_LEN + 3] ^= 1;
        assert!(matches!(decode(&bad), Err(StateError::Checksum { .. })));
    }

    #[test]
    fn truncation_and_header_errors() {
        let bytes = encode(&sample());
        assert!(matches!(decode(&bytes[..10]), Err(StateError::Truncated { .. })));
        let short = &bytes[..bytes.len() - 9];
        assert!(matches!(decode(short), Err(StateError::Truncated { .. })));

        let mut other = bytes[..bytes.len() - 4].to_vec();
        other[8..12].copy_from_slice(&7u32.to_le_bytes());
        let crc = crc32fast::hash(&other);
        other.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(decode(&other), Err(StateError::VersionMismatch { found: 7, expected: VERSION }));

        let mut magic = bytes[..bytes.len() - 4].to_vec();
        magic[0] = b'X';
        let crc = crc32fast::hash(&magic);
        magic.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(decode(&magic), Err(StateError::BadMagic));
    }

    #[test]
    fn jsonl_dump() {
        let mut out = Vec::new();
        write_jsonl(&mut out, vec![(vec![0.5], 0.25), (vec![1.0], 0.75)].into_iter()).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "{\"index\":0,\"theta\":[0.5],\"weight\":0.25}\n{\"index\":1,\"theta\":[1.0],\"weight\":0.75}\n"
        );
    }
}
