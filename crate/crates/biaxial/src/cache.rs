//! `NSM1` on-disk note-state matrices.
//!
//! One record is the 4-byte magic `NSM1`, then `low_note`, `n_notes` and
//! `n_steps` as little-endian `u32`, then `ceil(2·N·T / 8)` bytes of packed
//! cells. Cells are visited row-major (note-major, steps within a note);
//! cell `i` contributes its play bit as bit `2i` and its articulation bit
//! as bit `2i + 1`, bits filling each byte from the most significant end.
//! A cache file is a plain concatenation of records.

use std::path::Path;

use biaxial_core::NoteStateMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NSM1";

pub fn encode_matrix(m: &NoteStateMatrix, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&u32::from(m.low_note()).to_le_bytes());
    out.extend_from_slice(&(m.n_notes() as u32).to_le_bytes());
    out.extend_from_slice(&(m.n_steps() as u32).to_le_bytes());
    let n_bits = 2 * m.n_notes() * m.n_steps();
    let start = out.len();
    out.resize(start + n_bits.div_ceil(8), 0);
    let packed = &mut out[start..];
    let mut bit = 0usize;
    for n in 0..m.n_notes() {
        for &cell in m.row(n) {
            for on in [cell.play(), cell.articulate()] {
                if on {
                    packed[bit / 8] |= 0x80 >> (bit % 8);
                }
                bit += 1;
            }
        }
    }
}

/// Decode one record from the front of `bytes`, returning it and the number
/// of bytes consumed.
pub fn decode_matrix(bytes: &[u8]) -> Result<(NoteStateMatrix, usize)> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::format("NSM1", "missing NSM1 magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (low, n, t) = (word(4), word(8), word(12));
    if low > 127 {
        return Err(Error::format("NSM1", "low note above 127"));
    }
    let n_bytes = (2 * n)
        .checked_mul(t)
        .map(|b| b.div_ceil(8))
        .filter(|&b| b <= bytes.len() - 16)
        .ok_or_else(|| Error::format("NSM1", "record truncated"))?;
    let packed = &bytes[16..16 + n_bytes];
    let bit = |k: usize| packed[k / 8] & (0x80 >> (k % 8)) != 0;
    let cells: Vec<(bool, bool)> = (0..n * t).map(|i| (bit(2 * i), bit(2 * i + 1))).collect();
    let m = NoteStateMatrix::from_bits(low as u8, n, t, &cells)?;
    Ok((m, 16 + n_bytes))
}

pub fn encode_cache(matrices: &[NoteStateMatrix]) -> Vec<u8> {
    let mut out = Vec::new();
    for m in matrices {
        encode_matrix(m, &mut out);
    }
    out
}

pub fn decode_cache(mut bytes: &[u8]) -> Result<Vec<NoteStateMatrix>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (m, used) = decode_matrix(bytes)?;
        out.push(m);
        bytes = &bytes[used..];
    }
    Ok(out)
}

pub fn read_cache(path: &Path) -> Result<Vec<NoteStateMatrix>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cache(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use biaxial_core::NoteState;

    #[test]
    fn single_articulated_cell_layout() {
        let mut m = NoteStateMatrix::new(60, 2, 3).unwrap();
        m.set(0, 1, NoteState::Articulate);
        m.set(1, 2, NoteState::Sustain);
        let mut out = Vec::new();
        encode_matrix(&m, &mut out);
        assert_eq!(&out[..4], b"NSM1");
        assert_eq!(&out[4..16], &[60, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]);
        // cells: 00 11 00 | 00 00 10 -> 0011_0000 0010_0000
        assert_eq!(&out[16..], &[0b0011_0000, 0b0010_0000]);
        assert_eq!(decode_matrix(&out).unwrap(), (m, 18));
    }

    #[test]
    fn forbidden_cell_and_truncation_rejected() {
        let m = NoteStateMatrix::new(60, 1, 4).unwrap();
        let mut out = Vec::new();
        encode_matrix(&m, &mut out);
        out[16] = 0b0100_0000;
        assert!(matches!(
            decode_matrix(&out),
            Err(Error::Core(biaxial_core::Error::InvariantViolation {
                note: 0,
                step: 0
            }))
        ));
        assert!(decode_matrix(&out[..16]).is_err());
        assert!(decode_cache(b"NSM2").is_err());
    }
}
