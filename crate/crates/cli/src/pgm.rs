//! 16-bit binary PGM export.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// `P5`, maxval 65535, big-endian samples, linear min–max scaling. A
/// constant image maps to all zeros.
pub fn encode_pgm(data: &[f64], rows: usize, cols: usize) -> Result<Vec<u8>> {
    if data.len() != rows * cols {
        bail!("image has {} samples, expected {rows}×{cols}", data.len());
    }
    if data.iter().any(|v| !v.is_finite()) {
        bail!("image contains non-finite values");
    }
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut out = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    out.reserve(2 * data.len());
    for &v in data {
        let s = if hi > lo {
            ((v - lo) / (hi - lo) * 65535.0).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&s.to_be_bytes());
    }
    Ok(out)
}

pub fn export_pgm(data: &[f64], rows: usize, cols: usize, path: &Path) -> Result<()> {
    let bytes = encode_pgm(data, rows, cols)?;
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Parses a file written by [`encode_pgm`]: `(rows, cols, samples)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("truncated PGM header");
        }
        fields.push(std::str::from_utf8(&bytes[start..pos])?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "65535" {
        bail!("not a 16-bit binary PGM");
    }
    let cols: usize = fields[1].parse()?;
    let rows: usize = fields[2].parse()?;
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() != 2 * rows * cols {
        bail!("PGM body has {} bytes, expected {}", body.len(), 2 * rows * cols);
    }
    let samples = body
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok((rows, cols, samples))
}
