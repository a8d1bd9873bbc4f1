// SPDX-License-Identifier: MIT OR Apache-2.0

//! On-disk formats.
//!
//! ## Tensor files (`.tlt`)
//!
//! ```text
//! offset  size        field
//! 0       4           magic "TLT1"
//! 4       4           ndim, u32 little-endian
//! 8       8·ndim      dims, u64 little-endian each
//! …       4·Πdims     payload, f32 little-endian, row-major
//! ```
//!
//! A one-element tensor holding `1.0` is exactly
//! `54 4C 54 31 01 00 00 00 01 00 00 00 00 00 00 00 00 00 80 3F`.
//!
//! Metadata lives next to the payload in `<stem>.meta.json`.
//!
//! ## Matrix CSV
//!
//! No header, comma separated, `\n` after every row, fixed 8 decimals.
//!
//! ## SVG heatmaps
//!
//! One `<rect>` per cell, colored by a five-stop piecewise-linear ramp
//! (`#440154`, `#3B528B`, `#21918C`, `#5EC962`, `#FDE725`).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const TENSOR_MAGIC: &[u8; 4] = b"TLT1";

/// 64-bit FNV-1a.
#[derive(Debug, Clone)]
pub struct Fnv1a(u64);

impl Fnv1a {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    pub fn new() -> Self {
        Self(Self::OFFSET)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a::new();
    h.update(bytes);
    h.finish()
}

/// Encodes a tensor into its file bytes.
pub fn encode_tensor(dims: &[u64], values: &[f32]) -> Result<Vec<u8>> {
    let count = element_count(dims)?;
    if count != values.len() {
        return Err(Error::shape(format!(
            "dims {dims:?} describe {count} values, got {}",
            values.len()
        )));
    }
    let mut out = Vec::with_capacity(8 + 8 * dims.len() + 4 * values.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn element_count(dims: &[u64]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| {
            usize::try_from(d).ok().and_then(|d| acc.checked_mul(d))
        })
        .ok_or_else(|| Error::shape(format!("dims {dims:?} overflow")))
}

pub fn write_tensor(path: impl AsRef<Path>, dims: &[u64], values: &[f32]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(dims, values)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decodes tensor file bytes; `path` is only used in error messages.
pub fn decode_tensor(path: &Path, bytes: &[u8]) -> Result<(Vec<u64>, Vec<f32>)> {
    if bytes.len() < 8 || &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let ndim = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let header = 8 + 8 * ndim;
    if bytes.len() < header {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<u64> = bytes[8..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let count = element_count(&dims)?;
    let expected = count
        .checked_mul(4)
        .ok_or_else(|| Error::shape("tensor too large"))?;
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    let values = payload[..expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((dims, values))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<(Vec<u64>, Vec<f32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(path, &bytes)
}

/// `foo.tlt` / `foo.csv` → `foo.meta.json`.
pub fn sidecar_path(path: impl AsRef<Path>) -> PathBuf {
    path.as_ref().with_extension("meta.json")
}

/// Artifact kinds carried by [`MetaSidecar`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Dataset,
    Captures,
    Weights,
    Steering,
    Probes,
}

/// JSON metadata written next to every tensor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaSidecar {
    pub kind: ArtifactKind,
    pub dims: Vec<u64>,
    /// 16 hex digits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_hash: Option<String>,
    /// 16 hex digits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_checksum: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u32>>,
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl MetaSidecar {
    pub fn new(kind: ArtifactKind, dims: Vec<u64>) -> Self {
        Self {
            kind,
            dims,
            model_hash: None,
            dataset_checksum: None,
            labels: None,
            extra: serde_json::Map::new(),
        }
    }

    pub fn model_hash(&self) -> Option<u64> {
        self.model_hash.as_deref().and_then(parse_hex)
    }

    pub fn dataset_checksum(&self) -> Option<u64> {
        self.dataset_checksum.as_deref().and_then(parse_hex)
    }
}

pub fn hex(v: u64) -> String {
    format!("{v:016x}")
}

pub fn parse_hex(s: &str) -> Option<u64> {
    u64::from_str_radix(s, 16).ok()
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// CSV body for a matrix.
pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for r in 0..m.rows() {
        for (c, v) in m.row(r).iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            write!(out, "{v:.8}").expect("writing to String");
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, matrix_to_csv(m)).map_err(|e| Error::io(path, e))
}

pub fn parse_matrix_csv(text: &str) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: Vec<f64> = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad CSV value '{t}': {e}")))
            })
            .collect::<Result<_>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::shape(format!(
                    "CSV row {rows} has {} columns, expected {c}",
                    row.len()
                )))
            }
            _ => {}
        }
        data.extend(row);
        rows += 1;
    }
    Matrix::new(rows, cols.unwrap_or(0), data)
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_csv(&text)
}

const RAMP: [(f64, [u8; 3]); 5] = [
    (0.0, [0x44, 0x01, 0x54]),
    (0.25, [0x3B, 0x52, 0x8B]),
    (0.5, [0x21, 0x91, 0x8C]),
    (0.75, [0x5E, 0xC9, 0x62]),
    (1.0, [0xFD, 0xE7, 0x25]),
];

/// Heatmap color for `v ∈ [0, 1]` (clamped), as `#RRGGBB`.
pub fn colormap(v: f64) -> String {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let seg = RAMP
        .windows(2)
        .position(|w| v <= w[1].0)
        .unwrap_or(RAMP.len() - 2);
    let (x0, c0) = RAMP[seg];
    let (x1, c1) = RAMP[seg + 1];
    let t = (v - x0) / (x1 - x0);
    let ch = |i: usize| {
        let a = f64::from(c0[i]);
        let b = f64::from(c1[i]);
        (a + (b - a) * t).round() as u8
    };
    format!("#{:02X}{:02X}{:02X}", ch(0), ch(1), ch(2))
}

const CELL: usize = 20;
const MARGIN: usize = 30;

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// SVG document for a heatmap, row 0 at the top.
pub fn svg_heatmap(m: &Matrix, title: &str) -> String {
    let width = 2 * MARGIN + CELL * m.cols();
    let height = 2 * MARGIN + CELL * m.rows();
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{MARGIN}" y="{}" font-family="sans-serif" font-size="14">{}</text>"#,
        MARGIN - 10,
        escape_xml(title)
    )
    .unwrap();
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            let v = m[(r, c)];
            writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="{}"><title>({}, {}) {v:.4}</title></rect>"#,
                MARGIN + c * CELL,
                MARGIN + r * CELL,
                colormap(v),
                r,
                c
            )
            .unwrap();
        }
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_svg_heatmap(path: impl AsRef<Path>, m: &Matrix, title: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, svg_heatmap(m, title)).map_err(|e| Error::io(path, e))
}
