//! Feature-map and label containers plus their on-disk formats.
//!
//! Two little-endian binary formats carry data between a training process
//! and the offline tools:
//!
//! Feature dump (`PEDF`):
//!
//! | bytes  | content                         |
//! |--------|---------------------------------|
//! | 0..4   | magic `PEDF`                    |
//! | 4      | format version, currently 1     |
//! | 5      | dtype: 0 = f32, 1 = f64         |
//! | 6..8   | reserved, zero on write         |
//! | 8..16  | `n` rows, u64                   |
//! | 16..24 | `d` columns, u64                |
//! | 24..   | `n * d` values, row-major       |
//!
//! Label dump (`PEDL`):
//!
//! | bytes | content                     |
//! |-------|-----------------------------|
//! | 0..4  | magic `PEDL`                |
//! | 4     | format version, currently 1 |
//! | 5..8  | reserved, zero on write     |
//! | 8..16 | `n` labels, u64             |
//! | 16..  | `n` u32 labels              |
//!
//! Files ending in `.csv` are parsed as text instead: features as one row
//! of floats per line, labels as a single integer column, either with an
//! optional header line. Labels are 1-based class ids; an alphabet of size
//! `p` must use every value in `1..=p`.
//!
//! All loaders read the whole file into memory; errors carry the file path
//! and a byte offset where one makes sense. Values constructed in memory
//! use the path sentinel `<memory>` and element indices as offsets.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FEATURE_MAGIC: [u8; 4] = *b"PEDF";
pub const LABEL_MAGIC: [u8; 4] = *b"PEDL";
pub const FORMAT_VERSION: u8 = 1;

const FEATURE_HEADER_LEN: usize = 24;
const LABEL_HEADER_LEN: usize = 16;

/// Path sentinel used in errors raised by in-memory constructors.
pub const MEMORY_PATH: &str = "<memory>";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: failed to read file: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: failed to write file: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: file too short for header: need {needed} bytes, found {found}")]
    TruncatedHeader {
        path: String,
        needed: usize,
        found: usize,
    },
    #[error("{path}: bad magic {found:?} at offset 0, expected {expected:?}")]
    BadMagic {
        path: String,
        found: [u8; 4],
        expected: [u8; 4],
    },
    #[error("{path}: unsupported format version {found} at offset 4, expected {FORMAT_VERSION}")]
    UnsupportedVersion { path: String, found: u8 },
    #[error("{path}: unknown dtype tag {found} at offset 5, expected 0 (f32) or 1 (f64)")]
    UnsupportedDtype { path: String, found: u8 },
    #[error("{path}: payload truncated: header promises {expected} bytes from offset {payload_start}, found {found}")]
    TruncatedPayload {
        path: String,
        payload_start: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: {found} trailing bytes after payload ending at offset {payload_end}")]
    TrailingBytes {
        path: String,
        payload_end: usize,
        found: usize,
    },
    #[error("{path}: non-finite value at row {row}, column {col} (offset {offset})")]
    NonFiniteValue {
        path: String,
        row: usize,
        col: usize,
        offset: usize,
    },
    #[error("{path}: label 0 at index {index} (offset {offset}); labels are 1-based class ids")]
    ZeroLabel {
        path: String,
        index: usize,
        offset: usize,
    },
    #[error("{path}: class {class} absent although labels reach {alphabet}; classes must cover 1..={alphabet}")]
    MissingClass {
        path: String,
        class: u32,
        alphabet: u32,
    },
    #[error("{path}: invalid shape: {detail}")]
    InvalidShape { path: String, detail: String },
    #[error("{path}: line {line}: {detail}")]
    Csv {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("feature matrix has {features_n} rows but label vector has {labels_n}")]
    LengthMismatch { features_n: usize, labels_n: usize },
}

/// Storage precision of a feature dump. Values are always handled as f64
/// in memory; `F32` matrices hold values already rounded through f32 so a
/// write/read round trip is exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageDtype {
    F32,
    F64,
}

impl StorageDtype {
    fn tag(self) -> u8 {
        match self {
            StorageDtype::F32 => 0,
            StorageDtype::F64 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            StorageDtype::F32 => 4,
            StorageDtype::F64 => 8,
        }
    }
}

impl fmt::Display for StorageDtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StorageDtype::F32 => write!(f, "f32"),
            StorageDtype::F64 => write!(f, "f64"),
        }
    }
}

impl FromStr for StorageDtype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(StorageDtype::F32),
            "f64" => Ok(StorageDtype::F64),
            other => Err(format!("unknown dtype {other:?}, expected f32 or f64")),
        }
    }
}

/// An `n x d` matrix of finite feature values, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
    dtype: StorageDtype,
}

impl FeatureMatrix {
    /// Wraps an f64 matrix, rejecting empty shapes and non-finite values.
    pub fn new(data: Array2<f64>) -> Result<Self, IoError> {
        Self::with_dtype(data, StorageDtype::F64)
    }

    /// Like [`FeatureMatrix::new`] but with an explicit storage precision.
    /// `F32` rounds every value through f32 immediately.
    pub fn with_dtype(mut data: Array2<f64>, dtype: StorageDtype) -> Result<Self, IoError> {
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return Err(IoError::InvalidShape {
                path: MEMORY_PATH.to_string(),
                detail: format!("feature matrix must be non-empty, got {n} x {d}"),
            });
        }
        if dtype == StorageDtype::F32 {
            data.mapv_inplace(|v| v as f32 as f64);
        }
        for ((row, col), v) in data.indexed_iter() {
            if !v.is_finite() {
                return Err(IoError::NonFiniteValue {
                    path: MEMORY_PATH.to_string(),
                    row,
                    col,
                    offset: row * d + col,
                });
            }
        }
        Ok(FeatureMatrix { data, dtype })
    }

    /// Builds a matrix from equal-length rows. Convenience for tests and
    /// hand-written fixtures.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, IoError> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(IoError::InvalidShape {
                path: MEMORY_PATH.to_string(),
                detail: "feature matrix must be non-empty".to_string(),
            });
        }
        let d = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(IoError::InvalidShape {
                    path: MEMORY_PATH.to_string(),
                    detail: format!("row {i} has {} columns, expected {d}", r.len()),
                });
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((rows.len(), d), flat).expect("rows are rectangular");
        Self::new(data)
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn dtype(&self) -> StorageDtype {
        self.dtype
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    /// New matrix holding the given rows in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self, IoError> {
        if indices.is_empty() {
            return Err(IoError::InvalidShape {
                path: MEMORY_PATH.to_string(),
                detail: "row selection must be non-empty".to_string(),
            });
        }
        let data = self.data.select(ndarray::Axis(0), indices);
        Ok(FeatureMatrix {
            data,
            dtype: self.dtype,
        })
    }
}

/// Labels for `n` samples over the class alphabet `1..=p`. Every class in
/// the alphabet occurs at least once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<u32>,
    alphabet: u32,
}

impl LabelVector {
    pub fn new(labels: Vec<u32>) -> Result<Self, IoError> {
        Self::validated(labels, MEMORY_PATH, |index| index)
    }

    /// `offset_of` maps a label index to the byte offset reported in errors.
    fn validated(
        labels: Vec<u32>,
        path: &str,
        offset_of: impl Fn(usize) -> usize,
    ) -> Result<Self, IoError> {
        if labels.is_empty() {
            return Err(IoError::InvalidShape {
                path: path.to_string(),
                detail: "label vector must be non-empty".to_string(),
            });
        }
        let mut alphabet = 0u32;
        for (index, &l) in labels.iter().enumerate() {
            if l == 0 {
                return Err(IoError::ZeroLabel {
                    path: path.to_string(),
                    index,
                    offset: offset_of(index),
                });
            }
            alphabet = alphabet.max(l);
        }
        let mut seen = vec![false; alphabet as usize];
        for &l in &labels {
            seen[(l - 1) as usize] = true;
        }
        if let Some(c) = seen.iter().position(|&s| !s) {
            return Err(IoError::MissingClass {
                path: path.to_string(),
                class: c as u32 + 1,
                alphabet,
            });
        }
        Ok(LabelVector { labels, alphabet })
    }

    /// Internal constructor for label rearrangements that provably keep the
    /// multiset of values (shuffles, stratified selections).
    pub(crate) fn from_validated_parts(labels: Vec<u32>, alphabet: u32) -> Self {
        debug_assert!(LabelVector::validated(labels.clone(), MEMORY_PATH, |i| i).is_ok());
        debug_assert_eq!(labels.iter().max().copied().unwrap_or(0), alphabet);
        LabelVector { labels, alphabet }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Size `p` of the class alphabet `1..=p`.
    pub fn alphabet_size(&self) -> u32 {
        self.alphabet
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Ascending sample indices carrying class `c`.
    pub fn class_indices(&self, c: u32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == c)
            .map(|(i, _)| i)
            .collect()
    }

    /// Per-class sample counts, indexed by `class - 1`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.alphabet as usize];
        for &l in &self.labels {
            counts[(l - 1) as usize] += 1;
        }
        counts
    }
}

/// Checks that a feature matrix and a label vector describe the same samples.
pub fn validate_pair(features: &FeatureMatrix, labels: &LabelVector) -> Result<(), IoError> {
    if features.n() != labels.n() {
        return Err(IoError::LengthMismatch {
            features_n: features.n(),
            labels_n: labels.n(),
        });
    }
    Ok(())
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn read_u64_le(bytes: &[u8], offset: usize) -> u64 {
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&bytes[offset..offset + 8]);
    u64::from_le_bytes(buf)
}

fn checked_len(path: &str, n: u64, d: u64, width: usize) -> Result<(usize, usize, usize), IoError> {
    let err = || IoError::InvalidShape {
        path: path.to_string(),
        detail: format!("shape {n} x {d} exceeds addressable memory"),
    };
    let n_us = usize::try_from(n).map_err(|_| err())?;
    let d_us = usize::try_from(d).map_err(|_| err())?;
    let bytes = n_us
        .checked_mul(d_us)
        .and_then(|e| e.checked_mul(width))
        .ok_or_else(err)?;
    Ok((n_us, d_us, bytes))
}

/// Loads a feature dump, binary or `.csv` by extension.
pub fn load_feature_dump(path: impl AsRef<Path>) -> Result<FeatureMatrix, IoError> {
    let path = path.as_ref();
    let name = path_str(path);
    let bytes = std::fs::read(path).map_err(|source| IoError::Read {
        path: name.clone(),
        source,
    })?;
    if is_csv(path) {
        let text = String::from_utf8_lossy(&bytes);
        return parse_feature_csv(&text, &name);
    }
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(IoError::TruncatedHeader {
            path: name,
            needed: FEATURE_HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[0..4] != FEATURE_MAGIC {
        return Err(IoError::BadMagic {
            path: name,
            found: [bytes[0], bytes[1], bytes[2], bytes[3]],
            expected: FEATURE_MAGIC,
        });
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(IoError::UnsupportedVersion {
            path: name,
            found: bytes[4],
        });
    }
    let dtype = match bytes[5] {
        0 => StorageDtype::F32,
        1 => StorageDtype::F64,
        other => {
            return Err(IoError::UnsupportedDtype {
                path: name,
                found: other,
            })
        }
    };
    let n = read_u64_le(&bytes, 8);
    let d = read_u64_le(&bytes, 16);
    if n == 0 || d == 0 {
        return Err(IoError::InvalidShape {
            path: name,
            detail: format!("feature matrix must be non-empty, got {n} x {d}"),
        });
    }
    let (n, d, payload_len) = checked_len(&name, n, d, dtype.width())?;
    let available = bytes.len() - FEATURE_HEADER_LEN;
    if available < payload_len {
        return Err(IoError::TruncatedPayload {
            path: name,
            payload_start: FEATURE_HEADER_LEN,
            expected: payload_len,
            found: available,
        });
    }
    if available > payload_len {
        return Err(IoError::TrailingBytes {
            path: name,
            payload_end: FEATURE_HEADER_LEN + payload_len,
            found: available - payload_len,
        });
    }
    let width = dtype.width();
    let mut values = Vec::with_capacity(n * d);
    for i in 0..n * d {
        let at = FEATURE_HEADER_LEN + i * width;
        let v = match dtype {
            StorageDtype::F32 => {
                let mut buf = [0u8; 4];
                buf.copy_from_slice(&bytes[at..at + 4]);
                f32::from_le_bytes(buf) as f64
            }
            StorageDtype::F64 => {
                let mut buf = [0u8; 8];
                buf.copy_from_slice(&bytes[at..at + 8]);
                f64::from_le_bytes(buf)
            }
        };
        if !v.is_finite() {
            return Err(IoError::NonFiniteValue {
                path: name,
                row: i / d,
                col: i % d,
                offset: at,
            });
        }
        values.push(v);
    }
    let data = Array2::from_shape_vec((n, d), values).expect("length checked above");
    Ok(FeatureMatrix { data, dtype })
}

/// Writes a feature dump in the binary format, honouring the matrix dtype.
pub fn write_feature_dump(matrix: &FeatureMatrix, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let width = matrix.dtype.width();
    let mut bytes = Vec::with_capacity(FEATURE_HEADER_LEN + matrix.n() * matrix.d() * width);
    bytes.extend_from_slice(&FEATURE_MAGIC);
    bytes.push(FORMAT_VERSION);
    bytes.push(matrix.dtype.tag());
    bytes.extend_from_slice(&[0u8; 2]);
    bytes.extend_from_slice(&(matrix.n() as u64).to_le_bytes());
    bytes.extend_from_slice(&(matrix.d() as u64).to_le_bytes());
    for &v in matrix.data.iter() {
        match matrix.dtype {
            StorageDtype::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
            StorageDtype::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
        }
    }
    std::fs::write(path, bytes).map_err(|source| IoError::Write {
        path: path_str(path),
        source,
    })
}

/// Loads a label dump, binary or `.csv` by extension.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVector, IoError> {
    let path = path.as_ref();
    let name = path_str(path);
    let bytes = std::fs::read(path).map_err(|source| IoError::Read {
        path: name.clone(),
        source,
    })?;
    if is_csv(path) {
        let text = String::from_utf8_lossy(&bytes);
        return parse_label_csv(&text, &name);
    }
    if bytes.len() < LABEL_HEADER_LEN {
        return Err(IoError::TruncatedHeader {
            path: name,
            needed: LABEL_HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[0..4] != LABEL_MAGIC {
        return Err(IoError::BadMagic {
            path: name,
            found: [bytes[0], bytes[1], bytes[2], bytes[3]],
            expected: LABEL_MAGIC,
        });
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(IoError::UnsupportedVersion {
            path: name,
            found: bytes[4],
        });
    }
    let n = read_u64_le(&bytes, 8);
    if n == 0 {
        return Err(IoError::InvalidShape {
            path: name,
            detail: "label vector must be non-empty".to_string(),
        });
    }
    let (n, _, payload_len) = checked_len(&name, n, 1, 4)?;
    let available = bytes.len() - LABEL_HEADER_LEN;
    if available < payload_len {
        return Err(IoError::TruncatedPayload {
            path: name,
            payload_start: LABEL_HEADER_LEN,
            expected: payload_len,
            found: available,
        });
    }
    if available > payload_len {
        return Err(IoError::TrailingBytes {
            path: name,
            payload_end: LABEL_HEADER_LEN + payload_len,
            found: available - payload_len,
        });
    }
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let at = LABEL_HEADER_LEN + i * 4;
        let mut buf = [0u8; 4];
        buf.copy_from_slice(&bytes[at..at + 4]);
        labels.push(u32::from_le_bytes(buf));
    }
    LabelVector::validated(labels, &name, |index| LABEL_HEADER_LEN + index * 4)
}

/// Writes a label dump in the binary format.
pub fn write_labels(labels: &LabelVector, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(LABEL_HEADER_LEN + labels.n() * 4);
    bytes.extend_from_slice(&LABEL_MAGIC);
    bytes.push(FORMAT_VERSION);
    bytes.extend_from_slice(&[0u8; 3]);
    bytes.extend_from_slice(&(labels.n() as u64).to_le_bytes());
    for &l in &labels.labels {
        bytes.extend_from_slice(&l.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|source| IoError::Write {
        path: path_str(path),
        source,
    })
}

/// True when every comma-separated field of `line` parses as f64.
fn all_numeric(line: &str) -> bool {
    line.split(',').all(|f| f.trim().parse::<f64>().is_ok())
}

fn parse_feature_csv(text: &str, name: &str) -> Result<FeatureMatrix, IoError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if rows.is_empty() && width.is_none() && !all_numeric(line) {
            // Header line: remember the column count it implies.
            width = Some(line.split(',').count());
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| IoError::Csv {
                path: name.to_string(),
                line: line_no + 1,
                detail: format!("cannot parse {:?} as a float", field.trim()),
            })?;
            if !v.is_finite() {
                return Err(IoError::NonFiniteValue {
                    path: name.to_string(),
                    row: rows.len(),
                    col: row.len(),
                    offset: line_no + 1,
                });
            }
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(IoError::Csv {
                    path: name.to_string(),
                    line: line_no + 1,
                    detail: format!("expected {w} columns, found {}", row.len()),
                })
            }
            Some(_) => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IoError::InvalidShape {
            path: name.to_string(),
            detail: "CSV contains no data rows".to_string(),
        });
    }
    let d = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let data = Array2::from_shape_vec((rows.len(), d), flat).expect("rows are rectangular");
    Ok(FeatureMatrix {
        data,
        dtype: StorageDtype::F64,
    })
}

fn parse_label_csv(text: &str, name: &str) -> Result<LabelVector, IoError> {
    let mut labels = Vec::new();
    let mut first_data_line = None;
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if labels.is_empty() && first_data_line.is_none() && line.parse::<u32>().is_err() {
            continue; // header line
        }
        let v: u32 = line.parse().map_err(|_| IoError::Csv {
            path: name.to_string(),
            line: line_no + 1,
            detail: format!("cannot parse {line:?} as a label"),
        })?;
        first_data_line.get_or_insert(line_no);
        labels.push(v);
    }
    if labels.is_empty() {
        return Err(IoError::InvalidShape {
            path: name.to_string(),
            detail: "CSV contains no data rows".to_string(),
        });
    }
    LabelVector::validated(labels, name, |index| index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn tmp(name: &str) -> tempfile::TempDir {
        tempfile::Builder::new()
            .prefix(name)
            .tempdir()
            .expect("tempdir")
    }

    #[test]
    fn feature_round_trip_f64() {
        let dir = tmp("feat64");
        let path = dir.path().join("x.pedf");
        let m = FeatureMatrix::new(array![[1.0, -2.5], [0.25, 1e-18], [3.0, 4.0]]).unwrap();
        write_feature_dump(&m, &path).unwrap();
        let back = load_feature_dump(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn feature_round_trip_f32_is_exact_after_quantisation() {
        let dir = tmp("feat32");
        let path = dir.path().join("x.pedf");
        let m = FeatureMatrix::with_dtype(
            array![[0.1, 0.2], [1.0 / 3.0, -7.77]],
            StorageDtype::F32,
        )
        .unwrap();
        write_feature_dump(&m, &path).unwrap();
        let back = load_feature_dump(&path).unwrap();
        assert_eq!(m, back);
        assert_eq!(back.dtype(), StorageDtype::F32);
        // Quantisation really happened: 0.1 is not representable in f32.
        assert_ne!(back.data()[[0, 0]], 0.1);
        assert_eq!(back.data()[[0, 0]], 0.1f32 as f64);
    }

    #[test]
    fn label_round_trip() {
        let dir = tmp("lab");
        let path = dir.path().join("y.pedl");
        let y = LabelVector::new(vec![1, 2, 1, 3, 2, 1]).unwrap();
        write_labels(&y, &path).unwrap();
        let back = load_labels(&path).unwrap();
        assert_eq!(y, back);
        assert_eq!(back.alphabet_size(), 3);
    }

    #[test]
    fn bad_magic_is_reported_with_offset_zero() {
        let dir = tmp("magic");
        let path = dir.path().join("x.pedf");
        let mut bytes = vec![0u8; 32];
        bytes[0..4].copy_from_slice(b"NOPE");
        std::fs::write(&path, bytes).unwrap();
        let err = load_feature_dump(&path).unwrap_err();
        match err {
            IoError::BadMagic { found, .. } => assert_eq!(&found, b"NOPE"),
            other => panic!("expected BadMagic, got {other}"),
        }
    }

    #[test]
    fn truncated_payload_reports_expected_and_found() {
        let dir = tmp("trunc");
        let path = dir.path().join("x.pedf");
        let m = FeatureMatrix::new(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        write_feature_dump(&m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        match load_feature_dump(&path).unwrap_err() {
            IoError::TruncatedPayload {
                expected, found, ..
            } => {
                assert_eq!(expected, 32);
                assert_eq!(found, 24);
            }
            other => panic!("expected TruncatedPayload, got {other}"),
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tmp("trail");
        let path = dir.path().join("x.pedf");
        let m = FeatureMatrix::new(array![[1.0]]).unwrap();
        write_feature_dump(&m, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[9, 9, 9]);
        std::fs::write(&path, bytes).unwrap();
        match load_feature_dump(&path).unwrap_err() {
            IoError::TrailingBytes { found, .. } => assert_eq!(found, 3),
            other => panic!("expected TrailingBytes, got {other}"),
        }
    }

    #[test]
    fn non_finite_value_offset_points_at_the_bytes() {
        let dir = tmp("nan");
        let path = dir.path().join("x.pedf");
        let m = FeatureMatrix::new(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        write_feature_dump(&m, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Overwrite element (1, 0), the third value, with a NaN.
        let at = 24 + 2 * 8;
        bytes[at..at + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        match load_feature_dump(&path).unwrap_err() {
            IoError::NonFiniteValue {
                row, col, offset, ..
            } => {
                assert_eq!((row, col), (1, 0));
                assert_eq!(offset, at);
            }
            other => panic!("expected NonFiniteValue, got {other}"),
        }
    }

    #[test]
    fn zero_label_and_missing_class_are_rejected() {
        assert!(matches!(
            LabelVector::new(vec![1, 0, 2]),
            Err(IoError::ZeroLabel { index: 1, .. })
        ));
        match LabelVector::new(vec![1, 3, 1]) {
            Err(IoError::MissingClass {
                class, alphabet, ..
            }) => {
                assert_eq!(class, 2);
                assert_eq!(alphabet, 3);
            }
            other => panic!("expected MissingClass, got {other:?}"),
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tmp("ver");
        let path = dir.path().join("y.pedl");
        let y = LabelVector::new(vec![1, 2]).unwrap();
        write_labels(&y, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_labels(&path).unwrap_err(),
            IoError::UnsupportedVersion { found: 9, .. }
        ));
    }

    #[test]
    fn csv_features_with_header() {
        let dir = tmp("csvf");
        let path = dir.path().join("x.csv");
        std::fs::write(&path, "a,b\n1.0,2.0\n3.5,-4.0\n").unwrap();
        let m = load_feature_dump(&path).unwrap();
        assert_eq!(m.data(), &array![[1.0, 2.0], [3.5, -4.0]]);
        assert_eq!(m.dtype(), StorageDtype::F64);
    }

    #[test]
    fn csv_features_without_header() {
        let dir = tmp("csvnh");
        let path = dir.path().join("x.csv");
        std::fs::write(&path, "1,2\n3,4\n").unwrap();
        let m = load_feature_dump(&path).unwrap();
        assert_eq!(m.data(), &array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn csv_ragged_rows_name_the_line() {
        let dir = tmp("csvrag");
        let path = dir.path().join("x.csv");
        std::fs::write(&path, "1,2\n3\n").unwrap();
        match load_feature_dump(&path).unwrap_err() {
            IoError::Csv { line, .. } => assert_eq!(line, 2),
            other => panic!("expected Csv, got {other}"),
        }
    }

    #[test]
    fn csv_labels_with_header() {
        let dir = tmp("csvl");
        let path = dir.path().join("y.csv");
        std::fs::write(&path, "label\n1\n2\n1\n").unwrap();
        let y = load_labels(&path).unwrap();
        assert_eq!(y.labels(), &[1, 2, 1]);
    }

    #[test]
    fn validate_pair_checks_lengths() {
        let m = FeatureMatrix::new(array![[1.0], [2.0]]).unwrap();
        let y = LabelVector::new(vec![1, 2, 1]).unwrap();
        assert!(matches!(
            validate_pair(&m, &y),
            Err(IoError::LengthMismatch {
                features_n: 2,
                labels_n: 3
            })
        ));
    }

    #[test]
    fn class_indices_are_ascending() {
        let y = LabelVector::new(vec![2, 1, 2, 1, 1]).unwrap();
        assert_eq!(y.class_indices(1), vec![1, 3, 4]);
        assert_eq!(y.class_indices(2), vec![0, 2]);
        assert_eq!(y.class_counts(), vec![3, 2]);
    }

    proptest! {
        #[test]
        fn prop_feature_round_trip(
            n in 1usize..8,
            d in 1usize..5,
            seed in 0u64..1000,
            as_f32 in proptest::bool::ANY,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data = Array2::from_shape_fn((n, d), |_| rng.gen_range(-100.0..100.0));
            let dtype = if as_f32 { StorageDtype::F32 } else { StorageDtype::F64 };
            let m = FeatureMatrix::with_dtype(data, dtype).unwrap();
            let dir = tmp("prop");
            let path = dir.path().join("x.pedf");
            write_feature_dump(&m, &path).unwrap();
            let back = load_feature_dump(&path).unwrap();
            prop_assert_eq!(m, back);
        }

        #[test]
        fn prop_label_round_trip(raw in proptest::collection::vec(1u32..5, 1..40)) {
            // Remap to a dense alphabet so construction succeeds.
            let mut distinct: Vec<u32> = raw.clone();
            distinct.sort_unstable();
            distinct.dedup();
            let labels: Vec<u32> = raw
                .iter()
                .map(|l| distinct.iter().position(|d| d == l).unwrap() as u32 + 1)
                .collect();
            let y = LabelVector::new(labels).unwrap();
            let dir = tmp("propl");
            let path = dir.path().join("y.pedl");
            write_labels(&y, &path).unwrap();
            prop_assert_eq!(y, load_labels(&path).unwrap());
        }
    }
}
