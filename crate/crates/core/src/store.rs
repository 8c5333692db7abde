//! Embedding matrices, instance manifests, and modality fusion.
//!
//! EMB1 layout (little-endian):
//!
//! | bytes  | content                                   |
//! |--------|-------------------------------------------|
//! | 0..4   | ASCII `EMB1`                              |
//! | 4..8   | `u32` dim                                 |
//! | 8..16  | `u64` count                               |
//! | 16..   | count × dim `f32` values, row-major       |
//!
//! Manifests are JSON Lines with keys `id`, `label`, `category`, `source`;
//! line `k` describes embedding row `k`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numeric::l2_norm;

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const HEADER_LEN: usize = 16;
/// Allowed deviation of a row norm from 1 when a matrix is flagged unit-normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("not an EMB1 file (magic bytes {found:?})")]
    BadMagic { found: Vec<u8> },
    #[error("truncated payload: header declares {expected} bytes of values, {available} present")]
    TruncatedPayload { expected: u128, available: usize },
    #[error("{extra} unexpected bytes after the declared payload")]
    TrailingBytes { extra: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("value buffer has {len} entries, expected {count} x {dim}")]
    BadLength { len: usize, count: usize, dim: usize },
    #[error("shape mismatch: {left_count}x{left_dim} vs {right_count}x{right_dim}")]
    ShapeMismatch {
        left_count: usize,
        left_dim: usize,
        right_count: usize,
        right_dim: usize,
    },
    #[error("row {row} of the {modality} embeddings has zero L2 norm")]
    ZeroNormRow { row: usize, modality: &'static str },
    #[error("row {row} has L2 norm {norm}, not unit")]
    NotUnitNorm { row: usize, norm: f64 },
    #[error("manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Dense row-major matrix of `f32` feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    count: usize,
    dim: usize,
    values: Vec<f32>,
    unit_normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(count: usize, dim: usize, values: Vec<f32>) -> Result<Self, StoreError> {
        if dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        if count.checked_mul(dim) != Some(values.len()) {
            return Err(StoreError::BadLength {
                len: values.len(),
                count,
                dim,
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::NonFiniteValue {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self {
            count,
            dim,
            values,
            unit_normalized: false,
        })
    }

    /// Builds a matrix from `f64` rows, rounding to `f32`. All rows must share a length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], dim: usize) -> Result<Self, StoreError> {
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(StoreError::BadLength {
                    len: r.len(),
                    count: i,
                    dim,
                });
            }
            values.extend(r.iter().map(|&v| v as f32));
        }
        Self::new(rows.len(), dim, values)
    }

    pub fn empty(dim: usize) -> Result<Self, StoreError> {
        Self::new(0, dim, Vec::new())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Row `i` promoted to `f64`.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    pub fn is_unit_normalized(&self) -> bool {
        self.unit_normalized
    }

    /// Flags the matrix as unit-normalized after checking every row norm.
    pub fn into_unit_flagged(mut self) -> Result<Self, StoreError> {
        if let Some((row, norm)) = self.first_non_unit_row() {
            return Err(StoreError::NotUnitNorm { row, norm });
        }
        self.unit_normalized = true;
        Ok(self)
    }

    pub(crate) fn first_non_unit_row(&self) -> Option<(usize, f64)> {
        self.rows().enumerate().find_map(|(i, r)| {
            let norm = row_norm(r);
            ((norm - 1.0).abs() > UNIT_NORM_TOLERANCE).then_some((i, norm))
        })
    }

    /// Copies the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        Self {
            count: rows.len(),
            dim: self.dim,
            values,
            unit_normalized: self.unit_normalized,
        }
    }

    /// Stacks matrices of equal dimension vertically.
    pub fn concat(parts: &[&EmbeddingMatrix]) -> Result<Self, StoreError> {
        let first = parts.first().ok_or(StoreError::ZeroDim)?;
        let mut values = Vec::new();
        let mut count = 0;
        for p in parts {
            if p.dim != first.dim {
                return Err(StoreError::ShapeMismatch {
                    left_count: first.count,
                    left_dim: first.dim,
                    right_count: p.count,
                    right_dim: p.dim,
                });
            }
            values.extend_from_slice(&p.values);
            count += p.count;
        }
        Ok(Self {
            count,
            dim: first.dim,
            values,
            unit_normalized: parts.iter().all(|p| p.unit_normalized),
        })
    }

    /// Encodes the matrix as EMB1 bytes.
    pub fn to_emb1_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.count as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes EMB1 bytes.
    pub fn from_emb1_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(StoreError::BadMagic {
                found: bytes[..bytes.len().min(4)].to_vec(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(StoreError::TruncatedPayload {
                expected: (HEADER_LEN - bytes.len()) as u128,
                available: 0,
            });
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        if dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        let payload = &bytes[HEADER_LEN..];
        let expected = count as u128 * dim as u128 * 4;
        if expected > payload.len() as u128 {
            return Err(StoreError::TruncatedPayload {
                expected,
                available: payload.len(),
            });
        }
        if expected < payload.len() as u128 {
            return Err(StoreError::TrailingBytes {
                extra: payload.len() - expected as usize,
            });
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(count as usize, dim, values)
    }

    /// SHA-256 of the EMB1 encoding, lowercase hex.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_emb1_bytes()))
    }
}

fn row_norm(r: &[f32]) -> f64 {
    r.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, StoreError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    EmbeddingMatrix::from_emb1_bytes(&bytes)
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    fs::write(path, matrix.to_emb1_bytes()).map_err(io_err(path))
}

/// Instance category of a multimodal misinformation example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Ooc,
    Manipulation,
    Pristine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub id: String,
    #[serde(default)]
    pub label: Option<u8>,
    #[serde(default)]
    pub category: Option<Category>,
    #[serde(default)]
    pub source: Option<String>,
}

impl InstanceRecord {
    pub fn new(id: impl Into<String>, label: Option<u8>) -> Self {
        Self {
            id: id.into(),
            label,
            category: None,
            source: None,
        }
    }
}

/// Per-row metadata, positionally bound to an [`EmbeddingMatrix`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InstanceManifest {
    pub records: Vec<InstanceRecord>,
}

impl InstanceManifest {
    pub fn new(records: Vec<InstanceRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<Option<u8>> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self::new(rows.iter().map(|&r| self.records[r].clone()).collect())
    }

    /// Copy with every label removed.
    pub fn without_labels(&self) -> Self {
        Self::new(
            self.records
                .iter()
                .map(|r| InstanceRecord {
                    label: None,
                    ..r.clone()
                })
                .collect(),
        )
    }

    pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Self, StoreError> {
        let mut records = Vec::new();
        for (k, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| StoreError::ManifestParse {
                line: k + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: InstanceRecord = serde_json::from_str(&line).map_err(|e| StoreError::ManifestParse {
                line: k + 1,
                message: e.to_string(),
            })?;
            if rec.id.is_empty() {
                return Err(StoreError::ManifestParse {
                    line: k + 1,
                    message: "empty id".into(),
                });
            }
            if let Some(l) = rec.label {
                if l > 1 {
                    return Err(StoreError::ManifestParse {
                        line: k + 1,
                        message: format!("label {l} is not 0 or 1"),
                    });
                }
            }
            records.push(rec);
        }
        Ok(Self { records })
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut writer, r)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<InstanceManifest, StoreError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    InstanceManifest::parse_jsonl(BufReader::new(file))
}

pub fn write_manifest(manifest: &InstanceManifest, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    manifest.write_jsonl(&mut buf).map_err(io_err(path))?;
    fs::write(path, buf).map_err(io_err(path))
}

/// Fuses per-modality embeddings: row `i` becomes `(image_i + text_i) / 2`
/// rescaled to unit L2 norm.
pub fn fuse_modalities(image: &EmbeddingMatrix, text: &EmbeddingMatrix) -> Result<EmbeddingMatrix, StoreError> {
    if image.count != text.count || image.dim != text.dim {
        return Err(StoreError::ShapeMismatch {
            left_count: image.count,
            left_dim: image.dim,
            right_count: text.count,
            right_dim: text.dim,
        });
    }
    let dim = image.dim;
    let mut values = Vec::with_capacity(image.values.len());
    let mut fused = vec![0.0f64; dim];
    for (i, (a, b)) in image.rows().zip(text.rows()).enumerate() {
        if row_norm(a) == 0.0 {
            return Err(StoreError::ZeroNormRow {
                row: i,
                modality: "image",
            });
        }
        if row_norm(b) == 0.0 {
            return Err(StoreError::ZeroNormRow {
                row: i,
                modality: "text",
            });
        }
        for (d, (x, y)) in fused.iter_mut().zip(a.iter().zip(b)) {
            *d = (*x as f64 + *y as f64) / 2.0;
        }
        let norm = l2_norm(&fused);
        if norm == 0.0 {
            return Err(StoreError::ZeroNormRow {
                row: i,
                modality: "fused",
            });
        }
        values.extend(fused.iter().map(|&v| (v / norm) as f32));
    }
    Ok(EmbeddingMatrix {
        count: image.count,
        dim,
        values,
        unit_normalized: true,
    })
}

/// Rescales every row to unit norm; used when only one modality is present.
pub fn normalize_rows(matrix: &EmbeddingMatrix, modality: &'static str) -> Result<EmbeddingMatrix, StoreError> {
    let mut values = Vec::with_capacity(matrix.values.len());
    for (i, r) in matrix.rows().enumerate() {
        let norm = row_norm(r);
        if norm == 0.0 {
            return Err(StoreError::ZeroNormRow { row: i, modality });
        }
        values.extend(r.iter().map(|&v| (v as f64 / norm) as f32));
    }
    Ok(EmbeddingMatrix {
        count: matrix.count,
        dim: matrix.dim,
        values,
        unit_normalized: true,
    })
}

/// Which role a manifest plays; validation manifests may omit labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestRole {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Violation {
    CountMismatch { matrix: usize, manifest: usize },
    DuplicateId { id: String, first: usize, second: usize },
    MissingLabel { row: usize },
    NonUnitRow { row: usize, norm: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::CountMismatch { matrix, manifest } => {
                write!(f, "CountMismatch({matrix},{manifest})")
            }
            Violation::DuplicateId { id, first, second } => {
                write!(f, "DuplicateId({id:?}, rows {first} and {second})")
            }
            Violation::MissingLabel { row } => write!(f, "MissingLabel(row {row})"),
            Violation::NonUnitRow { row, norm } => write!(f, "NonUnitRow(row {row}, norm {norm})"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every problem with a matrix/manifest pair. `expect_unit` checks
/// row norms as if the matrix were flagged unit-normalized.
pub fn validate_pair(
    matrix: &EmbeddingMatrix,
    manifest: &InstanceManifest,
    role: ManifestRole,
    expect_unit: bool,
) -> ValidationReport {
    let mut violations = Vec::new();
    if matrix.count() != manifest.len() {
        violations.push(Violation::CountMismatch {
            matrix: matrix.count(),
            manifest: manifest.len(),
        });
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (row, rec) in manifest.records.iter().enumerate() {
        if let Some(&first) = seen.get(rec.id.as_str()) {
            violations.push(Violation::DuplicateId {
                id: rec.id.clone(),
                first,
                second: row,
            });
        } else {
            seen.insert(&rec.id, row);
        }
        if role == ManifestRole::Train && rec.label.is_none() {
            violations.push(Violation::MissingLabel { row });
        }
    }
    if expect_unit || matrix.is_unit_normalized() {
        for (row, r) in matrix.rows().enumerate() {
            let norm = row_norm(r);
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                violations.push(Violation::NonUnitRow { row, norm });
            }
        }
    }
    ValidationReport { violations }
}
