//! Embedding tables on disk and in memory.
//!
//! Two formats are supported:
//!
//! * the `.vec` text format: a `count dim` header followed by one
//!   `token v1 v2 ...` line per entry;
//! * raw matrices: little-endian `f32`, row-major, next to a JSON sidecar
//!   `{"rows": R, "dim": D}` with the same stem and a `.json` extension.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `f32` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Contract(format!(
                "matrix data has {} values, expected {rows}x{dim}",
                data.len()
            )));
        }
        Ok(EmbeddingMatrix { rows, dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingMatrix {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::Contract(format!(
                    "row {i} has {} components, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(EmbeddingMatrix {
            rows: rows.len(),
            dim,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn push_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn select_rows(&self, ids: &[usize]) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        EmbeddingMatrix {
            rows: ids.len(),
            dim: self.dim,
            data,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixSidecar {
    rows: usize,
    dim: usize,
}

pub fn sidecar_path(bin_path: &Path) -> PathBuf {
    bin_path.with_extension("json")
}

/// Writes `matrix.bin` and its `matrix.json` sidecar.
pub fn save_matrix(matrix: &EmbeddingMatrix, bin_path: impl AsRef<Path>) -> Result<()> {
    let bin_path = bin_path.as_ref();
    let file = File::create(bin_path).map_err(|e| Error::io(bin_path, e))?;
    let mut out = BufWriter::new(file);
    for &v in &matrix.data {
        out.write_f32::<LittleEndian>(v)
            .map_err(|e| Error::io(bin_path, e))?;
    }
    out.flush().map_err(|e| Error::io(bin_path, e))?;
    let side = sidecar_path(bin_path);
    let json = serde_json::to_string(&MatrixSidecar {
        rows: matrix.rows,
        dim: matrix.dim,
    })
    .expect("sidecar serializes");
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn load_matrix(bin_path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let bin_path = bin_path.as_ref();
    let side = sidecar_path(bin_path);
    let json = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: MatrixSidecar =
        serde_json::from_str(&json).map_err(|e| Error::format(&side, e.line(), e.to_string()))?;
    let file = File::open(bin_path).map_err(|e| Error::io(bin_path, e))?;
    let expected = meta.rows * meta.dim * 4;
    let actual = file.metadata().map_err(|e| Error::io(bin_path, e))?.len() as usize;
    if actual != expected {
        return Err(Error::format(
            bin_path,
            0,
            format!("{actual} bytes, sidecar implies {expected}"),
        ));
    }
    let mut reader = BufReader::new(file);
    let mut data = vec![0f32; meta.rows * meta.dim];
    reader
        .read_f32_into::<LittleEndian>(&mut data)
        .map_err(|e| Error::io(bin_path, e))?;
    EmbeddingMatrix::new(meta.rows, meta.dim, data)
}

/// Token-keyed static vectors, as found in `.vec` files.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorTable {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    vectors: EmbeddingMatrix,
}

impl VectorTable {
    pub fn new(dim: usize) -> Self {
        VectorTable {
            dim,
            tokens: Vec::new(),
            index: HashMap::new(),
            vectors: EmbeddingMatrix::zeros(0, dim),
        }
    }

    pub fn from_entries<S, R>(dim: usize, entries: impl IntoIterator<Item = (S, R)>) -> Result<Self>
    where
        S: Into<String>,
        R: AsRef<[f32]>,
    {
        let mut table = VectorTable::new(dim);
        for (tok, vec) in entries {
            table.insert(tok.into(), vec.as_ref())?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, token: String, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if self.index.contains_key(&token) {
            return Err(Error::Contract(format!("duplicate token {token:?}")));
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.vectors.push_row(vector)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.index.get(token).map(|&i| self.vectors.row(i))
    }

    pub fn vectors(&self) -> &EmbeddingMatrix {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut EmbeddingMatrix {
        &mut self.vectors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), self.vectors.row(i)))
    }
}

/// Reads a `.vec` file.
pub fn load_vec(path: impl AsRef<Path>) -> Result<VectorTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::format(path, 1, e.to_string()))?,
        None => return Err(Error::format(path, 1, "missing `count dim` header")),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let parse_usize = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(path, 1, format!("bad header field {s:?}")))
    };
    if fields.len() != 2 {
        return Err(Error::format(path, 1, "header must be `count dim`"));
    }
    let count = parse_usize(fields[0])?;
    let dim = parse_usize(fields[1])?;

    let mut table = VectorTable::new(dim);
    let mut values = Vec::with_capacity(dim);
    let mut line_no = 1;
    for line in lines {
        line_no += 1;
        let line = line.map_err(|e| Error::format(path, line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        if table.len() == count {
            return Err(Error::format(
                path,
                line_no,
                format!("more entries than the {count} announced"),
            ));
        }
        let (token, rest) = line
            .split_once(' ')
            .ok_or_else(|| Error::format(path, line_no, "entry has no values"))?;
        if token.is_empty() {
            return Err(Error::format(path, line_no, "empty token"));
        }
        values.clear();
        for field in rest.split_whitespace() {
            let v: f32 = field
                .parse()
                .map_err(|_| Error::format(path, line_no, format!("bad number {field:?}")))?;
            if !v.is_finite() {
                return Err(Error::format(path, line_no, "non-finite value"));
            }
            values.push(v);
        }
        if values.len() != dim {
            return Err(Error::format(
                path,
                line_no,
                format!("{} values, expected {dim}", values.len()),
            ));
        }
        table
            .insert(token.to_owned(), &values)
            .map_err(|e| Error::format(path, line_no, e.to_string()))?;
    }
    if table.len() != count {
        return Err(Error::format(
            path,
            line_no + 1,
            format!("unexpected end of file: {} of {count} entries", table.len()),
        ));
    }
    Ok(table)
}

/// Writes a `.vec` file. `f32` display output is the shortest exact
/// representation, which never needs more than 9 significant digits.
pub fn save_vec(table: &VectorTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(out, "{} {}", table.len(), table.dim()).map_err(io)?;
    for (tok, vec) in table.iter() {
        write!(out, "\n{tok}").map_err(io)?;
        for v in vec {
            write!(out, " {v}").map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Diagonal normal distribution fitted to embedding rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianInit {
    pub mean: Vec<f64>,
    /// Per-dimension population variance.
    pub variance: Vec<f64>,
    pub source_row_count: usize,
}

pub fn fit_gaussian(rows: &EmbeddingMatrix) -> Result<GaussianInit> {
    if rows.rows() < 2 {
        return Err(Error::Estimation(format!(
            "need at least 2 rows, got {}",
            rows.rows()
        )));
    }
    // Welford's update, per dimension.
    let dim = rows.dim();
    let mut mean = vec![0f64; dim];
    let mut m2 = vec![0f64; dim];
    for (n, row) in rows.iter_rows().enumerate() {
        let n = (n + 1) as f64;
        for j in 0..dim {
            let x = row[j] as f64;
            let delta = x - mean[j];
            mean[j] += delta / n;
            m2[j] += delta * (x - mean[j]);
        }
    }
    let n = rows.rows() as f64;
    let variance = m2.into_iter().map(|s| (s / n).max(0.0)).collect();
    Ok(GaussianInit {
        mean,
        variance,
        source_row_count: rows.rows(),
    })
}

/// Draws one vector with independent `N(mean_j, variance_j)` components.
pub fn sample_gaussian<R: Rng + ?Sized>(g: &GaussianInit, rng: &mut R) -> Vec<f32> {
    g.mean
        .iter()
        .zip(&g.variance)
        .map(|(&m, &v)| {
            if v == 0.0 {
                m as f32
            } else {
                let z: f64 = rng.sample(StandardNormal);
                (m + v.sqrt() * z) as f32
            }
        })
        .collect()
}
