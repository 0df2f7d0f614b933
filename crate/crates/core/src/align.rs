//! Bilingual lexicons and orthogonal Procrustes alignment of the target
//! static space onto the source static space.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::embed_io::{save_matrix, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::synth::StaticEmbeddings;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    /// `(source_word, target_word)`, deduplicated, in file order.
    pub pairs: Vec<(String, String)>,
    pub language_pair: Option<(String, String)>,
}

impl Lexicon {
    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, S)>) -> Self {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (s, t) in pairs {
            let p = (s.into(), t.into());
            if seen.insert(p.clone()) {
                out.push(p);
            }
        }
        Lexicon {
            pairs: out,
            language_pair: None,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Reads a dictionary: one `source target` pair per line, tab or space
/// separated. Blank lines and `#` comments are skipped.
pub fn parse_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::format(path, line_no, e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::format(
                path,
                line_no,
                format!("expected 2 fields, found {}", fields.len()),
            ));
        }
        pairs.push((fields[0].to_owned(), fields[1].to_owned()));
    }
    Ok(Lexicon::from_pairs(pairs))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    /// Unit-normalize paired vectors before fitting.
    pub normalize_before_align: bool,
}

/// Orthogonal `d x d` map applied to row vectors: `v -> v * W`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalMap {
    pub dim: usize,
    /// Row-major.
    pub matrix: Vec<f64>,
    pub pair_count: usize,
    /// `||XW - Y||_F` over the fitting pairs.
    pub residual: f64,
}

impl OrthogonalMap {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        OrthogonalMap {
            dim,
            matrix,
            pair_count: 0,
            residual: 0.0,
        }
    }

    pub fn from_dmatrix(w: &DMatrix<f64>) -> Self {
        let dim = w.nrows();
        let mut matrix = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                matrix.push(w[(i, j)]);
            }
        }
        OrthogonalMap {
            dim,
            matrix,
            pair_count: 0,
            residual: 0.0,
        }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.matrix)
    }

    pub fn transpose(&self) -> Self {
        let mut t = OrthogonalMap::from_dmatrix(&self.to_dmatrix().transpose());
        t.pair_count = self.pair_count;
        t
    }

    /// `max |(W^T W - I)_ij|`.
    pub fn orthogonality_defect(&self) -> f64 {
        let w = self.to_dmatrix();
        let g = w.transpose() * &w;
        let mut worst = 0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    pub fn apply_vector(&self, v: &[f32]) -> Vec<f32> {
        let d = self.dim;
        let mut out = vec![0f64; d];
        for (i, &x) in v.iter().enumerate() {
            let x = x as f64;
            if x == 0.0 {
                continue;
            }
            let row = &self.matrix[i * d..(i + 1) * d];
            for (o, w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        out.into_iter().map(|x| x as f32).collect()
    }

    fn apply_matrix(&self, m: &mut EmbeddingMatrix) {
        use rayon::prelude::*;
        let rows: Vec<Vec<f32>> = (0..m.rows())
            .into_par_iter()
            .map(|i| self.apply_vector(m.row(i)))
            .collect();
        for (i, r) in rows.into_iter().enumerate() {
            m.row_mut(i).copy_from_slice(&r);
        }
    }

    /// Writes the map as `path` (LE `f32`) plus its JSON sidecar.
    pub fn export(&self, bin_path: impl AsRef<Path>) -> Result<()> {
        let data = self.matrix.iter().map(|&x| x as f32).collect();
        save_matrix(&EmbeddingMatrix::new(self.dim, self.dim, data)?, bin_path)
    }
}

/// Solves `argmin_{W orthogonal} ||XW - Y||_F` through the SVD of `X^T Y`.
pub fn procrustes(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.shape() != y.shape() {
        return Err(Error::Alignment(format!(
            "paired matrices differ in shape: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::Alignment("target matrix has rank 0".into()));
    }
    let cross = x.transpose() * y;
    let svd = cross.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Alignment("SVD did not return U".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Alignment("SVD did not return V^T".into()))?;
    Ok(u * v_t)
}

fn unit(v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if n == 0.0 {
        v
    } else {
        v.into_iter().map(|x| (x as f64 / n) as f32).collect()
    }
}

/// Fits the orthogonal map carrying target vectors onto their translations in
/// the source space. Every lexicon pair with vectors on both sides
/// contributes one row.
pub fn fit_alignment(
    lexicon: &Lexicon,
    source: &StaticEmbeddings,
    target: &StaticEmbeddings,
    config: &AlignConfig,
) -> Result<OrthogonalMap> {
    let dim = source.dim();
    if target.dim() != dim {
        return Err(Error::Dimension {
            expected: dim,
            actual: target.dim(),
        });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (s, t) in &lexicon.pairs {
        if let (Some(sv), Some(tv)) = (source.word_vector(s), target.word_vector(t)) {
            if config.normalize_before_align {
                xs.push(unit(tv));
                ys.push(unit(sv));
            } else {
                xs.push(tv);
                ys.push(sv);
            }
        }
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::Alignment(format!(
            "only {n} lexicon pairs have vectors on both sides (need at least 3)"
        )));
    }
    if n < dim {
        warn!("aligning {dim}-dimensional spaces with only {n} usable pairs");
    }
    let x = DMatrix::from_fn(n, dim, |i, j| xs[i][j] as f64);
    let y = DMatrix::from_fn(n, dim, |i, j| ys[i][j] as f64);
    let w = procrustes(&x, &y)?;
    let residual = (&x * &w - &y).norm();
    let mut map = OrthogonalMap::from_dmatrix(&w);
    map.pair_count = n;
    map.residual = residual;
    Ok(map)
}

/// Maps every word row and every n-gram bucket row.
pub fn apply_map(map: &OrthogonalMap, embeddings: &StaticEmbeddings) -> Result<StaticEmbeddings> {
    if embeddings.dim() != map.dim {
        return Err(Error::Dimension {
            expected: map.dim,
            actual: embeddings.dim(),
        });
    }
    let mut out = embeddings.clone();
    match &mut out {
        StaticEmbeddings::Model(m) => {
            let (words, buckets) = m.matrices_mut();
            map.apply_matrix(words);
            map.apply_matrix(buckets);
        }
        StaticEmbeddings::Table(t) => map.apply_matrix(t.vectors_mut()),
    }
    Ok(out)
}
