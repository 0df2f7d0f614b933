//! Static vectors for vocabulary entries.
//!
//! A token that is a full word of the embedding model takes that word's
//! vector. Any other token is represented by the sum of the vectors of its
//! character n-grams, and by an exact zero row when none of them is known.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed_io::{EmbeddingMatrix, VectorTable};
use crate::embed_trainer::EmbeddingModel;
use crate::error::{Error, Result};
use crate::vocab::{is_special, Vocabulary};

/// Static embeddings of one language: a trained subword model or a plain table.
#[derive(Clone, Debug, PartialEq)]
pub enum StaticEmbeddings {
    Model(EmbeddingModel),
    Table(VectorTable),
}

impl StaticEmbeddings {
    pub fn dim(&self) -> usize {
        match self {
            StaticEmbeddings::Model(m) => m.dim(),
            StaticEmbeddings::Table(t) => t.dim(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        match self {
            StaticEmbeddings::Model(m) => m.contains(word),
            StaticEmbeddings::Table(t) => t.get(word).is_some(),
        }
    }

    pub fn word_vector(&self, word: &str) -> Option<Vec<f32>> {
        match self {
            StaticEmbeddings::Model(m) => m.word_vector(word),
            StaticEmbeddings::Table(t) => t.get(word).map(<[f32]>::to_vec),
        }
    }
}

impl From<EmbeddingModel> for StaticEmbeddings {
    fn from(m: EmbeddingModel) -> Self {
        StaticEmbeddings::Model(m)
    }
}

impl From<VectorTable> for StaticEmbeddings {
    fn from(t: VectorTable) -> Self {
        StaticEmbeddings::Table(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Use `<` / `>` boundary markers when extracting n-grams.
    pub ngram_markers: bool,
    /// Average instead of summing the n-gram vectors.
    pub ngram_mean: bool,
    /// n-gram bounds for plain tables; subword models use their own.
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            ngram_markers: true,
            ngram_mean: false,
            n_min: 3,
            n_max: 6,
        }
    }
}

/// Distinct character n-grams of `token`, lengths `n_min..=n_max`.
///
/// Word-initial tokens are wrapped as `<token>`; continuation tokens lose
/// their prefix and are wrapped as `token>` since they never start a word.
/// With `markers` off the bare token is used. Single-character n-grams made
/// of a marker alone are skipped.
pub fn extract_ngrams(
    token: &str,
    n_min: usize,
    n_max: usize,
    continuation_prefix: &str,
    markers: bool,
) -> Vec<String> {
    let continuation = !continuation_prefix.is_empty()
        && token.len() > continuation_prefix.len()
        && token.starts_with(continuation_prefix);
    let body = if continuation {
        &token[continuation_prefix.len()..]
    } else {
        token
    };
    let wrapped: Vec<char> = match (markers, continuation) {
        (false, _) => body.chars().collect(),
        (true, true) => body.chars().chain(['>']).collect(),
        (true, false) => ['<'].into_iter().chain(body.chars()).chain(['>']).collect(),
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for start in 0..wrapped.len() {
        for n in n_min.max(1)..=n_max {
            if start + n > wrapped.len() {
                break;
            }
            if n == 1 && markers && (wrapped[start] == '<' || wrapped[start] == '>') {
                continue;
            }
            let gram: String = wrapped[start..start + n].iter().collect();
            if seen.insert(gram.clone()) {
                out.push(gram);
            }
        }
    }
    out
}

fn strip_markers(gram: &str) -> &str {
    gram.trim_start_matches('<').trim_end_matches('>')
}

/// Static vector of one vocabulary token.
pub fn synthesize_embedding(
    token: &str,
    embeddings: &StaticEmbeddings,
    continuation_prefix: &str,
    config: &SynthConfig,
) -> Vec<f32> {
    let stripped = if !continuation_prefix.is_empty()
        && token.len() > continuation_prefix.len()
        && token.starts_with(continuation_prefix)
    {
        &token[continuation_prefix.len()..]
    } else {
        token
    };
    if let Some(v) = embeddings.word_vector(stripped) {
        return v;
    }
    let dim = embeddings.dim();
    let mut acc = vec![0f32; dim];
    let mut used = 0usize;
    match embeddings {
        StaticEmbeddings::Model(m) => {
            let grams = extract_ngrams(token, m.n_min(), m.n_max(), continuation_prefix, config.ngram_markers);
            for g in &grams {
                add_into(&mut acc, m.bucket_row(m.bucket_of(g)));
                used += 1;
            }
        }
        StaticEmbeddings::Table(t) => {
            let grams = extract_ngrams(token, config.n_min, config.n_max, continuation_prefix, config.ngram_markers);
            let mut seen = HashSet::new();
            for g in &grams {
                let key = strip_markers(g);
                if key.is_empty() || !seen.insert(key) {
                    continue;
                }
                if let Some(v) = t.get(key) {
                    add_into(&mut acc, v);
                    used += 1;
                }
            }
        }
    }
    if config.ngram_mean && used > 0 {
        let scale = 1.0 / used as f32;
        acc.iter_mut().for_each(|a| *a *= scale);
    }
    acc
}

fn add_into(acc: &mut [f32], v: &[f32]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += x;
    }
}

/// Cosine similarity in `f64`; `None` when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
    }
}

/// Per-token static vectors of a vocabulary in the common space.
#[derive(Clone, Debug, PartialEq)]
pub struct VocabEmbeddingTable {
    pub tokens: Vec<String>,
    pub vectors: EmbeddingMatrix,
    /// Rows that are exactly zero (specials and unsynthesizable tokens).
    pub zero_mask: Vec<bool>,
}

impl VocabEmbeddingTable {
    /// Builds a table from rows, masking every all-zero row.
    pub fn from_rows(tokens: Vec<String>, vectors: EmbeddingMatrix) -> Result<Self> {
        if tokens.len() != vectors.rows() {
            return Err(Error::Contract(format!(
                "{} tokens but {} rows",
                tokens.len(),
                vectors.rows()
            )));
        }
        if !vectors.all_finite() {
            return Err(Error::Contract("non-finite static vector".into()));
        }
        let zero_mask = vectors
            .iter_rows()
            .map(|r| r.iter().all(|&v| v == 0.0))
            .collect();
        Ok(VocabEmbeddingTable {
            tokens,
            vectors,
            zero_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.dim()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.vectors.row(i)
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.zero_mask[i]
    }

    pub fn unmasked_count(&self) -> usize {
        self.zero_mask.iter().filter(|m| !**m).count()
    }

    pub fn to_vector_table(&self) -> VectorTable {
        VectorTable::from_entries(self.dim(), self.tokens.iter().cloned().zip(self.vectors.iter_rows()))
            .expect("vocabulary tokens are unique")
    }

    pub fn from_vector_table(table: &VectorTable) -> Result<Self> {
        Self::from_rows(table.tokens().to_vec(), table.vectors().clone())
    }
}

/// Synthesizes a static row for every token; specials get masked zero rows.
pub fn build_table(
    vocab: &Vocabulary,
    embeddings: &StaticEmbeddings,
    config: &SynthConfig,
) -> VocabEmbeddingTable {
    build_table_for_tokens(vocab.tokens(), vocab.continuation_prefix(), embeddings, config)
}

pub fn build_table_for_tokens(
    tokens: &[String],
    continuation_prefix: &str,
    embeddings: &StaticEmbeddings,
    config: &SynthConfig,
) -> VocabEmbeddingTable {
    let dim = embeddings.dim();
    let rows: Vec<Vec<f32>> = tokens
        .par_iter()
        .map(|tok| {
            if is_special(tok) {
                vec![0.0; dim]
            } else {
                synthesize_embedding(tok, embeddings, continuation_prefix, config)
            }
        })
        .collect();
    let vectors = EmbeddingMatrix::from_rows(dim, &rows).expect("rows have model dimension");
    let zero_mask = rows.iter().map(|r| r.iter().all(|&v| v == 0.0)).collect();
    VocabEmbeddingTable {
        tokens: tokens.to_vec(),
        vectors,
        zero_mask,
    }
}
