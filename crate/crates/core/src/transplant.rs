//! Similarity-weighted initialization of the expanded vocabulary.
//!
//! For each appended target token, the `k` screened source tokens whose
//! static vectors are most cosine-similar to the token's static vector are
//! selected, and the token's new embedding row is the temperature-softmax
//! weighted average of those source tokens' *base-model* rows. Tokens with no
//! usable static vector (or whose average is exactly zero) are sampled from a
//! diagonal normal fitted to the screened source rows. Base tokens, including
//! target tokens already present in the base vocabulary, keep their rows.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed_io::{fit_gaussian, sample_gaussian, save_matrix, EmbeddingMatrix, GaussianInit};
use crate::error::{Error, Result};
use crate::synth::VocabEmbeddingTable;
use crate::vocab::{merge_vocab, SourceVocabSet, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransplantConfig {
    /// Neighbors averaged per target token.
    pub k: usize,
    /// Softmax temperature over cosine similarities.
    pub tau: f64,
    pub seed: u64,
}

impl Default for TransplantConfig {
    fn default() -> Self {
        TransplantConfig {
            k: 10,
            tau: 0.1,
            seed: 0,
        }
    }
}

impl TransplantConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("transplant.k must be >= 1".into()));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config("transplant.tau must be a positive number".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    /// Row index into the source table.
    pub source: usize,
    pub similarity: f64,
}

/// Top-k source neighbors for each target row; `None` for masked rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityView {
    pub k: usize,
    pub lists: Vec<Option<Vec<Neighbor>>>,
}

struct UnitRows {
    ids: Vec<usize>,
    norms: Vec<f64>,
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn source_rows(source: &VocabEmbeddingTable) -> UnitRows {
    let ids: Vec<usize> = (0..source.len()).filter(|&i| !source.is_masked(i)).collect();
    let norms = ids.iter().map(|&i| norm(source.row(i))).collect();
    UnitRows { ids, norms }
}

fn check_tables(source: &VocabEmbeddingTable, target: &VocabEmbeddingTable, k: usize) -> Result<UnitRows> {
    if source.dim() != target.dim() {
        return Err(Error::Dimension {
            expected: source.dim(),
            actual: target.dim(),
        });
    }
    let rows = source_rows(source);
    if rows.ids.is_empty() {
        return Err(Error::Transplant("no unmasked source rows".into()));
    }
    if k == 0 || k > rows.ids.len() {
        return Err(Error::Transplant(format!(
            "k = {k} outside 1..={} unmasked source rows",
            rows.ids.len()
        )));
    }
    Ok(rows)
}

fn neighbors_of(source: &VocabEmbeddingTable, rows: &UnitRows, query: &[f32], k: usize) -> Vec<Neighbor> {
    let qn = norm(query);
    let mut scored: Vec<Neighbor> = rows
        .ids
        .iter()
        .zip(&rows.norms)
        .map(|(&i, &n)| Neighbor {
            source: i,
            similarity: (dot(query, source.row(i)) / (qn * n)).clamp(-1.0, 1.0),
        })
        .collect();
    let order = |a: &Neighbor, b: &Neighbor| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.source.cmp(&b.source))
    };
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_by(order);
    scored
}

/// For every unmasked target row, the `k` unmasked source rows of highest
/// cosine similarity, sorted descending with ties broken by source index.
pub fn top_k_similar(
    source: &VocabEmbeddingTable,
    target: &VocabEmbeddingTable,
    k: usize,
) -> Result<SimilarityView> {
    let rows = check_tables(source, target, k)?;
    let lists = (0..target.len())
        .into_par_iter()
        .map(|t| (!target.is_masked(t)).then(|| neighbors_of(source, &rows, target.row(t), k)))
        .collect();
    Ok(SimilarityView { k, lists })
}

/// Softmax of `similarity / tau`, computed with the maximum subtracted.
pub fn softmax_weights(similarities: &[f64], tau: f64) -> Result<Vec<f64>> {
    if similarities.is_empty() {
        return Err(Error::Contract("empty neighbor list".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Contract(format!("tau must be positive, got {tau}")));
    }
    let max = similarities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = similarities.iter().map(|s| ((s - max) / tau).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `sum_x softmax(sim_x / tau) * row_x`.
pub fn weighted_init(neighbors: &[(f64, &[f32])], tau: f64) -> Result<Vec<f32>> {
    let sims: Vec<f64> = neighbors.iter().map(|(s, _)| *s).collect();
    let weights = softmax_weights(&sims, tau)?;
    Ok(weighted_sum(neighbors.iter().map(|(_, r)| *r), &weights))
}

fn weighted_sum<'a>(rows: impl Iterator<Item = &'a [f32]>, weights: &[f64]) -> Vec<f32> {
    let mut acc: Vec<f64> = Vec::new();
    for (row, &w) in rows.zip(weights) {
        if acc.is_empty() {
            acc = vec![0.0; row.len()];
        }
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += w * x as f64;
        }
    }
    acc.into_iter().map(|x| x as f32).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborRecord {
    pub src: String,
    pub sim: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceKind {
    Weighted,
    FallbackSampled,
    OverlapCopied,
}

/// How one appended token's row was produced; one JSONL line in `provenance.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub token: String,
    pub id: usize,
    pub provenance: ProvenanceKind,
    pub neighbors: Vec<NeighborRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub transplant: TransplantConfig,
    /// Free-form run configuration recorded by the caller.
    #[serde(default)]
    pub config: serde_json::Value,
    /// Input name -> SHA-256 hex digest.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    pub base_tokens: usize,
    pub appended_tokens: usize,
    pub overlap_tokens: usize,
    pub weighted: usize,
    pub fallback_sampled: usize,
    pub gaussian: Option<GaussianSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSummary {
    pub source_row_count: usize,
    pub mean_of_means: f64,
    pub mean_of_variances: f64,
}

impl From<&GaussianInit> for GaussianSummary {
    fn from(g: &GaussianInit) -> Self {
        let d = g.mean.len().max(1) as f64;
        GaussianSummary {
            source_row_count: g.source_row_count,
            mean_of_means: g.mean.iter().sum::<f64>() / d,
            mean_of_variances: g.variance.iter().sum::<f64>() / d,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransplantResult {
    pub merged_vocab: Vocabulary,
    pub matrix: EmbeddingMatrix,
    /// One record per appended token, in id order.
    pub provenance: Vec<ProvenanceRecord>,
    /// Target tokens that already existed in the base vocabulary.
    pub overlap: Vec<String>,
    pub manifest: Manifest,
}

/// Per-token generator keyed by the run seed and the token text.
pub fn token_rng(seed: u64, token: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

enum RowPlan {
    Weighted(Vec<f32>, Vec<NeighborRecord>),
    Fallback,
}

/// Builds the expanded embedding matrix.
///
/// `source_table` rows must line up with `source_set.tokens`, and
/// `target_table` rows with `new_vocab`.
pub fn run_transplant(
    base_vocab: &Vocabulary,
    base_matrix: &EmbeddingMatrix,
    source_set: &SourceVocabSet,
    source_table: &VocabEmbeddingTable,
    target_table: &VocabEmbeddingTable,
    new_vocab: &Vocabulary,
    config: &TransplantConfig,
) -> Result<TransplantResult> {
    config.validate()?;
    if base_matrix.rows() != base_vocab.len() {
        return Err(Error::Contract(format!(
            "base matrix has {} rows for {} base tokens",
            base_matrix.rows(),
            base_vocab.len()
        )));
    }
    if source_table.tokens != source_set.tokens {
        return Err(Error::Contract(
            "source table rows do not match the screened source tokens".into(),
        ));
    }
    if target_table.tokens.as_slice() != new_vocab.tokens() {
        return Err(Error::Contract(
            "target table rows do not match the new vocabulary".into(),
        ));
    }
    if source_set.rows.dim() != base_matrix.dim() {
        return Err(Error::Dimension {
            expected: base_matrix.dim(),
            actual: source_set.rows.dim(),
        });
    }

    let merge = merge_vocab(base_vocab, new_vocab);
    let appended_ids: Vec<usize> = merge
        .appended
        .iter()
        .map(|t| new_vocab.id_of(t).expect("appended token comes from the new vocabulary"))
        .collect();

    let needs_neighbors = appended_ids.iter().any(|&i| !target_table.is_masked(i));
    let rows = if needs_neighbors {
        Some(check_tables(source_table, target_table, config.k)?)
    } else {
        None
    };

    let plans: Vec<RowPlan> = appended_ids
        .par_iter()
        .map(|&t| {
            let Some(rows) = rows.as_ref().filter(|_| !target_table.is_masked(t)) else {
                return RowPlan::Fallback;
            };
            let neighbors = neighbors_of(source_table, rows, target_table.row(t), config.k);
            let sims: Vec<f64> = neighbors.iter().map(|n| n.similarity).collect();
            let weights = softmax_weights(&sims, config.tau).expect("k >= 1 and tau > 0");
            let row = weighted_sum(neighbors.iter().map(|n| source_set.rows.row(n.source)), &weights);
            if row.iter().all(|&v| v == 0.0) {
                return RowPlan::Fallback;
            }
            let records = neighbors
                .iter()
                .zip(&weights)
                .map(|(n, &w)| NeighborRecord {
                    src: source_set.tokens[n.source].clone(),
                    sim: n.similarity,
                    weight: w,
                })
                .collect();
            RowPlan::Weighted(row, records)
        })
        .collect();

    let any_fallback = plans.iter().any(|p| matches!(p, RowPlan::Fallback));
    let gaussian = if any_fallback {
        Some(fit_gaussian(&source_set.rows)?)
    } else {
        None
    };

    let mut matrix = base_matrix.clone();
    let mut provenance = Vec::with_capacity(plans.len());
    let (mut weighted, mut fallback) = (0, 0);
    for ((token, plan), offset) in merge.appended.iter().zip(plans).zip(0..) {
        let id = base_vocab.len() + offset;
        let (row, kind, neighbors) = match plan {
            RowPlan::Weighted(row, records) => {
                weighted += 1;
                (row, ProvenanceKind::Weighted, records)
            }
            RowPlan::Fallback => {
                fallback += 1;
                let g = gaussian.as_ref().expect("fitted when any fallback exists");
                let row = sample_gaussian(g, &mut token_rng(config.seed, token));
                (row, ProvenanceKind::FallbackSampled, Vec::new())
            }
        };
        matrix.push_row(&row)?;
        provenance.push(ProvenanceRecord {
            token: token.clone(),
            id,
            provenance: kind,
            neighbors,
        });
    }

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_owned(),
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        transplant: config.clone(),
        config: serde_json::Value::Null,
        inputs: BTreeMap::new(),
        base_tokens: base_vocab.len(),
        appended_tokens: merge.appended.len(),
        overlap_tokens: merge.overlap.len(),
        weighted,
        fallback_sampled: fallback,
        gaussian: gaussian.as_ref().map(GaussianSummary::from),
    };
    Ok(TransplantResult {
        merged_vocab: merge.merged,
        matrix,
        provenance,
        overlap: merge.overlap,
        manifest,
    })
}

pub const VOCAB_FILE: &str = "vocab.txt";
pub const MATRIX_FILE: &str = "matrix.bin";
pub const PROVENANCE_FILE: &str = "provenance.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `vocab.txt`, `matrix.bin` + `matrix.json`, `provenance.jsonl` and
/// `manifest.json` into `out_dir`.
pub fn export_result(result: &TransplantResult, out_dir: impl AsRef<Path>) -> Result<()> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    result.merged_vocab.save(out_dir.join(VOCAB_FILE))?;
    save_matrix(&result.matrix, out_dir.join(MATRIX_FILE))?;

    let prov_path = out_dir.join(PROVENANCE_FILE);
    let file = File::create(&prov_path).map_err(|e| Error::io(&prov_path, e))?;
    let mut out = BufWriter::new(file);
    for rec in &result.provenance {
        serde_json::to_writer(&mut out, rec).expect("record serializes");
        out.write_all(b"\n").map_err(|e| Error::io(&prov_path, e))?;
    }
    out.flush().map_err(|e| Error::io(&prov_path, e))?;

    let manifest_path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&result.manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))
}

pub fn load_provenance(path: impl AsRef<Path>) -> Result<Vec<ProvenanceRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}
