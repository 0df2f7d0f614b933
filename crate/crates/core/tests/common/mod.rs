#![allow(dead_code)]

use lexiport_core::embed_io::EmbeddingMatrix;
use lexiport_core::synth::VocabEmbeddingTable;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Random orthogonal matrix: the Q factor of a Gaussian matrix, with column
/// signs fixed so the distribution is uniform.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, d, d).qr();
    let (mut q, r) = qr.unpack();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn random_table(rng: &mut ChaCha8Rng, prefix: &str, rows: usize, dim: usize) -> VocabEmbeddingTable {
    let data: Vec<Vec<f32>> = (0..rows)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect();
    table_from(prefix, &data)
}

pub fn table_from(prefix: &str, rows: &[Vec<f32>]) -> VocabEmbeddingTable {
    let dim = rows[0].len();
    let tokens = (0..rows.len()).map(|i| format!("{prefix}{i}")).collect();
    VocabEmbeddingTable::from_rows(tokens, EmbeddingMatrix::from_rows(dim, rows).unwrap()).unwrap()
}

/// Full cosine matrix by straight loops, each target row sorted by
/// (similarity desc, source index asc) and cut to `k`. Zero rows are skipped.
pub fn brute_force_top_k(source: &[Vec<f32>], target: &[Vec<f32>], k: usize) -> Vec<Option<Vec<(usize, f64)>>> {
    let norm = |v: &[f32]| v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    target
        .iter()
        .map(|t| {
            let nt = norm(t);
            if nt == 0.0 {
                return None;
            }
            let mut all: Vec<(usize, f64)> = Vec::new();
            for (i, s) in source.iter().enumerate() {
                let ns = norm(s);
                if ns == 0.0 {
                    continue;
                }
                let mut dot = 0.0;
                for j in 0..t.len() {
                    dot += t[j] as f64 * s[j] as f64;
                }
                all.push((i, dot / (nt * ns)));
            }
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            all.truncate(k);
            Some(all)
        })
        .collect()
}

pub fn rows_of(table: &VocabEmbeddingTable) -> Vec<Vec<f32>> {
    (0..table.len()).map(|i| table.row(i).to_vec()).collect()
}
