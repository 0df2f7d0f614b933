//! Subword-aware CBOW embeddings trained with negative sampling.
//!
//! Every vocabulary word owns an input row, and each of its character n-grams
//! (wrapped in `<` `>` boundary markers) is hashed with 32-bit FNV-1a into a
//! shared bucket table. The input representation of a word is the mean of its
//! own row and its n-gram rows; the reported word vector is that same mean.
//!
//! Training predicts the center word from the mean of all input rows of the
//! context words and contrasts it against noise words drawn from the
//! unigram distribution raised to 0.75. Several workers may update the
//! parameters concurrently without locks; only `workers = 1` is bit-reproducible.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus_io::CorpusStream;
use crate::embed_io::{EmbeddingMatrix, VectorTable};
use crate::error::{Error, Result};
use crate::synth::extract_ngrams;

pub const MODEL_MAGIC: &[u8; 13] = b"LEXIPORT-EMB\x01";

const NOISE_EXPONENT: f64 = 0.75;

/// 32-bit FNV-1a.
pub fn fnv1a_32(bytes: &[u8]) -> u32 {
    let mut hash: u32 = 0x811c_9dc5;
    for &b in bytes {
        hash ^= b as u32;
        hash = hash.wrapping_mul(0x0100_0193);
    }
    hash
}

pub fn bucket_index(ngram: &str, bucket_count: usize) -> usize {
    fnv1a_32(ngram.as_bytes()) as usize % bucket_count
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub dim: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub window: usize,
    pub min_count: u64,
    pub initial_lr: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub bucket_count: usize,
    /// Frequent-word subsampling threshold; 0 disables it.
    pub sample: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            dim: 300,
            epochs: 20,
            negatives: 10,
            window: 5,
            min_count: 5,
            initial_lr: 0.05,
            n_min: 3,
            n_max: 6,
            bucket_count: 2_000_000,
            sample: 1e-4,
            seed: 0,
            workers: 1,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("trainer.{what}")));
        if self.dim == 0 {
            return bad("dim must be > 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.negatives == 0 {
            return bad("negatives must be >= 1");
        }
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return bad("n_min must satisfy 1 <= n_min <= n_max");
        }
        if self.bucket_count == 0 {
            return bad("bucket_count must be > 0");
        }
        if !(self.initial_lr > 0.0) {
            return bad("initial_lr must be > 0");
        }
        if self.sample < 0.0 {
            return bad("sample must be >= 0");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        Ok(())
    }
}

/// Word rows plus the hashed n-gram bucket table.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    dim: usize,
    n_min: usize,
    n_max: usize,
    words: Vec<String>,
    word_index: HashMap<String, usize>,
    word_rows: EmbeddingMatrix,
    buckets: EmbeddingMatrix,
}

impl EmbeddingModel {
    pub fn new(
        words: Vec<String>,
        word_rows: EmbeddingMatrix,
        buckets: EmbeddingMatrix,
        n_min: usize,
        n_max: usize,
    ) -> Result<Self> {
        if word_rows.rows() != words.len() {
            return Err(Error::Contract(format!(
                "{} words but {} word rows",
                words.len(),
                word_rows.rows()
            )));
        }
        if word_rows.dim() != buckets.dim() {
            return Err(Error::Dimension {
                expected: word_rows.dim(),
                actual: buckets.dim(),
            });
        }
        if buckets.rows() == 0 {
            return Err(Error::Contract("bucket table is empty".into()));
        }
        let mut word_index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if word_index.insert(w.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate word {w:?}")));
            }
        }
        Ok(EmbeddingModel {
            dim: word_rows.dim(),
            n_min,
            n_max,
            words,
            word_index,
            word_rows,
            buckets,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_min(&self) -> usize {
        self.n_min
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.rows()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_index.contains_key(word)
    }

    pub fn word_rows(&self) -> &EmbeddingMatrix {
        &self.word_rows
    }

    pub fn buckets(&self) -> &EmbeddingMatrix {
        &self.buckets
    }

    pub(crate) fn matrices_mut(&mut self) -> (&mut EmbeddingMatrix, &mut EmbeddingMatrix) {
        (&mut self.word_rows, &mut self.buckets)
    }

    pub fn bucket_of(&self, ngram: &str) -> usize {
        bucket_index(ngram, self.buckets.rows())
    }

    pub fn bucket_row(&self, bucket: usize) -> &[f32] {
        self.buckets.row(bucket)
    }

    /// Bucket indices of a training word's n-grams.
    pub fn word_buckets(&self, word: &str) -> Vec<usize> {
        word_ngram_buckets(word, self.n_min, self.n_max, self.buckets.rows())
    }

    /// Mean of the word's own row and its n-gram bucket rows.
    pub fn word_vector(&self, word: &str) -> Option<Vec<f32>> {
        let id = *self.word_index.get(word)?;
        let buckets = self.word_buckets(word);
        let mut acc: Vec<f32> = self.word_rows.row(id).to_vec();
        for b in &buckets {
            for (a, v) in acc.iter_mut().zip(self.buckets.row(*b)) {
                *a += v;
            }
        }
        let scale = 1.0 / (1 + buckets.len()) as f32;
        acc.iter_mut().for_each(|a| *a *= scale);
        Some(acc)
    }

    /// Reported vectors of every word, in vocabulary order.
    pub fn to_vector_table(&self) -> VectorTable {
        let mut table = VectorTable::new(self.dim);
        for w in &self.words {
            let v = self.word_vector(w).expect("word present");
            table.insert(w.clone(), &v).expect("unique words");
        }
        table
    }
}

fn word_ngram_buckets(word: &str, n_min: usize, n_max: usize, bucket_count: usize) -> Vec<usize> {
    extract_ngrams(word, n_min, n_max, "", true)
        .iter()
        .map(|g| bucket_index(g, bucket_count))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingStats {
    /// Mean negative-sampling loss per prediction, one entry per epoch.
    pub epoch_loss: Vec<f64>,
    pub vocab_size: usize,
    pub corpus_tokens: usize,
}

pub fn train_cbow_subword(stream: &mut CorpusStream, config: &TrainerConfig) -> Result<EmbeddingModel> {
    let sentences = stream.read_sentences()?;
    train_on_sentences(&sentences, config).map(|(m, _)| m)
}

/// Lock-free shared parameter matrix (hogwild updates).
struct SharedMatrix {
    dim: usize,
    data: Vec<AtomicU32>,
}

impl SharedMatrix {
    fn from_values(dim: usize, values: impl Iterator<Item = f32>) -> Self {
        SharedMatrix {
            dim,
            data: values.map(|v| AtomicU32::new(v.to_bits())).collect(),
        }
    }

    #[inline]
    fn get(&self, row: usize, j: usize) -> f32 {
        f32::from_bits(self.data[row * self.dim + j].load(Ordering::Relaxed))
    }

    #[inline]
    fn add(&self, row: usize, j: usize, delta: f32) {
        let cell = &self.data[row * self.dim + j];
        let v = f32::from_bits(cell.load(Ordering::Relaxed)) + delta;
        cell.store(v.to_bits(), Ordering::Relaxed);
    }

    fn to_matrix(&self, rows: std::ops::Range<usize>) -> EmbeddingMatrix {
        let dim = self.dim;
        let n = rows.len();
        let data = self.data[rows.start * dim..rows.end * dim]
            .iter()
            .map(|c| f32::from_bits(c.load(Ordering::Relaxed)))
            .collect();
        EmbeddingMatrix::new(n, dim, data).expect("shape")
    }
}

struct Shared<'a> {
    config: &'a TrainerConfig,
    input: SharedMatrix,
    output: SharedMatrix,
    /// Input row ids of each word: its own row, then `n_words + bucket`.
    subwords: Vec<Vec<usize>>,
    noise_cdf: Vec<f64>,
    keep_prob: Vec<f64>,
    total_tokens: u64,
    processed: AtomicU64,
}

/// Trains on pre-split sentences; returns the model and per-epoch losses.
pub fn train_on_sentences(
    sentences: &[Vec<String>],
    config: &TrainerConfig,
) -> Result<(EmbeddingModel, TrainingStats)> {
    config.validate()?;
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for s in sentences {
        for w in s {
            *counts.entry(w.as_str()).or_insert(0) += 1;
        }
    }
    let mut vocab: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= config.min_count)
        .collect();
    if vocab.is_empty() {
        return Err(Error::Training(format!(
            "no word occurs at least min_count = {} times",
            config.min_count
        )));
    }
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let n_words = vocab.len();
    let word_id: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, (w, _))| (*w, i)).collect();

    let corpus: Vec<Vec<u32>> = sentences
        .iter()
        .map(|s| {
            s.iter()
                .filter_map(|w| word_id.get(w.as_str()).map(|&i| i as u32))
                .collect::<Vec<_>>()
        })
        .filter(|s: &Vec<u32>| !s.is_empty())
        .collect();
    let total_tokens: u64 = corpus.iter().map(|s| s.len() as u64).sum();

    let subwords: Vec<Vec<usize>> = vocab
        .iter()
        .enumerate()
        .map(|(i, (w, _))| {
            let mut ids = vec![i];
            ids.extend(
                word_ngram_buckets(w, config.n_min, config.n_max, config.bucket_count)
                    .into_iter()
                    .map(|b| n_words + b),
            );
            ids
        })
        .collect();

    let mut cdf = Vec::with_capacity(n_words);
    let mut acc = 0.0;
    for (_, c) in &vocab {
        acc += (*c as f64).powf(NOISE_EXPONENT);
        cdf.push(acc);
    }
    let keep_prob = vocab
        .iter()
        .map(|(_, c)| {
            if config.sample <= 0.0 {
                1.0
            } else {
                let f = *c as f64 / total_tokens as f64;
                ((config.sample / f).sqrt() + config.sample / f).min(1.0)
            }
        })
        .collect();

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = 1.0 / config.dim as f32;
    let input_rows = n_words + config.bucket_count;
    let input = SharedMatrix::from_values(
        config.dim,
        (0..input_rows * config.dim).map(|_| init_rng.random_range(-bound..bound)),
    );
    let output = SharedMatrix::from_values(config.dim, std::iter::repeat_n(0.0, n_words * config.dim));

    let shared = Shared {
        config,
        input,
        output,
        subwords,
        noise_cdf: cdf,
        keep_prob,
        total_tokens,
        processed: AtomicU64::new(0),
    };

    info!(
        "training CBOW: {n_words} words, {total_tokens} tokens, dim {}, {} epochs",
        config.dim, config.epochs
    );

    let workers = config.workers.min(corpus.len()).max(1);
    let chunk = corpus.len().div_ceil(workers);
    let per_worker: Vec<Vec<(f64, u64)>> = if workers == 1 {
        vec![run_worker(&shared, &corpus, 0)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = corpus
                .chunks(chunk)
                .enumerate()
                .map(|(w, part)| {
                    let shared = &shared;
                    scope.spawn(move || run_worker(shared, part, w as u64))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        })
    };

    let mut epoch_loss = Vec::with_capacity(config.epochs);
    for e in 0..config.epochs {
        let (sum, n) = per_worker
            .iter()
            .fold((0.0, 0u64), |(s, n), w| (s + w[e].0, n + w[e].1));
        epoch_loss.push(if n == 0 { 0.0 } else { sum / n as f64 });
    }

    let Shared { input, .. } = shared;
    let word_rows = input.to_matrix(0..n_words);
    let buckets = input.to_matrix(n_words..input_rows);
    drop(input);
    let words = vocab.iter().map(|(w, _)| w.to_string()).collect();
    let model = EmbeddingModel::new(words, word_rows, buckets, config.n_min, config.n_max)?;
    let stats = TrainingStats {
        epoch_loss,
        vocab_size: n_words,
        corpus_tokens: total_tokens as usize,
    };
    Ok((model, stats))
}

#[inline]
fn log_sigmoid_loss(score: f32, label: bool) -> f64 {
    let p = if label { score } else { 1.0 - score };
    -(p.max(1e-7) as f64).ln()
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    if x > 20.0 {
        1.0
    } else if x < -20.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Processes one corpus shard for every epoch; returns (loss sum, predictions) per epoch.
fn run_worker(shared: &Shared<'_>, corpus: &[Vec<u32>], worker: u64) -> Vec<(f64, u64)> {
    let cfg = shared.config;
    let dim = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(worker + 1));
    let total = (shared.total_tokens * cfg.epochs as u64) as f64;
    let mut hidden = vec![0f32; dim];
    let mut grad = vec![0f32; dim];
    let mut bow: Vec<usize> = Vec::new();
    let mut line: Vec<u32> = Vec::new();
    let mut out = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut predictions = 0u64;
        for sentence in corpus {
            let done = shared
                .processed
                .fetch_add(sentence.len() as u64, Ordering::Relaxed) as f64;
            let lr = (cfg.initial_lr * (1.0 - done / total)).max(0.0) as f32;

            line.clear();
            for &w in sentence {
                if shared.keep_prob[w as usize] >= 1.0
                    || rng.random::<f64>() < shared.keep_prob[w as usize]
                {
                    line.push(w);
                }
            }
            for pos in 0..line.len() {
                let reach = rng.random_range(1..=cfg.window);
                bow.clear();
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(line.len() - 1);
                for c in lo..=hi {
                    if c != pos {
                        bow.extend_from_slice(&shared.subwords[line[c] as usize]);
                    }
                }
                if bow.is_empty() {
                    continue;
                }
                hidden.iter_mut().for_each(|h| *h = 0.0);
                for &row in &bow {
                    for (j, h) in hidden.iter_mut().enumerate() {
                        *h += shared.input.get(row, j);
                    }
                }
                let scale = 1.0 / bow.len() as f32;
                hidden.iter_mut().for_each(|h| *h *= scale);
                grad.iter_mut().for_each(|g| *g = 0.0);

                let target = line[pos] as usize;
                loss_sum += update_output(shared, target, true, &hidden, &mut grad, lr);
                predictions += 1;
                for _ in 0..cfg.negatives {
                    let negative = loop {
                        let n = sample_noise(&shared.noise_cdf, &mut rng);
                        if n != target || shared.noise_cdf.len() == 1 {
                            break n;
                        }
                    };
                    if negative == target {
                        continue;
                    }
                    loss_sum += update_output(shared, negative, false, &hidden, &mut grad, lr);
                    predictions += 1;
                }
                for &row in &bow {
                    for (j, g) in grad.iter().enumerate() {
                        shared.input.add(row, j, *g);
                    }
                }
            }
        }
        out.push((loss_sum, predictions));
    }
    out
}

fn update_output(
    shared: &Shared<'_>,
    word: usize,
    label: bool,
    hidden: &[f32],
    grad: &mut [f32],
    lr: f32,
) -> f64 {
    let mut dot = 0f32;
    for (j, h) in hidden.iter().enumerate() {
        dot += shared.output.get(word, j) * h;
    }
    let score = sigmoid(dot);
    let alpha = lr * (if label { 1.0 } else { 0.0 } - score);
    for (j, g) in grad.iter_mut().enumerate() {
        *g += alpha * shared.output.get(word, j);
    }
    for (j, h) in hidden.iter().enumerate() {
        shared.output.add(word, j, alpha * h);
    }
    log_sigmoid_loss(score, label)
}

fn sample_noise<R: Rng>(cdf: &[f64], rng: &mut R) -> usize {
    let total = *cdf.last().expect("non-empty");
    let x = rng.random::<f64>() * total;
    cdf.partition_point(|&c| c <= x).min(cdf.len() - 1)
}

/// The `k` words whose reported vectors have the highest cosine with `query`,
/// ties broken by vocabulary order.
pub fn nearest_words(model: &EmbeddingModel, query: &[f32], k: usize) -> Result<Vec<(String, f64)>> {
    if query.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            actual: query.len(),
        });
    }
    if k > model.words().len() {
        return Err(Error::Contract(format!(
            "k = {k} exceeds the {} model words",
            model.words().len()
        )));
    }
    let qnorm = query.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    if qnorm == 0.0 {
        return Err(Error::DegenerateQuery);
    }
    let mut scored: Vec<(usize, f64)> = model
        .words()
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let v = model.word_vector(w).expect("word present");
            (i, crate::synth::cosine(query, &v).unwrap_or(0.0))
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, s)| (model.words()[i].clone(), s))
        .collect())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DumpHeader {
    dim: usize,
    n_min: usize,
    n_max: usize,
    bucket_count: usize,
    words: usize,
    config: Option<TrainerConfig>,
}

/// Writes the binary model dump: magic, a length-prefixed JSON header, the
/// words (length-prefixed UTF-8), word rows and bucket rows (LE `f32`).
pub fn save_model(
    model: &EmbeddingModel,
    config: Option<&TrainerConfig>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let file = File::create(path).map_err(io)?;
    let mut out = BufWriter::new(file);
    let header = serde_json::to_vec(&DumpHeader {
        dim: model.dim,
        n_min: model.n_min,
        n_max: model.n_max,
        bucket_count: model.bucket_count(),
        words: model.words.len(),
        config: config.cloned(),
    })
    .expect("header serializes");
    out.write_all(MODEL_MAGIC).map_err(io)?;
    out.write_u32::<LittleEndian>(header.len() as u32).map_err(io)?;
    out.write_all(&header).map_err(io)?;
    for w in &model.words {
        out.write_u32::<LittleEndian>(w.len() as u32).map_err(io)?;
        out.write_all(w.as_bytes()).map_err(io)?;
    }
    for &v in model.word_rows.as_slice().iter().chain(model.buckets.as_slice()) {
        out.write_f32::<LittleEndian>(v).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(EmbeddingModel, Option<TrainerConfig>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let bad = |msg: String| Error::format(path, 0, msg);
    let mut magic = [0u8; 13];
    reader
        .read_exact(&mut magic)
        .map_err(|e| bad(format!("truncated magic: {e}")))?;
    if &magic != MODEL_MAGIC {
        return Err(bad("not a model dump (bad magic)".into()));
    }
    let read_err = |e: std::io::Error| bad(format!("truncated dump: {e}"));
    let hlen = reader.read_u32::<LittleEndian>().map_err(read_err)? as usize;
    let mut hbuf = vec![0u8; hlen];
    reader.read_exact(&mut hbuf).map_err(read_err)?;
    let header: DumpHeader =
        serde_json::from_slice(&hbuf).map_err(|e| bad(format!("bad header: {e}")))?;
    let mut words = Vec::with_capacity(header.words);
    for _ in 0..header.words {
        let len = reader.read_u32::<LittleEndian>().map_err(read_err)? as usize;
        let mut buf = vec![0u8; len];
        reader.read_exact(&mut buf).map_err(read_err)?;
        words.push(String::from_utf8(buf).map_err(|e| bad(e.to_string()))?);
    }
    let mut word_data = vec![0f32; header.words * header.dim];
    reader
        .read_f32_into::<LittleEndian>(&mut word_data)
        .map_err(read_err)?;
    let mut bucket_data = vec![0f32; header.bucket_count * header.dim];
    reader
        .read_f32_into::<LittleEndian>(&mut bucket_data)
        .map_err(read_err)?;
    let model = EmbeddingModel::new(
        words,
        EmbeddingMatrix::new(header.words, header.dim, word_data)?,
        EmbeddingMatrix::new(header.bucket_count, header.dim, bucket_data)?,
        header.n_min,
        header.n_max,
    )?;
    Ok((model, header.config))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> TrainerConfig {
        TrainerConfig {
            dim: 16,
            epochs: 3,
            negatives: 5,
            min_count: 1,
            bucket_count: 1000,
            sample: 0.0,
            seed: 5,
            ..TrainerConfig::default()
        }
    }

    fn sentences(text: &str) -> Vec<Vec<String>> {
        text.lines()
            .map(|l| l.split_whitespace().map(String::from).collect())
            .collect()
    }

    #[test]
    fn fnv1a_reference_vectors() {
        assert_eq!(fnv1a_32(b""), 2_166_136_261);
        assert_eq!(fnv1a_32(b"a"), 0xe40c_292c);
        assert_eq!(fnv1a_32(b"foobar"), 0xbf9c_f968);
    }

    #[test]
    fn defaults() {
        let c = TrainerConfig::default();
        assert_eq!((c.dim, c.epochs, c.negatives), (300, 20, 10));
        assert_eq!((c.window, c.min_count, c.bucket_count), (5, 5, 2_000_000));
        assert_eq!(c.initial_lr, 0.05);
        assert_eq!((c.n_min, c.n_max), (3, 6));
    }

    #[test]
    fn rejects_invalid_config() {
        for c in [
            TrainerConfig { dim: 0, ..small_config() },
            TrainerConfig { epochs: 0, ..small_config() },
            TrainerConfig { negatives: 0, ..small_config() },
            TrainerConfig { window: 0, ..small_config() },
        ] {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn empty_vocabulary_is_an_error() {
        let cfg = TrainerConfig {
            min_count: 5,
            ..small_config()
        };
        assert!(matches!(
            train_on_sentences(&sentences("a b c"), &cfg),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn single_worker_is_deterministic() {
        let corpus = sentences("the cat sat\nthe dog sat\na cat ran\n");
        let (a, _) = train_on_sentences(&corpus, &small_config()).unwrap();
        let (b, _) = train_on_sentences(&corpus, &small_config()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn word_vector_is_mean_of_rows() {
        let corpus = sentences("cat dog\ndog cat\n");
        let (m, _) = train_on_sentences(&corpus, &small_config()).unwrap();
        let id = m.words().iter().position(|w| w == "cat").unwrap();
        let grams = extract_ngrams("cat", 3, 6, "", true);
        let mut expected: Vec<f32> = m.word_rows().row(id).to_vec();
        for g in &grams {
            let b = fnv1a_32(g.as_bytes()) as usize % 1000;
            for (e, v) in expected.iter_mut().zip(m.bucket_row(b)) {
                *e += v;
            }
        }
        let scale = 1.0 / (1 + grams.len()) as f32;
        expected.iter_mut().for_each(|e| *e *= scale);
        assert_eq!(m.word_vector("cat").unwrap(), expected);
        assert!(m.word_buckets("cat").iter().all(|&b| b < 1000));
    }

    #[test]
    fn nearest_words_contract() {
        let corpus = sentences("a b c d\nd c b a\n");
        let (m, _) = train_on_sentences(&corpus, &small_config()).unwrap();
        let q = m.word_vector("c").unwrap();
        let res = nearest_words(&m, &q, 4).unwrap();
        assert_eq!(res[0].0, "c");
        assert!((res[0].1 - 1.0).abs() < 1e-9);
        let mut all: Vec<String> = res.iter().map(|r| r.0.clone()).collect();
        all.sort();
        assert_eq!(all, ["a", "b", "c", "d"]);
        assert!(matches!(
            nearest_words(&m, &vec![0.0; 16], 1),
            Err(Error::DegenerateQuery)
        ));
        assert!(nearest_words(&m, &q, 5).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let corpus = sentences("x y z\nz y x\n");
        let cfg = small_config();
        let (m, _) = train_on_sentences(&corpus, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&m, Some(&cfg), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..13], b"LEXIPORT-EMB\x01");
        let (back, back_cfg) = load_model(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back_cfg, Some(cfg));

        std::fs::write(&path, b"NOT-A-MODEL!!").unwrap();
        assert!(load_model(&path).is_err());
    }
}
