//! Synthetic two-language fixture with a known translation table.
//!
//! The source language has a Zipfian vocabulary in which every word prefers
//! its own small set of successors, so each word has a distinct context
//! distribution. The target language is an independent sample from the same
//! process passed through a letter-substitution cipher into Greek script; the
//! cipher table is the ground-truth dictionary.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embed_io::{save_matrix, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::vocab::{Vocabulary, SPECIALS};

const SOURCE_LETTERS: &str = "abcdefghijklmnoprstu";
const TARGET_LETTERS: &str = "αβγδεζηθικλμνξοπρστυ";

#[derive(Clone, Debug, PartialEq)]
pub struct FixtureConfig {
    pub words: usize,
    pub source_tokens: usize,
    pub target_tokens: usize,
    /// Preferred successors per word.
    pub successors: usize,
    /// Probability that the next word comes from the successor set rather
    /// than the unigram distribution.
    pub follow_prob: f64,
    pub lexicon_pairs: usize,
    pub heldout_pairs: usize,
    pub base_dim: usize,
    /// Base-vocabulary tokens absent from the source language.
    pub distractors: usize,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            words: 200,
            source_tokens: 200_000,
            target_tokens: 200_000,
            successors: 4,
            follow_prob: 0.8,
            lexicon_pairs: 50,
            heldout_pairs: 50,
            base_dim: 64,
            distractors: 40,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CipherFixture {
    pub source_words: Vec<String>,
    /// `cipher[i]` translates `source_words[i]`.
    pub cipher: Vec<String>,
    pub source_sentences: Vec<Vec<String>>,
    pub target_sentences: Vec<Vec<String>>,
    /// `(source, target)` pairs used for alignment.
    pub lexicon: Vec<(String, String)>,
    /// `(source, target)` pairs kept out of the lexicon for evaluation.
    pub heldout: Vec<(String, String)>,
    pub base_vocab: Vocabulary,
    pub base_matrix: EmbeddingMatrix,
    pub mono_vocab: Vocabulary,
}

/// Files written by [`CipherFixture::write`].
#[derive(Clone, Debug, PartialEq)]
pub struct FixturePaths {
    pub source_corpus: PathBuf,
    pub target_corpus: PathBuf,
    pub base_vocab: PathBuf,
    pub base_matrix: PathBuf,
    pub mono_vocab: PathBuf,
    pub lexicon: PathBuf,
    pub heldout: PathBuf,
    pub config: PathBuf,
}

struct Language {
    unigram: WeightedIndex<f64>,
    successors: Vec<(Vec<usize>, WeightedIndex<f64>)>,
    follow_prob: f64,
}

impl Language {
    fn new(cfg: &FixtureConfig, rng: &mut ChaCha8Rng) -> Self {
        let n = cfg.words;
        let unigram = WeightedIndex::new((0..n).map(|i| 1.0 / (i + 1) as f64)).expect("positive weights");
        let successors = (0..n)
            .map(|_| {
                let picks = rand::seq::index::sample(rng, n, cfg.successors.min(n)).into_vec();
                let weights = WeightedIndex::new((0..picks.len()).map(|j| 1.0 / (j + 1) as f64))
                    .expect("positive weights");
                (picks, weights)
            })
            .collect();
        Language {
            unigram,
            successors,
            follow_prob: cfg.follow_prob,
        }
    }

    fn sample(&self, tokens: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        let mut sentences = Vec::new();
        let mut total = 0;
        while total < tokens {
            let len = rng.random_range(6..=14);
            let mut s = Vec::with_capacity(len);
            let mut prev = self.unigram.sample(rng);
            s.push(prev);
            while s.len() < len {
                prev = if rng.random_bool(self.follow_prob) {
                    let (ids, w) = &self.successors[prev];
                    ids[w.sample(rng)]
                } else {
                    self.unigram.sample(rng)
                };
                s.push(prev);
            }
            total += s.len();
            sentences.push(s);
        }
        sentences
    }
}

fn random_word(rng: &mut ChaCha8Rng, letters: &[char], len: std::ops::RangeInclusive<usize>) -> String {
    let n = rng.random_range(len);
    (0..n).map(|_| letters[rng.random_range(0..letters.len())]).collect()
}

/// Builds the fixture in memory. Deterministic in `cfg`.
pub fn generate(cfg: &FixtureConfig) -> Result<CipherFixture> {
    if cfg.lexicon_pairs + cfg.heldout_pairs > cfg.words {
        return Err(Error::Config("lexicon and held-out pairs exceed the word count".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let src_letters: Vec<char> = SOURCE_LETTERS.chars().collect();
    let mut tgt_letters: Vec<char> = TARGET_LETTERS.chars().collect();
    tgt_letters.shuffle(&mut rng);

    let mut seen = HashSet::new();
    let mut source_words = Vec::with_capacity(cfg.words);
    while source_words.len() < cfg.words {
        let w = random_word(&mut rng, &src_letters, 4..=7);
        if seen.insert(w.clone()) {
            source_words.push(w);
        }
    }
    let encode = |w: &str| -> String {
        w.chars()
            .map(|c| tgt_letters[src_letters.iter().position(|&l| l == c).expect("source letter")])
            .collect()
    };
    let cipher: Vec<String> = source_words.iter().map(|w| encode(w)).collect();

    let language = Language::new(cfg, &mut rng);
    let mut source_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut target_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let render = |ids: Vec<Vec<usize>>, words: &[String]| -> Vec<Vec<String>> {
        ids.into_iter()
            .map(|s| s.into_iter().map(|i| words[i].clone()).collect())
            .collect()
    };
    let source_sentences = render(language.sample(cfg.source_tokens, &mut source_rng), &source_words);
    let target_sentences = render(language.sample(cfg.target_tokens, &mut target_rng), &cipher);

    let mut order: Vec<usize> = (0..cfg.words).collect();
    order.shuffle(&mut rng);
    let pair = |i: usize| (source_words[i].clone(), cipher[i].clone());
    let lexicon = order[..cfg.lexicon_pairs].iter().map(|&i| pair(i)).collect();
    let heldout = order[cfg.lexicon_pairs..cfg.lexicon_pairs + cfg.heldout_pairs]
        .iter()
        .map(|&i| pair(i))
        .collect();

    let mut base_tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    base_tokens.extend(source_words.iter().cloned());
    let mut added = 0;
    while added < cfg.distractors {
        let w = random_word(&mut rng, &src_letters, 8..=9);
        if seen.insert(w.clone()) {
            base_tokens.push(w);
            added += 1;
        }
    }
    // a few target-script characters already known to the base model
    base_tokens.extend(TARGET_LETTERS.chars().take(5).map(String::from));
    let base_vocab = Vocabulary::from_tokens(base_tokens, "##")?;

    let mut data = Vec::with_capacity(base_vocab.len() * cfg.base_dim);
    let scale = 1.0 / (cfg.base_dim as f64).sqrt();
    for _ in 0..base_vocab.len() {
        for _ in 0..cfg.base_dim {
            let z: f64 = rng.sample(StandardNormal);
            data.push((z * scale) as f32);
        }
    }
    let base_matrix = EmbeddingMatrix::new(base_vocab.len(), cfg.base_dim, data)?;

    let mut mono: Vec<String> = source_words.clone();
    let mut pieces = HashSet::new();
    for w in &source_words {
        let piece = format!("##{}", &w[w.len() - 2..]);
        if pieces.insert(piece.clone()) {
            mono.push(piece);
        }
    }
    let mono_vocab = Vocabulary::with_specials(mono)?;

    Ok(CipherFixture {
        source_words,
        cipher,
        source_sentences,
        target_sentences,
        lexicon,
        heldout,
        base_vocab,
        base_matrix,
        mono_vocab,
    })
}

fn write_lines<I, S>(path: &Path, lines: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for line in lines {
        writeln!(out, "{}", line.as_ref()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Pipeline settings sized for the fixture.
pub const FIXTURE_CONFIG: &str = r#"vocab_size = 2000
min_frequency = 1
seed = 0

[paths]
source_corpus = "source.txt"
target_corpus = "target.txt"
base_vocab = "base_vocab.txt"
base_matrix = "base_matrix.bin"
mono_vocab = "mono_vocab.txt"
lexicon = "lexicon.txt"
output_dir = "out"

[trainer]
dim = 50
epochs = 5
min_count = 1
bucket_count = 100000
sample = 0.0

[transplant]
k = 10
tau = 0.1
"#;

impl CipherFixture {
    /// Writes corpora, vocabularies, the base matrix, the dictionaries and a
    /// ready-to-run `pipeline.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<FixturePaths> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = FixturePaths {
            source_corpus: dir.join("source.txt"),
            target_corpus: dir.join("target.txt"),
            base_vocab: dir.join("base_vocab.txt"),
            base_matrix: dir.join("base_matrix.bin"),
            mono_vocab: dir.join("mono_vocab.txt"),
            lexicon: dir.join("lexicon.txt"),
            heldout: dir.join("heldout.txt"),
            config: dir.join("pipeline.toml"),
        };
        write_lines(&paths.source_corpus, self.source_sentences.iter().map(|s| s.join(" ")))?;
        write_lines(&paths.target_corpus, self.target_sentences.iter().map(|s| s.join(" ")))?;
        self.base_vocab.save(&paths.base_vocab)?;
        save_matrix(&self.base_matrix, &paths.base_matrix)?;
        self.mono_vocab.save(&paths.mono_vocab)?;
        write_lines(&paths.lexicon, self.lexicon.iter().map(|(s, t)| format!("{s}\t{t}")))?;
        write_lines(&paths.heldout, self.heldout.iter().map(|(s, t)| format!("{s}\t{t}")))?;
        fs::write(&paths.config, FIXTURE_CONFIG).map_err(|e| Error::io(&paths.config, e))?;
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FixtureConfig {
        FixtureConfig {
            words: 30,
            source_tokens: 2_000,
            target_tokens: 2_000,
            lexicon_pairs: 10,
            heldout_pairs: 10,
            distractors: 5,
            ..FixtureConfig::default()
        }
    }

    #[test]
    fn cipher_is_a_bijection_preserving_shape() {
        let fx = generate(&small()).unwrap();
        let distinct: HashSet<_> = fx.cipher.iter().collect();
        assert_eq!(distinct.len(), fx.cipher.len());
        for (s, t) in fx.source_words.iter().zip(&fx.cipher) {
            assert_eq!(s.chars().count(), t.chars().count());
            let pattern = |w: &str| {
                let cs: Vec<char> = w.chars().collect();
                cs.iter()
                    .map(|c| cs.iter().position(|d| d == c).unwrap())
                    .collect::<Vec<_>>()
            };
            assert_eq!(pattern(s), pattern(t));
        }
    }

    #[test]
    fn deterministic_and_sized() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let n: usize = a.source_sentences.iter().map(Vec::len).sum();
        assert!((2_000..2_014).contains(&n));
        assert_eq!(a.lexicon.len(), 10);
        assert_eq!(a.heldout.len(), 10);
        let lex: HashSet<_> = a.lexicon.iter().collect();
        assert!(a.heldout.iter().all(|p| !lex.contains(p)));
        assert_eq!(a.base_matrix.rows(), a.base_vocab.len());
    }

    #[test]
    fn target_corpus_uses_only_cipher_words() {
        let fx = generate(&small()).unwrap();
        let words: HashSet<_> = fx.cipher.iter().collect();
        assert!(fx.target_sentences.iter().flatten().all(|w| words.contains(w)));
    }
}
