//! WordPiece vocabularies: induction, greedy segmentation, source-vocabulary
//! screening and non-overlapping merges.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus_io::CorpusStream;
use crate::embed_io::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

/// Reserved tokens, in the id order used by induced vocabularies.
pub const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

pub const DEFAULT_CONTINUATION_PREFIX: &str = "##";

/// Target vocabulary size used for real runs.
pub const DEFAULT_VOCAB_SIZE: usize = 30_000;

pub fn is_special(token: &str) -> bool {
    SPECIALS.contains(&token)
}

/// Ordered, duplicate-free token list with a reverse index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    continuation_prefix: String,
}

impl Vocabulary {
    /// Builds a vocabulary from an arbitrary token list (e.g. a published
    /// `vocab.txt`). Specials are recognized by name wherever they occur.
    pub fn from_tokens(tokens: Vec<String>, continuation_prefix: &str) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::Vocabulary(format!("empty token at id {i}")));
            }
            if tok == continuation_prefix {
                return Err(Error::Vocabulary(format!(
                    "bare continuation prefix at id {i}"
                )));
            }
            if ids.insert(tok.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token {tok:?} at id {i}")));
            }
        }
        Ok(Vocabulary {
            tokens,
            ids,
            continuation_prefix: continuation_prefix.to_owned(),
        })
    }

    /// Specials at ids 0..5 followed by `tokens`.
    pub fn with_specials<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let all = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(tokens.into_iter().map(Into::into))
            .collect();
        Self::from_tokens(all, DEFAULT_CONTINUATION_PREFIX)
    }

    /// Reads `vocab.txt`: one token per line, line number = id.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::format(path, i + 1, e.to_string()))?;
            let tok = line.trim_end_matches(['\r', ' ', '\t']);
            tokens.push(tok.to_owned());
        }
        Self::from_tokens(tokens, DEFAULT_CONTINUATION_PREFIX).map_err(|e| match e {
            Error::Vocabulary(msg) => Error::format(path, 0, msg),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for tok in &self.tokens {
            writeln!(out, "{tok}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
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

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn continuation_prefix(&self) -> &str {
        &self.continuation_prefix
    }

    /// True if the token is a word-internal piece.
    pub fn is_continuation(&self, token: &str) -> bool {
        token.len() > self.continuation_prefix.len() && token.starts_with(&self.continuation_prefix)
    }

    /// The token with any continuation prefix removed.
    pub fn strip_prefix<'a>(&self, token: &'a str) -> &'a str {
        if self.is_continuation(token) {
            &token[self.continuation_prefix.len()..]
        } else {
            token
        }
    }

    /// Greedy longest-match-first segmentation. Any unmatchable position turns
    /// the whole word into `[UNK]`.
    pub fn tokenize(&self, word: &str) -> Vec<String> {
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        while start + 1 < bounds.len() {
            let mut matched = None;
            for end in (start + 1..bounds.len()).rev() {
                let body = &word[bounds[start]..bounds[end]];
                let candidate = if start == 0 {
                    body.to_owned()
                } else {
                    format!("{}{}", self.continuation_prefix, body)
                };
                if self.ids.contains_key(&candidate) {
                    matched = Some((end, candidate));
                    break;
                }
            }
            match matched {
                Some((end, piece)) => {
                    pieces.push(piece);
                    start = end;
                }
                None => return vec![UNK.to_owned()],
            }
        }
        pieces
    }
}

// ---------------------------------------------------------------------------
// WordPiece induction

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Candidate {
    pair: (u32, u32),
    pair_count: u64,
    left_count: u64,
    right_count: u64,
}

impl Candidate {
    fn score(&self) -> f64 {
        self.pair_count as f64 / (self.left_count as f64 * self.right_count as f64)
    }
}

impl Ord for Candidate {
    // Highest score first, then highest pair frequency, then the pair made of
    // earlier-created symbols.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score()
            .total_cmp(&other.score())
            .then(self.pair_count.cmp(&other.pair_count))
            .then(other.pair.cmp(&self.pair))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Inducer {
    symbols: Vec<String>,
    symbol_ids: HashMap<String, u32>,
    words: Vec<(Vec<u32>, u64)>,
    unit_counts: Vec<u64>,
    pair_counts: HashMap<(u32, u32), u64>,
    pair_words: HashMap<(u32, u32), HashSet<u32>>,
    unit_pairs: HashMap<u32, HashSet<(u32, u32)>>,
    heap: BinaryHeap<Candidate>,
}

impl Inducer {
    fn intern(&mut self, s: String) -> (u32, bool) {
        if let Some(&id) = self.symbol_ids.get(&s) {
            return (id, false);
        }
        let id = self.symbols.len() as u32;
        self.symbol_ids.insert(s.clone(), id);
        self.symbols.push(s);
        self.unit_counts.push(0);
        (id, true)
    }

    fn add_word(&mut self, idx: u32, sign_add: bool) {
        let (syms, count) = &self.words[idx as usize];
        let count = *count;
        for &s in syms {
            let c = &mut self.unit_counts[s as usize];
            if sign_add {
                *c += count;
            } else {
                *c -= count;
            }
        }
        for w in syms.windows(2) {
            let pair = (w[0], w[1]);
            let c = self.pair_counts.entry(pair).or_insert(0);
            if sign_add {
                if *c == 0 {
                    self.unit_pairs.entry(pair.0).or_default().insert(pair);
                    self.unit_pairs.entry(pair.1).or_default().insert(pair);
                }
                *c += count;
                self.pair_words.entry(pair).or_default().insert(idx);
            } else {
                *c -= count;
                if *c == 0 {
                    self.pair_counts.remove(&pair);
                    if let Some(set) = self.unit_pairs.get_mut(&pair.0) {
                        set.remove(&pair);
                    }
                    if let Some(set) = self.unit_pairs.get_mut(&pair.1) {
                        set.remove(&pair);
                    }
                }
            }
        }
    }

    fn candidate(&self, pair: (u32, u32)) -> Option<Candidate> {
        let pair_count = *self.pair_counts.get(&pair)?;
        Some(Candidate {
            pair,
            pair_count,
            left_count: self.unit_counts[pair.0 as usize],
            right_count: self.unit_counts[pair.1 as usize],
        })
    }

    fn is_current(&self, c: &Candidate) -> bool {
        self.candidate(c.pair).as_ref() == Some(c)
    }

    fn push(&mut self, pair: (u32, u32), min_frequency: u64) {
        if let Some(c) = self.candidate(pair) {
            if c.pair_count >= min_frequency {
                self.heap.push(c);
            }
        }
    }

    fn merged_name(&self, pair: (u32, u32), prefix: &str) -> String {
        let left = &self.symbols[pair.0 as usize];
        let right = &self.symbols[pair.1 as usize];
        let right = right.strip_prefix(prefix).unwrap_or(right);
        format!("{left}{right}")
    }

    /// Applies the merge to every word containing `pair`; returns the pairs
    /// whose score may have changed.
    fn apply(&mut self, pair: (u32, u32), merged: u32) -> HashSet<(u32, u32)> {
        let mut affected: Vec<u32> = self
            .pair_words
            .get(&pair)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        affected.sort_unstable();
        let before = (
            self.unit_counts[pair.0 as usize],
            self.unit_counts[pair.1 as usize],
            self.unit_counts[merged as usize],
        );
        let mut touched = HashSet::new();
        for idx in affected {
            let syms = &self.words[idx as usize].0;
            if !syms.windows(2).any(|w| (w[0], w[1]) == pair) {
                continue;
            }
            touched.extend(syms.windows(2).map(|w| (w[0], w[1])));
            self.add_word(idx, false);
            let old = std::mem::take(&mut self.words[idx as usize].0);
            let mut new = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && (old[i], old[i + 1]) == pair {
                    new.push(merged);
                    i += 2;
                } else {
                    new.push(old[i]);
                    i += 1;
                }
            }
            touched.extend(new.windows(2).map(|w| (w[0], w[1])));
            self.words[idx as usize].0 = new;
            self.add_word(idx, true);
        }
        let after = (
            self.unit_counts[pair.0 as usize],
            self.unit_counts[pair.1 as usize],
            self.unit_counts[merged as usize],
        );
        let changed_units = [
            (pair.0, before.0 != after.0),
            (pair.1, before.1 != after.1),
            (merged, before.2 != after.2),
        ];
        for (unit, changed) in changed_units {
            if changed {
                if let Some(pairs) = self.unit_pairs.get(&unit) {
                    touched.extend(pairs.iter().copied());
                }
            }
        }
        touched
    }
}

/// Counts whitespace-delimited words in the corpus.
pub fn count_words(stream: &mut CorpusStream) -> Result<HashMap<String, u64>> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for tok in stream.tokens() {
        *counts.entry(tok?).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Induces a WordPiece vocabulary from the corpus.
///
/// Every character seen at least `min_frequency` times enters the vocabulary
/// in both its word-initial and its continuation form. Pieces are then merged
/// greedily by `freq(pair) / (freq(left) * freq(right))` until the vocabulary
/// holds `target_size` tokens or no pair occurs `min_frequency` times.
pub fn induce_wordpiece_vocab(
    stream: &mut CorpusStream,
    target_size: usize,
    min_frequency: u64,
) -> Result<Vocabulary> {
    let counts = count_words(stream)?;
    induce_from_counts(&counts, target_size, min_frequency)
}

pub fn induce_from_counts(
    word_counts: &HashMap<String, u64>,
    target_size: usize,
    min_frequency: u64,
) -> Result<Vocabulary> {
    if min_frequency == 0 {
        return Err(Error::Induction("min_frequency must be at least 1".into()));
    }
    if word_counts.is_empty() {
        return Err(Error::Induction("empty corpus".into()));
    }
    let prefix = DEFAULT_CONTINUATION_PREFIX;

    let mut char_counts: HashMap<char, u64> = HashMap::new();
    for (word, &count) in word_counts {
        for ch in word.chars() {
            *char_counts.entry(ch).or_insert(0) += count;
        }
    }
    let mut alphabet: Vec<char> = char_counts
        .iter()
        .filter(|(_, &c)| c >= min_frequency)
        .map(|(&ch, _)| ch)
        .collect();
    alphabet.sort_unstable();
    if alphabet.is_empty() {
        return Err(Error::Induction(
            "no character reaches min_frequency".into(),
        ));
    }
    let required = SPECIALS.len() + 2 * alphabet.len();
    if target_size < required {
        return Err(Error::Capacity {
            target_size,
            required,
        });
    }

    let mut inducer = Inducer {
        symbols: Vec::new(),
        symbol_ids: HashMap::new(),
        words: Vec::new(),
        unit_counts: Vec::new(),
        pair_counts: HashMap::new(),
        pair_words: HashMap::new(),
        unit_pairs: HashMap::new(),
        heap: BinaryHeap::new(),
    };
    let mut vocab_tokens: Vec<String> = Vec::new();
    for &ch in &alphabet {
        let s = ch.to_string();
        inducer.intern(s.clone());
        vocab_tokens.push(s);
    }
    for &ch in &alphabet {
        let s = format!("{prefix}{ch}");
        inducer.intern(s.clone());
        vocab_tokens.push(s);
    }

    let alphabet_set: HashSet<char> = alphabet.iter().copied().collect();
    let mut sorted_words: Vec<(&String, &u64)> = word_counts.iter().collect();
    sorted_words.sort();
    for (word, &count) in sorted_words {
        if !word.chars().all(|c| alphabet_set.contains(&c)) {
            continue;
        }
        let syms: Vec<u32> = word
            .chars()
            .enumerate()
            .map(|(i, ch)| {
                let s = if i == 0 {
                    ch.to_string()
                } else {
                    format!("{prefix}{ch}")
                };
                inducer.symbol_ids[&s]
            })
            .collect();
        let idx = inducer.words.len() as u32;
        inducer.words.push((syms, count));
        inducer.add_word(idx, true);
    }

    let mut pairs: Vec<(u32, u32)> = inducer.pair_counts.keys().copied().collect();
    pairs.sort_unstable();
    for pair in pairs {
        inducer.push(pair, min_frequency);
    }

    let mut size = SPECIALS.len() + vocab_tokens.len();
    while size < target_size {
        let Some(best) = inducer.heap.pop() else {
            break;
        };
        if !inducer.is_current(&best) {
            continue;
        }
        let name = inducer.merged_name(best.pair, prefix);
        let (merged, fresh) = inducer.intern(name.clone());
        if fresh {
            vocab_tokens.push(name);
            size += 1;
        }
        let mut touched: Vec<(u32, u32)> = inducer.apply(best.pair, merged).into_iter().collect();
        touched.sort_unstable();
        for pair in touched {
            inducer.push(pair, min_frequency);
        }
    }

    Vocabulary::with_specials(vocab_tokens)
}

// ---------------------------------------------------------------------------
// Source screening

/// Base-model tokens shared with a monolingual source vocabulary, with their
/// base embedding rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceVocabSet {
    pub tokens: Vec<String>,
    pub rows: EmbeddingMatrix,
}

impl SourceVocabSet {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Screens `mono_vocab ∩ base_vocab` (specials excluded), in base-vocabulary
/// order, optionally subsampled uniformly with `seed`.
pub fn screen_source_vocab(
    mono_vocab: &Vocabulary,
    base_vocab: &Vocabulary,
    base_matrix: &EmbeddingMatrix,
    subsample: Option<usize>,
    seed: u64,
) -> Result<SourceVocabSet> {
    if base_matrix.rows() != base_vocab.len() {
        return Err(Error::Contract(format!(
            "base matrix has {} rows but base vocabulary has {} tokens",
            base_matrix.rows(),
            base_vocab.len()
        )));
    }
    let mut ids: Vec<usize> = base_vocab
        .tokens()
        .iter()
        .enumerate()
        .filter(|(_, t)| !is_special(t) && mono_vocab.contains(t))
        .map(|(i, _)| i)
        .collect();
    if ids.is_empty() {
        return Err(Error::Screening(
            "monolingual and base vocabularies share no tokens".into(),
        ));
    }
    if let Some(n) = subsample {
        if n == 0 || n > ids.len() {
            return Err(Error::Screening(format!(
                "subsample size {n} outside 1..={}",
                ids.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, ids.len(), n).into_vec();
        picked.sort_unstable();
        ids = picked.into_iter().map(|i| ids[i]).collect();
    }
    let tokens = ids
        .iter()
        .map(|&i| base_vocab.tokens()[i].clone())
        .collect();
    let rows = base_matrix.select_rows(&ids);
    if !rows.all_finite() {
        return Err(Error::Screening("non-finite base embedding row".into()));
    }
    Ok(SourceVocabSet { tokens, rows })
}

// ---------------------------------------------------------------------------
// Merging

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergeOutcome {
    pub merged: Vocabulary,
    /// Tokens of the new vocabulary already present in the base, in new-vocabulary order.
    pub overlap: Vec<String>,
    pub appended: Vec<String>,
}

/// Appends the tokens of `new_vocab` missing from `base_vocab`; base ids never move.
pub fn merge_vocab(base_vocab: &Vocabulary, new_vocab: &Vocabulary) -> MergeOutcome {
    let mut overlap = Vec::new();
    let mut appended = Vec::new();
    for tok in new_vocab.tokens() {
        if base_vocab.contains(tok) {
            overlap.push(tok.clone());
        } else {
            appended.push(tok.clone());
        }
    }
    let mut tokens = base_vocab.tokens().to_vec();
    tokens.extend(appended.iter().cloned());
    let merged = Vocabulary::from_tokens(tokens, base_vocab.continuation_prefix())
        .expect("disjoint union of valid vocabularies is valid");
    MergeOutcome {
        merged,
        overlap,
        appended,
    }
}
