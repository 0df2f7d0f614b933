//! Plain-text corpus ingestion.
//!
//! Corpora are UTF-8 files with one sentence per line. A directory is read
//! file by file in lexicographic filename order. Every emitted line is
//! normalized (NFC, optional lowercasing, whitespace collapsing) and then
//! split on whitespace; subword segmentation happens later in [`crate::vocab`].

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Lines longer than this are split at the last whitespace before the limit.
pub const MAX_LINE_BYTES: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizationConfig {
    pub nfc: bool,
    pub lowercase: bool,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        NormalizationConfig {
            nfc: true,
            lowercase: false,
        }
    }
}

/// Normalizes one line of text: NFC, optional lowercasing, and collapsing of
/// whitespace runs (NUL counts as whitespace) to single spaces with the ends
/// trimmed.
pub fn normalize_line(raw: &str, config: &NormalizationConfig) -> String {
    let composed: String = if config.nfc {
        raw.nfc().collect()
    } else {
        raw.to_owned()
    };
    let cased = if config.lowercase {
        composed.to_lowercase()
    } else {
        composed
    };
    let mut out = String::with_capacity(cased.len());
    for word in cased.split(|c: char| c.is_whitespace() || c == '\0') {
        if word.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Byte-level entry point: validates UTF-8 before normalizing.
pub fn normalize_bytes(raw: &[u8], config: &NormalizationConfig) -> Result<String> {
    let text = std::str::from_utf8(raw).map_err(|e| Error::Decode {
        offset: e.valid_up_to(),
    })?;
    Ok(normalize_line(text, config))
}

/// A single-consumer stream of normalized lines over a file or directory.
pub struct CorpusStream {
    files: Vec<PathBuf>,
    next_file: usize,
    current: Option<LineReader>,
    config: NormalizationConfig,
    line_count: usize,
    token_count: usize,
}

struct LineReader {
    path: PathBuf,
    reader: BufReader<File>,
    pending: Vec<u8>,
    offset: usize,
    line_no: usize,
    eof: bool,
}

impl CorpusStream {
    pub fn open(path: impl AsRef<Path>, config: NormalizationConfig) -> Result<Self> {
        let path = path.as_ref();
        let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
        let files = if meta.is_dir() {
            let mut files = Vec::new();
            for entry in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
                let entry = entry.map_err(|e| Error::io(path, e))?;
                if entry.path().is_file() {
                    files.push(entry.path());
                }
            }
            files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
            files
        } else {
            vec![path.to_path_buf()]
        };
        Ok(CorpusStream {
            files,
            next_file: 0,
            current: None,
            config,
            line_count: 0,
            token_count: 0,
        })
    }

    pub fn sources(&self) -> &[PathBuf] {
        &self.files
    }

    pub fn line_count(&self) -> usize {
        self.line_count
    }

    /// Tokens emitted so far through [`CorpusStream::next_line`].
    pub fn token_count(&self) -> usize {
        self.token_count
    }

    /// Returns the next normalized line, or `None` when every file is exhausted.
    pub fn next_line(&mut self) -> Result<Option<String>> {
        loop {
            if self.current.is_none() {
                if self.next_file >= self.files.len() {
                    return Ok(None);
                }
                let path = self.files[self.next_file].clone();
                self.next_file += 1;
                let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
                self.current = Some(LineReader {
                    path,
                    reader: BufReader::new(file),
                    pending: Vec::new(),
                    offset: 0,
                    line_no: 0,
                    eof: false,
                });
            }
            let reader = self.current.as_mut().expect("reader present");
            match reader.next_raw()? {
                Some((start, raw)) => {
                    let text = std::str::from_utf8(&raw).map_err(|e| {
                        Error::format(
                            &reader.path,
                            reader.line_no,
                            format!("invalid UTF-8 at byte offset {}", start + e.valid_up_to()),
                        )
                    })?;
                    let line = normalize_line(text, &self.config);
                    self.line_count += 1;
                    self.token_count += line.split(' ').filter(|t| !t.is_empty()).count();
                    return Ok(Some(line));
                }
                None => self.current = None,
            }
        }
    }

    /// Iterates whitespace-delimited tokens in document order.
    pub fn tokens(&mut self) -> TokenIter<'_> {
        TokenIter {
            stream: self,
            buffer: Vec::new(),
        }
    }

    /// Reads the remaining corpus as tokenized lines.
    pub fn read_sentences(&mut self) -> Result<Vec<Vec<String>>> {
        let mut out = Vec::new();
        while let Some(line) = self.next_line()? {
            let words: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
            if !words.is_empty() {
                out.push(words);
            }
        }
        Ok(out)
    }
}

impl LineReader {
    /// Next raw line without its terminator, plus the byte offset where it starts.
    fn next_raw(&mut self) -> Result<Option<(usize, Vec<u8>)>> {
        loop {
            let window = self.pending.len().min(MAX_LINE_BYTES);
            if let Some(pos) = self.pending[..window].iter().position(|&b| b == b'\n') {
                let mut line: Vec<u8> = self.pending.drain(..=pos).collect();
                line.pop();
                if line.last() == Some(&b'\r') {
                    line.pop();
                }
                return Ok(Some(self.emit(line, pos + 1)));
            }
            if self.pending.len() >= MAX_LINE_BYTES {
                let cut = split_point(&self.pending[..MAX_LINE_BYTES]);
                let line: Vec<u8> = self.pending.drain(..cut).collect();
                return Ok(Some(self.emit(line, cut)));
            }
            if self.eof {
                if self.pending.is_empty() {
                    return Ok(None);
                }
                let line = std::mem::take(&mut self.pending);
                let consumed = line.len();
                return Ok(Some(self.emit(line, consumed)));
            }
            let buf = self.reader.fill_buf().map_err(|e| Error::io(&self.path, e))?;
            if buf.is_empty() {
                self.eof = true;
                continue;
            }
            let take = buf.len().min(MAX_LINE_BYTES);
            self.pending.extend_from_slice(&buf[..take]);
            self.reader.consume(take);
        }
    }

    fn emit(&mut self, line: Vec<u8>, consumed: usize) -> (usize, Vec<u8>) {
        let start = self.offset;
        self.offset += consumed;
        self.line_no += 1;
        (start, line)
    }
}

/// Cut position for an over-long line: just after the last ASCII whitespace,
/// else the last UTF-8 character boundary.
fn split_point(window: &[u8]) -> usize {
    if let Some(pos) = window.iter().rposition(|b| b.is_ascii_whitespace()) {
        if pos > 0 {
            return pos + 1;
        }
    }
    let mut cut = window.len();
    while cut > 0 && (window[cut - 1] & 0xC0) == 0x80 {
        cut -= 1;
    }
    // `cut - 1` is a lead byte whose sequence may be truncated.
    if cut > 0 && window[cut - 1] >= 0xC0 {
        cut -= 1;
    }
    if cut == 0 {
        window.len()
    } else {
        cut
    }
}

pub struct TokenIter<'a> {
    stream: &'a mut CorpusStream,
    buffer: Vec<String>,
}

impl Iterator for TokenIter<'_> {
    type Item = Result<String>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(tok) = self.buffer.pop() {
                return Some(Ok(tok));
            }
            match self.stream.next_line() {
                Ok(Some(line)) => {
                    self.buffer = line.split_whitespace().rev().map(str::to_owned).collect();
                }
                Ok(None) => return None,
                Err(e) => return Some(Err(e)),
            }
        }
    }
}
