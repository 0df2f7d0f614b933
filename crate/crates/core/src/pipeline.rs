//! Run configuration and the cached pipeline driven by the `lexiport` binary.
//!
//! Stages run in order `screen`, `induce-vocab`, `train-source`,
//! `train-target`, `align`, `build-tables`, `transplant`. Intermediate
//! artifacts live under `<output_dir>/cache/<stage>/`, each next to a
//! `stage.json` stamp holding the digest of everything the stage read. A stage
//! whose stamp matches is skipped.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::align::{apply_map, fit_alignment, parse_lexicon, AlignConfig, OrthogonalMap};
use crate::corpus_io::{CorpusStream, NormalizationConfig};
use crate::embed_io::{load_matrix, load_vec, save_matrix, save_vec};
use crate::embed_trainer::{load_model, save_model, train_on_sentences, TrainerConfig, MODEL_MAGIC};
use crate::error::{Error, Result};
use crate::synth::{build_table, build_table_for_tokens, StaticEmbeddings, SynthConfig, VocabEmbeddingTable};
use crate::transplant::{export_result, run_transplant, sha256_file, Manifest, TransplantConfig};
use crate::transplant::{MANIFEST_FILE, MATRIX_FILE, PROVENANCE_FILE, VOCAB_FILE};
use crate::vocab::{
    induce_wordpiece_vocab, screen_source_vocab, SourceVocabSet, Vocabulary, DEFAULT_CONTINUATION_PREFIX,
    DEFAULT_VOCAB_SIZE,
};

pub const DEFAULT_MIN_FREQUENCY: u64 = 2;
pub const CACHE_DIR: &str = "cache";
pub const LOCK_FILE: &str = ".lexiport.lock";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub source_corpus: Option<PathBuf>,
    pub target_corpus: Option<PathBuf>,
    /// Pre-trained source vectors (`.vec` or model dump); replaces training on `source_corpus`.
    pub source_vectors: Option<PathBuf>,
    pub target_vectors: Option<PathBuf>,
    pub base_vocab: Option<PathBuf>,
    pub base_matrix: Option<PathBuf>,
    pub mono_vocab: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlagsConfig {
    pub normalize_before_align: bool,
    pub ngram_mean: bool,
    pub ngram_markers: bool,
}

impl Default for FlagsConfig {
    fn default() -> Self {
        FlagsConfig {
            normalize_before_align: false,
            ngram_mean: false,
            ngram_markers: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub vocab_size: usize,
    pub min_frequency: u64,
    /// Uniform subsample size for the screened source set.
    pub subsample: Option<usize>,
    /// Run seed; also the default for `trainer.seed` and `transplant.seed`.
    pub seed: u64,
    pub normalization: NormalizationConfig,
    pub trainer: TrainerConfig,
    pub transplant: TransplantConfig,
    pub flags: FlagsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: PathsConfig::default(),
            vocab_size: DEFAULT_VOCAB_SIZE,
            min_frequency: DEFAULT_MIN_FREQUENCY,
            subsample: None,
            seed: 0,
            normalization: NormalizationConfig::default(),
            trainer: TrainerConfig::default(),
            transplant: TransplantConfig::default(),
            flags: FlagsConfig::default(),
        }
    }
}

/// One `key.path = value` assignment layered over the config file.
#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub key: String,
    pub value: toml::Value,
}

impl Override {
    pub fn new(key: impl Into<String>, value: impl Into<toml::Value>) -> Self {
        Override {
            key: key.into(),
            value: value.into(),
        }
    }

    pub fn path(key: impl Into<String>, path: &Path) -> Self {
        Override::new(key, path.to_string_lossy().into_owned())
    }
}

/// Reads an optional TOML file, layers `overrides` on top and resolves
/// defaults. Relative paths in the file are taken relative to the file.
pub fn parse_config(path: Option<&Path>, overrides: &[Override]) -> Result<PipelineConfig> {
    let table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let mut table: toml::Table = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {}", p.display(), e.to_string().trim_end())))?;
            let base = p.parent().unwrap_or(Path::new(""));
            if let Some(toml::Value::Table(paths)) = table.get_mut("paths") {
                for (_, value) in paths.iter_mut() {
                    if let Some(s) = value.as_str() {
                        *value = toml::Value::String(base.join(s).to_string_lossy().into_owned());
                    }
                }
            }
            table
        }
        None => toml::Table::new(),
    };
    resolve_table(table, overrides)
}

/// Recovers the configuration recorded in a run manifest and checks that
/// every input still has the digest it had then.
pub fn config_from_manifest(path: &Path, overrides: &[Override]) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let recorded: PipelineConfig = serde_json::from_value(manifest.config)
        .map_err(|e| Error::Config(format!("{}: config: {e}", path.display())))?;
    let table = match toml::Value::try_from(&recorded) {
        Ok(toml::Value::Table(t)) => t,
        _ => return Err(Error::Config("manifest config is not a table".into())),
    };
    let config = resolve_table(table, overrides)?;
    for (name, digest) in &manifest.inputs {
        let Some(input) = config.input_paths().into_iter().find(|(n, _)| n == name) else {
            continue;
        };
        if digest_path(input.1)? != *digest {
            return Err(Error::Config(format!(
                "input {name} ({}) changed since the manifest was written",
                input.1.display()
            )));
        }
    }
    Ok(config)
}

fn resolve_table(mut table: toml::Table, overrides: &[Override]) -> Result<PipelineConfig> {
    for o in overrides {
        set_key(&mut table, &o.key, o.value.clone())?;
    }
    if let Some(seed) = table.get("seed").cloned() {
        for section in ["trainer", "transplant"] {
            let entry = table
                .entry(section)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if let toml::Value::Table(t) = entry {
                t.entry("seed").or_insert_with(|| seed.clone());
            }
        }
    }
    let mut config: PipelineConfig =
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().to_string();
            let inner = inner.lines().next().unwrap_or_default().trim_end();
            if path.is_empty() || path == "." {
                Error::Config(inner.to_owned())
            } else {
                Error::Config(format!("{path}: {inner}"))
            }
        })?;
    config.paths.absolutize()?;
    Ok(config)
}

fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty());
    let Some(last) = last else {
        return Err(Error::Config(format!("empty override key {key:?}")));
    };
    let mut cur = table;
    for part in parts {
        let entry = cur
            .entry(part)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::Config(format!("{key}: `{part}` is not a section"))),
        };
    }
    cur.insert(last.to_owned(), value);
    Ok(())
}

impl PathsConfig {
    fn absolutize(&mut self) -> Result<()> {
        for p in [
            &mut self.source_corpus,
            &mut self.target_corpus,
            &mut self.source_vectors,
            &mut self.target_vectors,
            &mut self.base_vocab,
            &mut self.base_matrix,
            &mut self.mono_vocab,
            &mut self.lexicon,
            &mut self.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            *p = std::path::absolute(&*p).map_err(|e| Error::io(&*p, e))?;
        }
        Ok(())
    }
}

impl PipelineConfig {
    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            ngram_markers: self.flags.ngram_markers,
            ngram_mean: self.flags.ngram_mean,
            n_min: self.trainer.n_min,
            n_max: self.trainer.n_max,
        }
    }

    pub fn align(&self) -> AlignConfig {
        AlignConfig {
            normalize_before_align: self.flags.normalize_before_align,
        }
    }

    /// Checks required keys and numeric ranges. Input existence is checked
    /// separately, per stage, by [`PipelineConfig::preflight`].
    pub fn validate(&self) -> Result<()> {
        let p = &self.paths;
        let required = [
            ("target_corpus", &p.target_corpus),
            ("base_vocab", &p.base_vocab),
            ("base_matrix", &p.base_matrix),
            ("mono_vocab", &p.mono_vocab),
            ("lexicon", &p.lexicon),
            ("output_dir", &p.output_dir),
        ];
        for (name, value) in required {
            if value.is_none() {
                return Err(Error::Config(format!("missing required key paths.{name}")));
            }
        }
        if p.source_corpus.is_none() && p.source_vectors.is_none() {
            return Err(Error::Config(
                "one of paths.source_corpus or paths.source_vectors is required".into(),
            ));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be >= 1".into()));
        }
        if self.min_frequency == 0 {
            return Err(Error::Config("min_frequency must be >= 1".into()));
        }
        if self.subsample == Some(0) {
            return Err(Error::Config("subsample must be >= 1".into()));
        }
        self.trainer.validate()?;
        self.transplant.validate()
    }

    pub fn output_dir(&self) -> &Path {
        self.paths
            .output_dir
            .as_deref()
            .expect("validated config has an output directory")
    }

    /// External inputs by config key, in a fixed order.
    pub fn input_paths(&self) -> Vec<(String, &Path)> {
        let p = &self.paths;
        [
            ("paths.mono_vocab", &p.mono_vocab),
            ("paths.base_vocab", &p.base_vocab),
            ("paths.base_matrix", &p.base_matrix),
            ("paths.target_corpus", &p.target_corpus),
            ("paths.source_corpus", &p.source_corpus),
            ("paths.source_vectors", &p.source_vectors),
            ("paths.target_vectors", &p.target_vectors),
            ("paths.lexicon", &p.lexicon),
        ]
        .into_iter()
        .filter_map(|(n, v)| v.as_deref().map(|v| (n.to_owned(), v)))
        .collect()
    }

    /// Fails on the first missing input, naming the stage that reads it.
    pub fn preflight(&self) -> Result<()> {
        let p = &self.paths;
        let mut checks: Vec<(&'static str, &Option<PathBuf>)> = vec![
            ("screen", &p.mono_vocab),
            ("screen", &p.base_vocab),
            ("screen", &p.base_matrix),
            ("induce-vocab", &p.target_corpus),
        ];
        if p.source_vectors.is_some() {
            checks.push(("train-source", &p.source_vectors));
        } else {
            checks.push(("train-source", &p.source_corpus));
        }
        if p.target_vectors.is_some() {
            checks.push(("train-target", &p.target_vectors));
        } else {
            checks.push(("train-target", &p.target_corpus));
        }
        checks.push(("align", &p.lexicon));
        for (stage, path) in checks {
            if let Some(path) = path {
                if let Err(e) = fs::metadata(path) {
                    return Err(Error::stage(stage, Error::io(path, e)));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Artifact helpers shared with the individual subcommands

/// SHA-256 of a file, or of a directory's files in corpus order.
pub fn digest_path(path: &Path) -> Result<String> {
    if !path.is_dir() {
        return sha256_file(path);
    }
    let stream = CorpusStream::open(path, NormalizationConfig::default())?;
    let mut h = Sha256::new();
    for file in stream.sources() {
        let name = file.file_name().unwrap_or_default().to_string_lossy();
        h.update(name.as_bytes());
        h.update([0]);
        h.update(sha256_file(file)?.as_bytes());
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

/// Loads a model dump or a `.vec` file, recognized by its leading bytes.
pub fn load_embeddings(path: &Path) -> Result<StaticEmbeddings> {
    let mut head = [0u8; MODEL_MAGIC.len()];
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let n = file.read(&mut head).map_err(|e| Error::io(path, e))?;
    if n == head.len() && &head == MODEL_MAGIC {
        Ok(load_model(path)?.0.into())
    } else {
        Ok(load_vec(path)?.into())
    }
}

const SOURCE_TOKENS: &str = "source_tokens.txt";
const SOURCE_ROWS: &str = "source_rows.bin";

pub fn save_source_set(set: &SourceVocabSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(SOURCE_TOKENS);
    let mut out = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    for tok in &set.tokens {
        writeln!(out, "{tok}").map_err(|e| Error::io(&path, e))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))?;
    save_matrix(&set.rows, dir.join(SOURCE_ROWS))
}

pub fn load_source_set(dir: &Path) -> Result<SourceVocabSet> {
    let path = dir.join(SOURCE_TOKENS);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let tokens = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(&path, e))?;
    let rows = load_matrix(dir.join(SOURCE_ROWS))?;
    if rows.rows() != tokens.len() {
        return Err(Error::Contract(format!(
            "{}: {} tokens but {} rows",
            dir.display(),
            tokens.len(),
            rows.rows()
        )));
    }
    Ok(SourceVocabSet { tokens, rows })
}

pub fn save_map(map: &OrthogonalMap, path: &Path) -> Result<()> {
    let json = serde_json::to_string(map).expect("map serializes");
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_map(path: &Path) -> Result<OrthogonalMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let map: OrthogonalMap =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.line(), e.to_string()))?;
    if map.matrix.len() != map.dim * map.dim {
        return Err(Error::format(path, 0, "matrix length is not dim * dim"));
    }
    Ok(map)
}

pub fn save_table(table: &VocabEmbeddingTable, path: &Path) -> Result<()> {
    save_vec(&table.to_vector_table(), path)
}

pub fn load_table(path: &Path) -> Result<VocabEmbeddingTable> {
    VocabEmbeddingTable::from_vector_table(&load_vec(path)?)
}

/// Trains on every sentence of `corpus` and writes a model dump.
pub fn train_embeddings(
    corpus: &Path,
    normalization: &NormalizationConfig,
    config: &TrainerConfig,
    out: &Path,
) -> Result<()> {
    let sentences = CorpusStream::open(corpus, normalization.clone())?.read_sentences()?;
    let (model, stats) = train_on_sentences(&sentences, config)?;
    info!(
        "trained {} words on {} tokens; epoch loss {:?}",
        stats.vocab_size, stats.corpus_tokens, stats.epoch_loss
    );
    save_model(&model, Some(config), out)
}

// ---------------------------------------------------------------------------
// Runner

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
}

impl RunReport {
    pub fn is_up_to_date(&self) -> bool {
        self.executed.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct StageStamp {
    key: String,
    outputs: Vec<PathBuf>,
}

struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(OutputLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked { path }),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn key_of(parts: serde_json::Value) -> String {
    let text = serde_json::to_string(&parts).expect("key parts serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

struct Runner {
    cache: PathBuf,
    force: bool,
    report: RunReport,
}

impl Runner {
    fn stage(
        &mut self,
        name: &'static str,
        key: &str,
        outputs: &[PathBuf],
        run: impl FnOnce() -> Result<()>,
    ) -> Result<()> {
        let dir = self.cache.join(name);
        let stamp_path = dir.join("stage.json");
        if !self.force && is_fresh(&stamp_path, key, outputs) {
            info!("{name}: up-to-date");
            self.report.skipped.push(name.to_owned());
            return Ok(());
        }
        let wrap = |e| Error::stage(name, e);
        fs::create_dir_all(&dir).map_err(|e| wrap(Error::io(&dir, e)))?;
        match fs::remove_file(&stamp_path) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => {
                return Err(wrap(Error::io(&stamp_path, e)))
            }
            _ => {}
        }
        info!("{name}: running");
        run().map_err(wrap)?;
        let stamp = StageStamp {
            key: key.to_owned(),
            outputs: outputs.to_vec(),
        };
        let json = serde_json::to_string_pretty(&stamp).expect("stamp serializes");
        fs::write(&stamp_path, json + "\n").map_err(|e| wrap(Error::io(&stamp_path, e)))?;
        self.report.executed.push(name.to_owned());
        Ok(())
    }
}

fn is_fresh(stamp_path: &Path, key: &str, outputs: &[PathBuf]) -> bool {
    let Ok(text) = fs::read_to_string(stamp_path) else {
        return false;
    };
    let Ok(stamp) = serde_json::from_str::<StageStamp>(&text) else {
        return false;
    };
    stamp.key == key && stamp.outputs == outputs && outputs.iter().all(|p| p.exists())
}

/// Runs every stage whose inputs or settings changed since its last run,
/// or every stage when `force` is set.
pub fn run_pipeline(config: &PipelineConfig, force: bool) -> Result<RunReport> {
    config.validate()?;
    config.preflight()?;
    let out_dir = config.output_dir().to_path_buf();
    let _lock = OutputLock::acquire(&out_dir)?;

    let mut inputs = BTreeMap::new();
    for (name, path) in config.input_paths() {
        inputs.insert(name, digest_path(path)?);
    }
    let digest = |name: &str| inputs.get(name).cloned();
    let version = env!("CARGO_PKG_VERSION");
    let cache = out_dir.join(CACHE_DIR);
    let mut runner = Runner {
        cache: cache.clone(),
        force,
        report: RunReport::default(),
    };
    let p = &config.paths;
    let req = |v: &Option<PathBuf>| v.clone().expect("validated");

    // screen
    let screen_dir = cache.join("screen");
    let screen_key = key_of(json!({
        "stage": "screen", "version": version,
        "mono_vocab": digest("paths.mono_vocab"),
        "base_vocab": digest("paths.base_vocab"),
        "base_matrix": digest("paths.base_matrix"),
        "subsample": config.subsample, "seed": config.seed,
    }));
    runner.stage(
        "screen",
        &screen_key,
        &[screen_dir.join(SOURCE_TOKENS), screen_dir.join(SOURCE_ROWS)],
        || {
            let mono = Vocabulary::load(req(&p.mono_vocab))?;
            let base = Vocabulary::load(req(&p.base_vocab))?;
            let matrix = load_matrix(req(&p.base_matrix))?;
            let set = screen_source_vocab(&mono, &base, &matrix, config.subsample, config.seed)?;
            info!("screened {} source tokens", set.len());
            save_source_set(&set, &screen_dir)
        },
    )?;

    // induce-vocab
    let vocab_path = cache.join("induce-vocab").join(VOCAB_FILE);
    let induce_key = key_of(json!({
        "stage": "induce-vocab", "version": version,
        "target_corpus": digest("paths.target_corpus"),
        "vocab_size": config.vocab_size, "min_frequency": config.min_frequency,
        "normalization": config.normalization,
    }));
    runner.stage("induce-vocab", &induce_key, std::slice::from_ref(&vocab_path), || {
        let mut stream = CorpusStream::open(req(&p.target_corpus), config.normalization.clone())?;
        let vocab = induce_wordpiece_vocab(&mut stream, config.vocab_size, config.min_frequency)?;
        info!("induced {} target tokens", vocab.len());
        vocab.save(&vocab_path)
    })?;

    // train-source / train-target
    let mut embeddings = Vec::new();
    for (side, corpus, vectors) in [
        ("source", &p.source_corpus, &p.source_vectors),
        ("target", &p.target_corpus, &p.target_vectors),
    ] {
        let stage: &'static str = if side == "source" {
            "train-source"
        } else {
            "train-target"
        };
        if let Some(v) = vectors {
            let key = key_of(json!({ "ingest": digest(&format!("paths.{side}_vectors")) }));
            embeddings.push((v.clone(), key));
            continue;
        }
        let model_path = cache.join(stage).join("model.bin");
        let key = key_of(json!({
            "stage": stage, "version": version,
            "corpus": digest(&format!("paths.{side}_corpus")),
            "trainer": config.trainer, "normalization": config.normalization,
        }));
        let corpus = req(corpus);
        runner.stage(stage, &key, std::slice::from_ref(&model_path), || {
            train_embeddings(&corpus, &config.normalization, &config.trainer, &model_path)
        })?;
        embeddings.push((model_path, key));
    }
    let (source_emb, source_key) = embeddings[0].clone();
    let (target_emb, target_key) = embeddings[1].clone();

    // align
    let map_path = cache.join("align").join("map.json");
    let align_key = key_of(json!({
        "stage": "align", "version": version,
        "lexicon": digest("paths.lexicon"),
        "source": source_key, "target": target_key, "align": config.align(),
    }));
    runner.stage("align", &align_key, std::slice::from_ref(&map_path), || {
        let lexicon = parse_lexicon(req(&p.lexicon))?;
        let source = load_embeddings(&source_emb)?;
        let target = load_embeddings(&target_emb)?;
        let map = fit_alignment(&lexicon, &source, &target, &config.align())?;
        info!(
            "aligned on {} pairs, residual {:.4}, orthogonality defect {:.2e}",
            map.pair_count,
            map.residual,
            map.orthogonality_defect()
        );
        save_map(&map, &map_path)
    })?;

    // build-tables
    let tables_dir = cache.join("build-tables");
    let source_table_path = tables_dir.join("source.vec");
    let target_table_path = tables_dir.join("target.vec");
    let tables_key = key_of(json!({
        "stage": "build-tables", "version": version,
        "screen": screen_key, "induce": induce_key,
        "source": source_key, "target": target_key, "align": align_key,
        "synth": config.synth(),
    }));
    runner.stage(
        "build-tables",
        &tables_key,
        &[source_table_path.clone(), target_table_path.clone()],
        || {
            let synth = config.synth();
            let set = load_source_set(&screen_dir)?;
            let source = load_embeddings(&source_emb)?;
            let u_s = build_table_for_tokens(&set.tokens, DEFAULT_CONTINUATION_PREFIX, &source, &synth);
            drop(source);
            let vocab = Vocabulary::load(&vocab_path)?;
            let map = load_map(&map_path)?;
            let target = apply_map(&map, &load_embeddings(&target_emb)?)?;
            let u_t = build_table(&vocab, &target, &synth);
            info!(
                "tables: {}/{} source and {}/{} target rows non-zero",
                u_s.unmasked_count(),
                u_s.len(),
                u_t.unmasked_count(),
                u_t.len()
            );
            save_table(&u_s, &source_table_path)?;
            save_table(&u_t, &target_table_path)
        },
    )?;

    // transplant + export
    let config_json = serde_json::to_value(config).expect("config serializes");
    let transplant_key = key_of(json!({
        "stage": "transplant", "version": version,
        "inputs": inputs, "config": config_json,
        "screen": screen_key, "induce": induce_key, "tables": tables_key,
    }));
    let outputs: Vec<PathBuf> = [VOCAB_FILE, MATRIX_FILE, PROVENANCE_FILE, MANIFEST_FILE]
        .iter()
        .map(|f| out_dir.join(f))
        .collect();
    runner.stage("transplant", &transplant_key, &outputs, || {
        let base_vocab = Vocabulary::load(req(&p.base_vocab))?;
        let base_matrix = load_matrix(req(&p.base_matrix))?;
        let set = load_source_set(&screen_dir)?;
        let u_s = load_table(&source_table_path)?;
        let u_t = load_table(&target_table_path)?;
        let vocab = Vocabulary::load(&vocab_path)?;
        let mut result = run_transplant(&base_vocab, &base_matrix, &set, &u_s, &u_t, &vocab, &config.transplant)?;
        result.manifest.config = config_json.clone();
        result.manifest.inputs = inputs.clone();
        info!(
            "appended {} tokens ({} weighted, {} sampled), {} overlapping",
            result.manifest.appended_tokens,
            result.manifest.weighted,
            result.manifest.fallback_sampled,
            result.manifest.overlap_tokens
        );
        export_result(&result, &out_dir)
    })?;

    Ok(runner.report)
}
