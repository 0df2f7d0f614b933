//! Command-line front end. `run` drives the whole cached pipeline; every
//! stage is also available as its own subcommand working on explicit files.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 stage failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::align::{apply_map, fit_alignment, parse_lexicon, AlignConfig};
use crate::corpus_io::{CorpusStream, NormalizationConfig};
use crate::embed_io::load_matrix;
use crate::embed_trainer::TrainerConfig;
use crate::error::{Error, Result};
use crate::fixture::{generate, FixtureConfig};
use crate::pipeline::{
    config_from_manifest, load_embeddings, load_map, load_source_set, load_table, parse_config, run_pipeline,
    save_map, save_source_set, save_table, train_embeddings, Override, DEFAULT_MIN_FREQUENCY,
};
use crate::synth::{build_table_for_tokens, SynthConfig};
use crate::transplant::{
    export_result, load_provenance, run_transplant, Manifest, ProvenanceKind, TransplantConfig, MANIFEST_FILE,
    PROVENANCE_FILE, VOCAB_FILE,
};
use crate::vocab::{induce_wordpiece_vocab, screen_source_vocab, Vocabulary, DEFAULT_VOCAB_SIZE};

#[derive(Debug, Parser)]
#[command(name = "lexiport", version, about = "Expand a multilingual model's vocabulary and initialize the new embedding rows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every stage, skipping those whose inputs and settings are unchanged.
    Run(RunArgs),
    /// Induce a WordPiece vocabulary from a target corpus.
    InduceVocab(InduceArgs),
    /// Intersect a monolingual source vocabulary with the base vocabulary.
    Screen(ScreenArgs),
    /// Train subword CBOW embeddings on a corpus.
    TrainEmbeddings(TrainArgs),
    /// Fit the orthogonal map from target to source space on a dictionary.
    Align(AlignArgs),
    /// Build the static vector table of a vocabulary.
    BuildTables(TablesArgs),
    /// Create the expanded embedding matrix and its provenance.
    Transplant(TransplantArgs),
    /// Show how one token's row was produced.
    Inspect(InspectArgs),
    /// Write the synthetic cipher-language fixture and a config to run it.
    MakeFixture(FixtureArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config file.
    #[arg(long, conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Replay the configuration recorded in a previous run's manifest.json.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Re-run every stage even when cached.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub overrides: ConfigFlags,
}

/// Flags mirroring config keys; each overrides the file value.
#[derive(Debug, Default, Args)]
pub struct ConfigFlags {
    #[arg(long)]
    pub source_corpus: Option<PathBuf>,
    #[arg(long)]
    pub target_corpus: Option<PathBuf>,
    #[arg(long)]
    pub source_vectors: Option<PathBuf>,
    #[arg(long)]
    pub target_vectors: Option<PathBuf>,
    #[arg(long)]
    pub base_vocab: Option<PathBuf>,
    #[arg(long)]
    pub base_matrix: Option<PathBuf>,
    #[arg(long)]
    pub mono_vocab: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub min_frequency: Option<u64>,
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub nfc: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub lowercase: Option<bool>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub min_count: Option<u64>,
    #[arg(long)]
    pub initial_lr: Option<f64>,
    #[arg(long)]
    pub n_min: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub bucket_count: Option<usize>,
    #[arg(long)]
    pub sample: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub trainer_seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub transplant_seed: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub normalize_before_align: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub ngram_mean: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub ngram_markers: Option<bool>,
    /// Any config key as `dotted.key=value`, value in TOML syntax.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

fn int(v: impl TryInto<i64>) -> Result<toml::Value> {
    v.try_into()
        .map(toml::Value::Integer)
        .map_err(|_| Error::Config("integer flag out of range".into()))
}

impl ConfigFlags {
    pub fn to_overrides(&self) -> Result<Vec<Override>> {
        let mut out = Vec::new();
        let paths = [
            ("paths.source_corpus", &self.source_corpus),
            ("paths.target_corpus", &self.target_corpus),
            ("paths.source_vectors", &self.source_vectors),
            ("paths.target_vectors", &self.target_vectors),
            ("paths.base_vocab", &self.base_vocab),
            ("paths.base_matrix", &self.base_matrix),
            ("paths.mono_vocab", &self.mono_vocab),
            ("paths.lexicon", &self.lexicon),
            ("paths.output_dir", &self.output_dir),
        ];
        for (key, value) in paths {
            if let Some(p) = value {
                out.push(Override::path(key, p));
            }
        }
        let ints: [(&str, Option<u64>); 15] = [
            ("vocab_size", self.vocab_size.map(|v| v as u64)),
            ("min_frequency", self.min_frequency),
            ("subsample", self.subsample.map(|v| v as u64)),
            ("seed", self.seed),
            ("trainer.dim", self.dim.map(|v| v as u64)),
            ("trainer.epochs", self.epochs.map(|v| v as u64)),
            ("trainer.negatives", self.negatives.map(|v| v as u64)),
            ("trainer.window", self.window.map(|v| v as u64)),
            ("trainer.min_count", self.min_count),
            ("trainer.n_min", self.n_min.map(|v| v as u64)),
            ("trainer.n_max", self.n_max.map(|v| v as u64)),
            ("trainer.bucket_count", self.bucket_count.map(|v| v as u64)),
            ("trainer.workers", self.workers.map(|v| v as u64)),
            ("trainer.seed", self.trainer_seed),
            ("transplant.k", self.k.map(|v| v as u64)),
        ];
        for (key, value) in ints {
            if let Some(v) = value {
                out.push(Override::new(key, int(v)?));
            }
        }
        if let Some(v) = self.transplant_seed {
            out.push(Override::new("transplant.seed", int(v)?));
        }
        let floats = [
            ("trainer.initial_lr", self.initial_lr),
            ("trainer.sample", self.sample),
            ("transplant.tau", self.tau),
        ];
        for (key, value) in floats {
            if let Some(v) = value {
                out.push(Override::new(key, v));
            }
        }
        let bools = [
            ("normalization.nfc", self.nfc),
            ("normalization.lowercase", self.lowercase),
            ("flags.normalize_before_align", self.normalize_before_align),
            ("flags.ngram_mean", self.ngram_mean),
            ("flags.ngram_markers", self.ngram_markers),
        ];
        for (key, value) in bools {
            if let Some(v) = value {
                out.push(Override::new(key, v));
            }
        }
        for raw in &self.set {
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {raw:?}")))?;
            let parsed: toml::Table = toml::from_str(&format!("v = {value}"))
                .map_err(|e| Error::Config(format!("--set {key}: {}", e.message())))?;
            out.push(Override::new(key.trim(), parsed["v"].clone()));
        }
        Ok(out)
    }
}

#[derive(Debug, Args)]
pub struct InduceArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_FREQUENCY)]
    pub min_frequency: u64,
    #[arg(long)]
    pub lowercase: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    #[arg(long)]
    pub mono_vocab: PathBuf,
    #[arg(long)]
    pub base_vocab: PathBuf,
    #[arg(long)]
    pub base_matrix: PathBuf,
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving `source_tokens.txt` and `source_rows.bin`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Model dump (word rows and n-gram buckets).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the word vectors as a `.vec` file.
    #[arg(long)]
    pub vec: Option<PathBuf>,
    #[arg(long)]
    pub lowercase: bool,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub min_count: Option<u64>,
    #[arg(long)]
    pub initial_lr: Option<f64>,
    #[arg(long)]
    pub n_min: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub bucket_count: Option<usize>,
    #[arg(long)]
    pub sample: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

impl TrainArgs {
    fn trainer(&self) -> TrainerConfig {
        let mut c = TrainerConfig::default();
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(dim, epochs, negatives, window, min_count, initial_lr, n_min, n_max, bucket_count, sample, seed, workers);
        c
    }
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Source embeddings (model dump or `.vec`).
    #[arg(long)]
    pub source: PathBuf,
    /// Target embeddings (model dump or `.vec`).
    #[arg(long)]
    pub target: PathBuf,
    /// Map as JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the map as a little-endian `f32` matrix with sidecar.
    #[arg(long)]
    pub out_bin: Option<PathBuf>,
    #[arg(long)]
    pub normalize_before_align: bool,
}

#[derive(Debug, Args)]
pub struct TablesArgs {
    /// Tokens to embed, one per line.
    #[arg(long)]
    pub vocab: PathBuf,
    /// Static embeddings (model dump or `.vec`).
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Orthogonal map applied to the embeddings first.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ngram_mean: bool,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub ngram_markers: bool,
    #[arg(long, default_value_t = 3)]
    pub n_min: usize,
    #[arg(long, default_value_t = 6)]
    pub n_max: usize,
}

#[derive(Debug, Args)]
pub struct TransplantArgs {
    #[arg(long)]
    pub base_vocab: PathBuf,
    #[arg(long)]
    pub base_matrix: PathBuf,
    /// Output directory of `screen`.
    #[arg(long)]
    pub source_set: PathBuf,
    #[arg(long)]
    pub source_table: PathBuf,
    #[arg(long)]
    pub target_table: PathBuf,
    #[arg(long)]
    pub target_vocab: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Directory holding the exported outputs.
    #[arg(long)]
    pub out_dir: PathBuf,
    pub token: String,
    /// Print the raw provenance record.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(_) | Error::Stage { .. } => e,
        other => Error::stage(name, other),
    })
}

fn normalization(lowercase: bool) -> NormalizationConfig {
    NormalizationConfig {
        lowercase,
        ..NormalizationConfig::default()
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run(a) => cmd_run(a),
        Command::InduceVocab(a) => stage("induce-vocab", cmd_induce(a)),
        Command::Screen(a) => stage("screen", cmd_screen(a)),
        Command::TrainEmbeddings(a) => stage("train-embeddings", cmd_train(a)),
        Command::Align(a) => stage("align", cmd_align(a)),
        Command::BuildTables(a) => stage("build-tables", cmd_tables(a)),
        Command::Transplant(a) => stage("transplant", cmd_transplant(a)),
        Command::Inspect(a) => stage("inspect", cmd_inspect(a)),
        Command::MakeFixture(a) => stage("make-fixture", cmd_fixture(a)),
    }
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let overrides = a.overrides.to_overrides()?;
    let config = match &a.manifest {
        Some(m) => config_from_manifest(m, &overrides)?,
        None => parse_config(a.config.as_deref(), &overrides)?,
    };
    let report = run_pipeline(&config, a.force)?;
    if report.is_up_to_date() {
        println!("up-to-date");
    } else {
        println!("executed: {}", report.executed.join(", "));
        if !report.skipped.is_empty() {
            println!("cached: {}", report.skipped.join(", "));
        }
        println!("outputs: {}", config.output_dir().display());
    }
    Ok(())
}

fn cmd_induce(a: InduceArgs) -> Result<()> {
    let mut stream = CorpusStream::open(&a.corpus, normalization(a.lowercase))?;
    let vocab = induce_wordpiece_vocab(&mut stream, a.vocab_size, a.min_frequency)?;
    vocab.save(&a.out)?;
    println!("{} tokens -> {}", vocab.len(), a.out.display());
    Ok(())
}

fn cmd_screen(a: ScreenArgs) -> Result<()> {
    let mono = Vocabulary::load(&a.mono_vocab)?;
    let base = Vocabulary::load(&a.base_vocab)?;
    let matrix = load_matrix(&a.base_matrix)?;
    let set = screen_source_vocab(&mono, &base, &matrix, a.subsample, a.seed)?;
    save_source_set(&set, &a.out_dir)?;
    println!("{} source tokens -> {}", set.len(), a.out_dir.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let config = a.trainer();
    config.validate()?;
    train_embeddings(&a.corpus, &normalization(a.lowercase), &config, &a.out)?;
    if let Some(vec) = &a.vec {
        let emb = load_embeddings(&a.out)?;
        if let crate::synth::StaticEmbeddings::Model(m) = emb {
            crate::embed_io::save_vec(&m.to_vector_table(), vec)?;
        }
    }
    println!("model -> {}", a.out.display());
    Ok(())
}

fn cmd_align(a: AlignArgs) -> Result<()> {
    let lexicon = parse_lexicon(&a.lexicon)?;
    let source = load_embeddings(&a.source)?;
    let target = load_embeddings(&a.target)?;
    let config = AlignConfig {
        normalize_before_align: a.normalize_before_align,
    };
    let map = fit_alignment(&lexicon, &source, &target, &config)?;
    save_map(&map, &a.out)?;
    if let Some(bin) = &a.out_bin {
        map.export(bin)?;
    }
    println!(
        "{} pairs, residual {:.6}, orthogonality defect {:.3e}",
        map.pair_count,
        map.residual,
        map.orthogonality_defect()
    );
    Ok(())
}

fn cmd_tables(a: TablesArgs) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let mut emb = load_embeddings(&a.embeddings)?;
    if let Some(m) = &a.map {
        emb = apply_map(&load_map(m)?, &emb)?;
    }
    let config = SynthConfig {
        ngram_markers: a.ngram_markers,
        ngram_mean: a.ngram_mean,
        n_min: a.n_min,
        n_max: a.n_max,
    };
    let table = build_table_for_tokens(vocab.tokens(), vocab.continuation_prefix(), &emb, &config);
    save_table(&table, &a.out)?;
    println!(
        "{}/{} non-zero rows -> {}",
        table.unmasked_count(),
        table.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_transplant(a: TransplantArgs) -> Result<()> {
    let config = TransplantConfig {
        k: a.k,
        tau: a.tau,
        seed: a.seed,
    };
    config.validate()?;
    let base_vocab = Vocabulary::load(&a.base_vocab)?;
    let base_matrix = load_matrix(&a.base_matrix)?;
    let set = load_source_set(&a.source_set)?;
    let u_s = load_table(&a.source_table)?;
    let u_t = load_table(&a.target_table)?;
    let vocab = Vocabulary::load(&a.target_vocab)?;
    let mut result = run_transplant(&base_vocab, &base_matrix, &set, &u_s, &u_t, &vocab, &config)?;
    for (name, path) in [
        ("base_vocab", &a.base_vocab),
        ("base_matrix", &a.base_matrix),
        ("source_table", &a.source_table),
        ("target_table", &a.target_table),
        ("target_vocab", &a.target_vocab),
    ] {
        result
            .manifest
            .inputs
            .insert(name.to_owned(), crate::transplant::sha256_file(path)?);
    }
    export_result(&result, &a.out_dir)?;
    println!(
        "{} appended ({} weighted, {} sampled) -> {}",
        result.manifest.appended_tokens,
        result.manifest.weighted,
        result.manifest.fallback_sampled,
        a.out_dir.display()
    );
    Ok(())
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Contract(format!("{}: {e}", path.display())))
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let vocab = Vocabulary::load(a.out_dir.join(VOCAB_FILE))?;
    let id = vocab
        .id_of(&a.token)
        .ok_or_else(|| Error::Vocabulary(format!("{:?} is not in the expanded vocabulary", a.token)))?;
    let manifest = read_manifest(&a.out_dir)?;
    if id < manifest.base_tokens {
        println!("{} (id {id}): base token, row copied unchanged from the base matrix", a.token);
        return Ok(());
    }
    let records = load_provenance(a.out_dir.join(PROVENANCE_FILE))?;
    let rec = records
        .iter()
        .find(|r| r.token == a.token)
        .ok_or_else(|| Error::Contract(format!("no provenance record for {:?}", a.token)))?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(rec).expect("record serializes"));
        return Ok(());
    }
    let kind = match rec.provenance {
        ProvenanceKind::Weighted => "weighted",
        ProvenanceKind::FallbackSampled => "fallback_sampled",
        ProvenanceKind::OverlapCopied => "overlap_copied",
    };
    println!("{} (id {}): {kind}", rec.token, rec.id);
    if !rec.neighbors.is_empty() {
        let width = rec.neighbors.iter().map(|n| n.src.chars().count()).max().unwrap_or(0).max(6);
        println!("  {:>4}  {:<width$}  {:>10}  {:>10}", "rank", "source", "cosine", "weight");
        for (i, n) in rec.neighbors.iter().enumerate() {
            println!("  {:>4}  {:<width$}  {:>10.6}  {:>10.6}", i + 1, n.src, n.sim, n.weight);
        }
    }
    Ok(())
}

fn cmd_fixture(a: FixtureArgs) -> Result<()> {
    let config = FixtureConfig {
        seed: a.seed,
        ..FixtureConfig::default()
    };
    let paths = generate(&config)?.write(&a.out)?;
    println!("fixture -> {}", a.out.display());
    println!("run it with: lexiport run --config {}", paths.config.display());
    Ok(())
}
