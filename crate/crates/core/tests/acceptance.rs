//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the test
//! harness so the lines show in plain `cargo test` output.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use lexiport_core::align::procrustes;
use lexiport_core::corpus_io::{CorpusStream, NormalizationConfig};
use lexiport_core::embed_io::{fit_gaussian, load_matrix, sample_gaussian, EmbeddingMatrix};
use lexiport_core::fixture::{generate, FixtureConfig};
use lexiport_core::pipeline::{load_table, parse_config, run_pipeline, Override, CACHE_DIR};
use lexiport_core::transplant::{softmax_weights, top_k_similar, MATRIX_FILE, PROVENANCE_FILE, VOCAB_FILE};
use lexiport_core::vocab::{induce_wordpiece_vocab, UNK};
use rand::Rng;

use common::*;

const PROCRUSTES_DIM: usize = 10;
const PROCRUSTES_PAIRS: usize = 200;
const PROCRUSTES_TOL: f64 = 1e-6;
const PROCRUSTES_BUDGET: Duration = Duration::from_secs(1);

const TOPK_SOURCES: usize = 40;
const TOPK_TARGETS: usize = 25;
const TOPK_K: usize = 10;
const TOPK_TOL: f64 = 1e-6;

const SOFTMAX_LISTS: usize = 1000;
const SOFTMAX_SUM_TOL: f64 = 1e-9;
const SOFTMAX_LIMIT_TOL: f64 = 1e-6;
const SOFTMAX_EXAMPLE_TOL: f64 = 1e-6;

const GAUSSIAN_SAMPLES: usize = 10_000;
const GAUSSIAN_SIGMAS: f64 = 4.0;

const CIPHER_TOP: usize = 3;
const CIPHER_MIN_HIT_RATE: f64 = 0.80;
const CIPHER_BUDGET: Duration = Duration::from_secs(300);

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> Outcome {
    let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    Outcome { name, pass, detail }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn procrustes_recovery() -> Result<String, String> {
    let mut rng = rng(11);
    let r = random_orthogonal(&mut rng, PROCRUSTES_DIM);
    let x = gaussian_matrix(&mut rng, PROCRUSTES_PAIRS, PROCRUSTES_DIM);
    let y = &x * &r;
    let start = Instant::now();
    let w = procrustes(&x, &y).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let err = (&w - &r).norm();
    let gram = w.transpose() * &w;
    let defect = (0..PROCRUSTES_DIM)
        .flat_map(|i| (0..PROCRUSTES_DIM).map(move |j| (i, j)))
        .map(|(i, j)| (gram[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);
    ensure(err < PROCRUSTES_TOL, || format!("||W-R||_F = {err:e}"))?;
    ensure(defect < PROCRUSTES_TOL, || format!("orthogonality defect {defect:e}"))?;
    ensure(elapsed < PROCRUSTES_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("||W-R||_F = {err:.2e}, defect {defect:.2e}, {elapsed:?}"))
}

fn top_k_oracle() -> Result<String, String> {
    let mut rng = rng(12);
    let mut source_rows = rows_of(&random_table(&mut rng, "s", TOPK_SOURCES, 16));
    // exact duplicates force ties that only the index rule can order
    for i in 0..8 {
        source_rows[TOPK_SOURCES - 1 - i] = source_rows[i].clone();
    }
    let mut target_rows = rows_of(&random_table(&mut rng, "t", TOPK_TARGETS, 16));
    target_rows[3] = source_rows[2].clone();
    let source = table_from("s", &source_rows);
    let target = table_from("t", &target_rows);
    let view = top_k_similar(&source, &target, TOPK_K).map_err(|e| e.to_string())?;
    let oracle = brute_force_top_k(&source_rows, &target_rows, TOPK_K);
    let mut worst = 0f64;
    for (t, (got, want)) in view.lists.iter().zip(&oracle).enumerate() {
        let (got, want) = (got.as_ref().ok_or("unexpected mask")?, want.as_ref().ok_or("oracle mask")?);
        let got_ids: Vec<usize> = got.iter().map(|n| n.source).collect();
        let want_ids: Vec<usize> = want.iter().map(|w| w.0).collect();
        ensure(got_ids == want_ids, || format!("target {t}: {got_ids:?} vs oracle {want_ids:?}"))?;
        for (n, w) in got.iter().zip(want) {
            worst = worst.max((n.similarity - w.1).abs());
        }
    }
    ensure(worst < TOPK_TOL, || format!("max similarity deviation {worst:e}"))?;
    Ok(format!("{TOPK_TARGETS} lists identical, max deviation {worst:.1e}"))
}

fn softmax_properties() -> Result<String, String> {
    let mut rng = rng(13);
    let mut worst_sum = 0f64;
    let (mut sharp_checked, mut worst_sharp, mut worst_flat) = (0, 1f64, 0f64);
    for _ in 0..SOFTMAX_LISTS {
        let len = rng.random_range(1..=20);
        let sims: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tau = 10f64.powf(rng.random_range(-2.0..1.0));
        let w = softmax_weights(&sims, tau).map_err(|e| e.to_string())?;
        ensure(w.iter().all(|&x| x > 0.0 && x <= 1.0), || format!("weight outside (0,1]: {w:?}"))?;
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());

        let max = sims.iter().cloned().fold(f64::MIN, f64::max);
        let arg = sims.iter().position(|&s| s == max).unwrap();
        if sims.iter().filter(|&&s| s == max).count() == 1 {
            let sharp = softmax_weights(&sims, 1e-6).map_err(|e| e.to_string())?;
            worst_sharp = worst_sharp.min(sharp[arg]);
            sharp_checked += 1;
        }
        let flat = softmax_weights(&sims, 1e6).map_err(|e| e.to_string())?;
        let uniform = 1.0 / len as f64;
        worst_flat = flat.iter().map(|&x| (x - uniform).abs()).fold(worst_flat, f64::max);
    }
    ensure(worst_sum < SOFTMAX_SUM_TOL, || format!("weights sum off by {worst_sum:e}"))?;
    ensure(worst_sharp > 1.0 - SOFTMAX_LIMIT_TOL, || format!("tau=1e-6 top weight {worst_sharp}"))?;
    ensure(worst_flat < SOFTMAX_LIMIT_TOL, || format!("tau=1e6 deviation from uniform {worst_flat:e}"))?;

    let w = softmax_weights(&[0.9, 0.7], 0.1).map_err(|e| e.to_string())?;
    let (e9, e7) = (9f64.exp(), 7f64.exp());
    let hand = [e9 / (e9 + e7), e7 / (e9 + e7)];
    ensure(
        (w[0] - 0.880797).abs() < SOFTMAX_EXAMPLE_TOL && (w[1] - 0.119203).abs() < SOFTMAX_EXAMPLE_TOL,
        || format!("example weights {w:?}"),
    )?;
    ensure((w[0] - hand[0]).abs() < 1e-12, || format!("example vs e^9/(e^9+e^7): {w:?}"))?;
    Ok(format!(
        "sum dev {worst_sum:.1e}; tau=1e-6 min top {worst_sharp:.9} over {sharp_checked} lists; \
         tau=1e6 dev {worst_flat:.1e}; example ({:.6}, {:.6})",
        w[0], w[1]
    ))
}

fn config_defaults() -> Result<String, String> {
    let required = [
        ("paths.source_corpus", "src.txt"),
        ("paths.target_corpus", "tgt.txt"),
        ("paths.base_vocab", "vocab.txt"),
        ("paths.base_matrix", "matrix.bin"),
        ("paths.mono_vocab", "mono.txt"),
        ("paths.lexicon", "lex.txt"),
        ("paths.output_dir", "out"),
    ];
    let overrides: Vec<Override> = required.iter().map(|(k, v)| Override::new(*k, *v)).collect();
    let c = parse_config(None, &overrides).map_err(|e| e.to_string())?;
    c.validate().map_err(|e| e.to_string())?;
    let got = (
        c.transplant.k,
        c.transplant.tau,
        c.vocab_size,
        c.trainer.dim,
        c.trainer.epochs,
        c.trainer.negatives,
    );
    ensure(got == (10, 0.1, 30_000, 300, 20, 10), || format!("defaults {got:?}"))?;
    Ok("k=10 tau=0.1 vocab_size=30000 dim=300 epochs=20 negatives=10".into())
}

fn gaussian_statistics() -> Result<String, String> {
    let mut rng = rng(14);
    let dim = 8;
    let rows: Vec<Vec<f32>> = (0..500)
        .map(|_| {
            (0..dim)
                .map(|j| (j as f32 - 3.0) + (j as f32 + 1.0) * 0.3 * rng.random_range(-1.0f32..1.0))
                .collect()
        })
        .collect();
    let g = fit_gaussian(&EmbeddingMatrix::from_rows(dim, &rows).unwrap()).map_err(|e| e.to_string())?;
    let mut sums = vec![0f64; dim];
    for _ in 0..GAUSSIAN_SAMPLES {
        for (s, x) in sums.iter_mut().zip(sample_gaussian(&g, &mut rng)) {
            *s += x as f64;
        }
    }
    let mut worst = 0f64;
    for j in 0..dim {
        let mean = sums[j] / GAUSSIAN_SAMPLES as f64;
        let bound = GAUSSIAN_SIGMAS * (g.variance[j] / GAUSSIAN_SAMPLES as f64).sqrt();
        let dev = (mean - g.mean[j]).abs();
        ensure(dev <= bound, || format!("dim {j}: |{mean} - {}| > {bound}", g.mean[j]))?;
        worst = worst.max(dev / bound);
    }

    let flat = EmbeddingMatrix::from_rows(3, &[[0.5f32, -2.0, 7.25]; 4]).unwrap();
    let g0 = fit_gaussian(&flat).map_err(|e| e.to_string())?;
    let s = sample_gaussian(&g0, &mut rng);
    ensure(s == vec![0.5f32, -2.0, 7.25], || format!("zero-variance sample {s:?}"))?;
    Ok(format!("max |mean dev| = {worst:.2} of the 4-sigma bound; zero variance returns the mean"))
}

fn wordpiece_self_coverage(corpus: &Path) -> Result<String, String> {
    let mut parts = Vec::new();
    for size in [60, 2000] {
        let open = || CorpusStream::open(corpus, NormalizationConfig::default()).map_err(|e| e.to_string());
        let vocab = induce_wordpiece_vocab(&mut open()?, size, 1).map_err(|e| e.to_string())?;
        let mut words = 0usize;
        let mut unk = 0usize;
        for tok in open()?.tokens() {
            let tok = tok.map_err(|e| e.to_string())?;
            words += 1;
            unk += vocab.tokenize(&tok).iter().filter(|p| p.as_str() == UNK).count();
        }
        ensure(unk == 0, || format!("vocab size {size}: {unk} UNK over {words} words"))?;
        parts.push(format!("{} tokens: 0 UNK over {words} words", vocab.len()));
    }
    Ok(parts.join("; "))
}

struct CipherRun {
    elapsed: Duration,
    hits: usize,
    total: usize,
}

fn cipher_end_to_end(dir: &Path, out: &str) -> Result<CipherRun, String> {
    let start = Instant::now();
    let fixture = generate(&FixtureConfig::default()).map_err(|e| e.to_string())?;
    let paths = fixture.write(dir).map_err(|e| e.to_string())?;
    let config = parse_config(
        Some(&paths.config),
        &[Override::new("paths.output_dir", dir.join(out).to_string_lossy().into_owned())],
    )
    .map_err(|e| e.to_string())?;
    run_pipeline(&config, false).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let tables = dir.join(out).join(CACHE_DIR).join("build-tables");
    let u_s = load_table(&tables.join("source.vec")).map_err(|e| e.to_string())?;
    let u_t = load_table(&tables.join("target.vec")).map_err(|e| e.to_string())?;
    let view = top_k_similar(&u_s, &u_t, CIPHER_TOP).map_err(|e| e.to_string())?;
    let mut hits = 0;
    for (src, tgt) in &fixture.heldout {
        let Some(t) = u_t.tokens.iter().position(|x| x == tgt) else {
            continue;
        };
        let Some(list) = &view.lists[t] else { continue };
        if list.iter().any(|n| &u_s.tokens[n.source] == src) {
            hits += 1;
        }
    }
    Ok(CipherRun {
        elapsed,
        hits,
        total: fixture.heldout.len(),
    })
}

fn main() {
    let mut outcomes = vec![
        check("procrustes exact recovery", procrustes_recovery),
        check("cosine top-k equals brute-force oracle", top_k_oracle),
        check("softmax weight properties", softmax_properties),
        check("config defaults", config_defaults),
        check("gaussian fallback statistics", gaussian_statistics),
    ];

    let work = tempfile::tempdir().expect("temp dir");
    let first = cipher_end_to_end(work.path(), "run_a");
    outcomes.push(check("cipher-language end-to-end translation retrieval", || {
        let run = first.as_ref().map_err(Clone::clone)?;
        let rate = run.hits as f64 / run.total as f64;
        ensure(rate >= CIPHER_MIN_HIT_RATE, || {
            format!("{}/{} held-out pairs in top-{CIPHER_TOP}", run.hits, run.total)
        })?;
        ensure(run.elapsed < CIPHER_BUDGET, || format!("took {:?}", run.elapsed))?;
        Ok(format!(
            "{}/{} held-out pairs in top-{CIPHER_TOP} ({:.0}%), {:.1?}",
            run.hits,
            run.total,
            rate * 100.0,
            run.elapsed
        ))
    }));

    outcomes.push(check("base-row preservation and determinism", || {
        first.as_ref().map_err(Clone::clone)?;
        cipher_end_to_end(work.path(), "run_b")?;
        let (a, b) = (work.path().join("run_a"), work.path().join("run_b"));
        for f in [MATRIX_FILE, PROVENANCE_FILE, VOCAB_FILE] {
            let same = fs::read(a.join(f)).map_err(|e| e.to_string())? == fs::read(b.join(f)).map_err(|e| e.to_string())?;
            ensure(same, || format!("{f} differs between identical runs"))?;
        }
        let base = load_matrix(work.path().join("base_matrix.bin")).map_err(|e| e.to_string())?;
        let out = load_matrix(a.join(MATRIX_FILE)).map_err(|e| e.to_string())?;
        for i in 0..base.rows() {
            let same = base.row(i).iter().zip(out.row(i)).all(|(x, y)| x.to_bits() == y.to_bits());
            ensure(same, || format!("base row {i} changed"))?;
        }
        Ok(format!(
            "{} base rows bit-identical; {MATRIX_FILE}, {PROVENANCE_FILE}, {VOCAB_FILE} byte-identical across runs",
            base.rows()
        ))
    }));

    outcomes.push(check("wordpiece self-coverage", || {
        wordpiece_self_coverage(&work.path().join("target.txt"))
    }));

    let mut failed = 0;
    println!();
    for o in &outcomes {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag}  {}: {}", o.name, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("\n{} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
