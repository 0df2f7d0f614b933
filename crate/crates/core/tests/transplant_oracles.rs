mod common;

use std::fs;

use lexiport_core::embed_io::{fit_gaussian, load_matrix, sample_gaussian, EmbeddingMatrix};
use lexiport_core::synth::VocabEmbeddingTable;
use lexiport_core::transplant::{
    export_result, load_provenance, run_transplant, sha256_file, softmax_weights, token_rng, top_k_similar,
    weighted_init, ProvenanceKind, TransplantConfig, TransplantResult, MATRIX_FILE, PROVENANCE_FILE,
};
use lexiport_core::vocab::{SourceVocabSet, Vocabulary};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::*;

#[test]
fn top_k_with_masked_rows_equals_brute_force() {
    let mut r = rng(31);
    let mut source = rows_of(&random_table(&mut r, "s", 40, 12));
    let mut target = rows_of(&random_table(&mut r, "t", 25, 12));
    for i in [0, 13, 39] {
        source[i] = vec![0.0; 12];
    }
    for i in [5, 24] {
        target[i] = vec![0.0; 12];
    }
    target[7] = source[20].iter().map(|x| x * 3.0).collect();
    let view = top_k_similar(&table_from("s", &source), &table_from("t", &target), 10).unwrap();
    let oracle = brute_force_top_k(&source, &target, 10);
    for (got, want) in view.lists.iter().zip(&oracle) {
        match (got, want) {
            (None, None) => {}
            (Some(g), Some(w)) => {
                assert_eq!(g.iter().map(|n| n.source).collect::<Vec<_>>(), w.iter().map(|x| x.0).collect::<Vec<_>>());
                for (n, x) in g.iter().zip(w) {
                    assert!((n.similarity - x.1).abs() < 1e-6);
                }
            }
            _ => panic!("mask mismatch"),
        }
    }
    let first = &view.lists[7].as_ref().unwrap()[0];
    assert_eq!(first.source, 20);
    assert!((first.similarity - 1.0).abs() < 1e-9);
}

#[test]
fn orthogonal_target_has_zero_similarities() {
    let source = table_from("s", &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
    let target = table_from("t", &[vec![0.0, 0.0, 2.0]]);
    let view = top_k_similar(&source, &target, 2).unwrap();
    assert!(view.lists[0].as_ref().unwrap().iter().all(|n| n.similarity == 0.0));
    assert!(top_k_similar(&source, &target, 3).is_err());
    let all_masked = table_from("s", &[vec![0.0, 0.0, 0.0]]);
    assert!(top_k_similar(&all_masked, &target, 1).is_err());
}

struct Setup {
    base_vocab: Vocabulary,
    base_matrix: EmbeddingMatrix,
    set: SourceVocabSet,
    u_s: VocabEmbeddingTable,
    u_t: VocabEmbeddingTable,
    new_vocab: Vocabulary,
}

/// 10 screened source tokens, 5 target tokens: three plain, one already in
/// the base vocabulary and one without a static vector.
fn setup() -> Setup {
    let mut r = rng(32);
    let src: Vec<String> = (0..10).map(|i| format!("src{i}")).collect();
    let mut base_tokens = src.clone();
    base_tokens.extend(["other".to_owned(), "shared".to_owned()]);
    let base_vocab = Vocabulary::with_specials(base_tokens).unwrap();
    let rows: Vec<Vec<f32>> = (0..base_vocab.len())
        .map(|_| (0..6).map(|_| r.random_range(-1.0f32..1.0)).collect())
        .collect();
    let base_matrix = EmbeddingMatrix::from_rows(6, &rows).unwrap();
    let ids: Vec<usize> = src.iter().map(|t| base_vocab.id_of(t).unwrap()).collect();
    let set = SourceVocabSet {
        tokens: src.clone(),
        rows: base_matrix.select_rows(&ids),
    };
    let u_s_rows: Vec<Vec<f32>> = (0..10).map(|_| (0..4).map(|_| r.random_range(-1.0f32..1.0)).collect()).collect();
    let u_s = VocabEmbeddingTable::from_rows(src, EmbeddingMatrix::from_rows(4, &u_s_rows).unwrap()).unwrap();
    let new_tokens = ["tga", "tgb", "shared", "tgc", "empty"];
    let new_vocab = Vocabulary::with_specials(new_tokens).unwrap();
    let mut u_t_rows = vec![vec![0.0f32; 4]; 5];
    for _ in 0..5 {
        u_t_rows.push((0..4).map(|_| r.random_range(-1.0f32..1.0)).collect());
    }
    u_t_rows[9] = vec![0.0; 4];
    let u_t = VocabEmbeddingTable::from_rows(
        new_vocab.tokens().to_vec(),
        EmbeddingMatrix::from_rows(4, &u_t_rows).unwrap(),
    )
    .unwrap();
    Setup {
        base_vocab,
        base_matrix,
        set,
        u_s,
        u_t,
        new_vocab,
    }
}

fn transplant(s: &Setup, cfg: &TransplantConfig) -> TransplantResult {
    run_transplant(&s.base_vocab, &s.base_matrix, &s.set, &s.u_s, &s.u_t, &s.new_vocab, cfg).unwrap()
}

/// Straight-line oracle: full cosine matrix, plain exp-normalized weights,
/// weighted sum of base rows in f64.
fn oracle_row(s: &Setup, token: &str, k: usize, tau: f64) -> Vec<f64> {
    let t = s.new_vocab.id_of(token).unwrap();
    let q: Vec<f64> = s.u_t.row(t).iter().map(|&x| x as f64).collect();
    let mut sims: Vec<(usize, f64)> = (0..s.u_s.len())
        .map(|i| {
            let v: Vec<f64> = s.u_s.row(i).iter().map(|&x| x as f64).collect();
            let dot: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
            let nq: f64 = q.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            (i, dot / (nq * nv))
        })
        .collect();
    sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let top = &sims[..k];
    let z: f64 = top.iter().map(|(_, x)| (x / tau).exp()).sum();
    let mut out = vec![0.0; s.base_matrix.dim()];
    for (i, sim) in top {
        let w = (sim / tau).exp() / z;
        let base_id = s.base_vocab.id_of(&s.set.tokens[*i]).unwrap();
        for (o, &x) in out.iter_mut().zip(s.base_matrix.row(base_id)) {
            *o += w * x as f64;
        }
    }
    out
}

#[test]
fn small_fixture_matches_straight_line_oracle() {
    let s = setup();
    let cfg = TransplantConfig { k: 3, tau: 0.5, seed: 9 };
    let res = transplant(&s, &cfg);
    let base_len = s.base_vocab.len();
    assert_eq!(res.matrix.rows(), base_len + 4);
    assert_eq!(res.overlap.last().map(String::as_str), Some("shared"));
    assert!(res.overlap.iter().rev().skip(1).all(|t| lexiport_core::vocab::is_special(t)));
    for i in 0..base_len {
        assert_eq!(res.matrix.row(i), s.base_matrix.row(i));
    }
    for tok in ["tga", "tgb", "tgc"] {
        let id = res.merged_vocab.id_of(tok).unwrap();
        let want = oracle_row(&s, tok, 3, 0.5);
        for (g, w) in res.matrix.row(id).iter().zip(&want) {
            assert!((*g as f64 - w).abs() < 1e-6, "{tok}: {g} vs {w}");
        }
        let rec = res.provenance.iter().find(|r| r.token == tok).unwrap();
        assert_eq!(rec.provenance, ProvenanceKind::Weighted);
        assert_eq!(rec.neighbors.len(), 3);
        assert!((rec.neighbors.iter().map(|n| n.weight).sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let id = res.merged_vocab.id_of("empty").unwrap();
    let g = fit_gaussian(&s.set.rows).unwrap();
    assert_eq!(res.matrix.row(id), sample_gaussian(&g, &mut token_rng(9, "empty")).as_slice());
    let rec = res.provenance.iter().find(|r| r.token == "empty").unwrap();
    assert_eq!(rec.provenance, ProvenanceKind::FallbackSampled);
    assert!(rec.neighbors.is_empty());
    assert_eq!(res.provenance.len(), 4);
    assert_eq!((res.manifest.weighted, res.manifest.fallback_sampled), (3, 1));
}

#[test]
fn pure_overlap_returns_base_matrix() {
    let s = setup();
    let new_vocab = Vocabulary::with_specials(["src1", "other"]).unwrap();
    let u_t = VocabEmbeddingTable::from_rows(
        new_vocab.tokens().to_vec(),
        EmbeddingMatrix::from_rows(4, &vec![vec![1.0f32; 4]; new_vocab.len()]).unwrap(),
    )
    .unwrap();
    let res = run_transplant(&s.base_vocab, &s.base_matrix, &s.set, &s.u_s, &u_t, &new_vocab, &TransplantConfig::default())
        .unwrap();
    assert_eq!(res.matrix, s.base_matrix);
    assert!(res.provenance.is_empty());
}

#[test]
fn rows_do_not_depend_on_target_order() {
    let s = setup();
    let cfg = TransplantConfig { k: 4, tau: 0.2, seed: 3 };
    let a = transplant(&s, &cfg);
    let mut order: Vec<usize> = (5..s.new_vocab.len()).collect();
    order.shuffle(&mut rng(33));
    let tokens: Vec<String> = order.iter().map(|&i| s.new_vocab.tokens()[i].clone()).collect();
    let new_vocab = Vocabulary::with_specials(tokens).unwrap();
    let rows: Vec<Vec<f32>> = new_vocab
        .tokens()
        .iter()
        .map(|t| s.u_t.row(s.new_vocab.id_of(t).unwrap()).to_vec())
        .collect();
    let u_t = VocabEmbeddingTable::from_rows(new_vocab.tokens().to_vec(), EmbeddingMatrix::from_rows(4, &rows).unwrap())
        .unwrap();
    let b = run_transplant(&s.base_vocab, &s.base_matrix, &s.set, &s.u_s, &u_t, &new_vocab, &cfg).unwrap();
    for tok in ["tga", "tgb", "tgc", "empty"] {
        let ra = a.matrix.row(a.merged_vocab.id_of(tok).unwrap());
        let rb = b.matrix.row(b.merged_vocab.id_of(tok).unwrap());
        assert_eq!(ra, rb, "{tok}");
    }
}

#[test]
fn export_round_trips_and_counts_lines() {
    let s = setup();
    let res = transplant(&s, &TransplantConfig::default().clone_with_k(3));
    let dir = tempfile::tempdir().unwrap();
    export_result(&res, dir.path()).unwrap();
    let m = load_matrix(dir.path().join(MATRIX_FILE)).unwrap();
    assert!(m.as_slice().iter().zip(res.matrix.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
    let text = fs::read_to_string(dir.path().join(PROVENANCE_FILE)).unwrap();
    assert_eq!(text.lines().count(), res.manifest.appended_tokens);
    assert_eq!(load_provenance(dir.path().join(PROVENANCE_FILE)).unwrap(), res.provenance);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let keys: Vec<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["id", "neighbors", "provenance", "token"]);
    let n = &first["neighbors"][0];
    assert!(n["src"].is_string() && n["sim"].is_number() && n["weight"].is_number());
}

#[test]
fn sha256_matches_published_vector() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("abc");
    fs::write(&p, "abc").unwrap();
    assert_eq!(
        sha256_file(&p).unwrap(),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
    fs::write(&p, "").unwrap();
    assert_eq!(
        sha256_file(&p).unwrap(),
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    );
}

trait WithK {
    fn clone_with_k(&self, k: usize) -> Self;
}

impl WithK for TransplantConfig {
    fn clone_with_k(&self, k: usize) -> Self {
        TransplantConfig { k, ..self.clone() }
    }
}

#[test]
fn single_neighbor_and_equal_similarities() {
    let r1 = [1.0f32, 2.0, 3.0];
    let r2 = [-1.0f32, 0.5, 4.0];
    assert_eq!(weighted_init(&[(0.3, &r1)], 0.1).unwrap(), r1);
    let mean = weighted_init(&[(0.4, &r1), (0.4, &r2)], 0.1).unwrap();
    for j in 0..3 {
        assert!((mean[j] - (r1[j] + r2[j]) / 2.0).abs() < 1e-6);
    }
    let ex = weighted_init(&[(0.9, &r1), (0.7, &r2)], 0.1).unwrap();
    for j in 0..3 {
        let want = 0.880797 * r1[j] as f64 + 0.119203 * r2[j] as f64;
        assert!((ex[j] as f64 - want).abs() < 1e-5);
    }
    assert!(weighted_init(&[], 0.1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn weights_form_a_simplex(sims in prop::collection::vec(-1.0f64..1.0, 1..30), tau in 1e-3f64..100.0) {
        let w = softmax_weights(&sims, tau).unwrap();
        prop_assert!(w.iter().all(|&x| x > 0.0 && x <= 1.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn scaling_keeps_the_argmax(sims in prop::collection::vec(-1.0f64..1.0, 2..20), c in 0.01f64..50.0) {
        let a = softmax_weights(&sims, 0.1).unwrap();
        let scaled: Vec<f64> = sims.iter().map(|s| s * c).collect();
        let b = softmax_weights(&scaled, 0.1).unwrap();
        let argmax = |w: &[f64]| w.iter().enumerate().fold(0, |best, (i, &x)| if x > w[best] { i } else { best });
        let top = sims.iter().cloned().fold(f64::MIN, f64::max);
        prop_assume!(sims.iter().filter(|&&s| s == top).count() == 1);
        prop_assert_eq!(argmax(&a), argmax(&b));
    }

    #[test]
    fn weighted_rows_stay_inside_neighbor_norms(
        rows in prop::collection::vec(prop::collection::vec(-5.0f32..5.0, 4), 1..8),
        tau in 0.01f64..10.0,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let sims: Vec<f64> = rows.iter().map(|_| r.random_range(-1.0..1.0)).collect();
        let pairs: Vec<(f64, &[f32])> = sims.iter().cloned().zip(rows.iter().map(|v| v.as_slice())).collect();
        let out = weighted_init(&pairs, tau).unwrap();
        let norm = |v: &[f32]| v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        let max = rows.iter().map(|v| norm(v)).fold(0.0, f64::max);
        prop_assert!(norm(&out) <= max * (1.0 + 1e-6) + 1e-6);
        for j in 0..4 {
            let lo = rows.iter().map(|v| v[j]).fold(f32::MAX, f32::min);
            let hi = rows.iter().map(|v| v[j]).fold(f32::MIN, f32::max);
            prop_assert!(out[j] >= lo - 1e-5 && out[j] <= hi + 1e-5);
        }
    }
}
