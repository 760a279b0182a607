mod common;

use common::*;
use kvfold::fold::{Chunk, FoldState};
use kvfold::model::argmax;
use kvfold::{chunk_sequence, fold_run, greedy_decode, CachePolicy, Error, KvCache, Model, Rounding};

fn model(cfg: &kvfold::ModelConfig, seed: u64) -> Model<f64> {
    Model::new(cfg.clone(), weights(cfg, seed), Rounding::Native).unwrap()
}

fn fold_logits<T: kvfold::Scalar>(m: &Model<T>, tokens: &[u32], c: usize, policy: CachePolicy) -> Vec<Vec<T>> {
    let chunks = chunk_sequence(tokens, c).unwrap();
    let (_, steps) = fold_run(m, &chunks, policy).unwrap();
    steps.iter().flat_map(|s| rows(&s.logits)).collect()
}

#[test]
fn full_forward_matches_reference_for_head_layouts() {
    for (heads, kv) in [(4, 4), (4, 2), (4, 1)] {
        let cfg = config(2, heads, kv, 4, 40);
        let m = model(&cfg, 11);
        let toks = random_tokens(24, 40, 5);
        let got = rows(&m.forward_chunk(&toks, &[], 0).unwrap().logits);
        let want = reference_causal(&cfg, m.weights(), &toks);
        assert!(max_rel_diff(&got, &want) < 1e-12, "heads {heads} kv {kv}");
    }
}

#[test]
fn kv_fold_matches_reference_for_every_chunking() {
    let cfg = config(2, 4, 2, 8, 50);
    let m = model(&cfg, 3);
    let toks = random_tokens(40, 50, 8);
    let want = reference_causal(&cfg, m.weights(), &toks);
    for c in [1, 3, 7, 8, 16, 40] {
        let got = fold_logits(&m, &toks, c, CachePolicy::FoldAccumulate);
        assert!(max_rel_diff(&got, &want) < 1e-12, "C={c}");
    }
}

#[test]
fn kv_fold_is_bit_identical_to_the_full_forward() {
    let cfg = config(2, 4, 2, 8, 50);
    let m = model(&cfg, 21);
    let toks = random_tokens(48, 50, 2);
    let full = rows(&m.forward_chunk(&toks, &[], 0).unwrap().logits);
    for c in [5, 16, 48] {
        assert_eq!(fold_logits(&m, &toks, c, CachePolicy::FoldAccumulate), full);
    }
}

#[test]
fn f32_fold_is_close_to_f64_reference() {
    let cfg = config(2, 4, 2, 8, 50);
    let w = weights(&cfg, 9);
    let m = Model::<f32>::new(cfg.clone(), w.cast(), Rounding::Native).unwrap();
    let toks = random_tokens(32, 50, 1);
    let want = reference_causal(&cfg, &w, &toks);
    let got = fold_logits(&m, &toks, 8, CachePolicy::FoldAccumulate);
    assert!(max_rel_diff(&got, &want) < 1e-4);
}

#[test]
fn bf16_emulation_stays_finite_and_near() {
    let cfg = config(2, 4, 2, 8, 50);
    let w = weights(&cfg, 9);
    let m = Model::<f32>::new(cfg.clone(), w.cast(), Rounding::Bf16).unwrap();
    let toks = random_tokens(32, 50, 1);
    let got = fold_logits(&m, &toks, 8, CachePolicy::FoldAccumulate);
    assert!(got.iter().flatten().all(|v| v.is_finite() && v.to_bits() & 0xFFFF == 0));
    let want = reference_causal(&cfg, &w, &toks);
    assert!(max_rel_diff(&got, &want) < 0.25);
}

#[test]
fn sink_window_fold_matches_masked_reference() {
    let cfg = config(2, 2, 1, 8, 30);
    let m = model(&cfg, 4);
    let toks = random_tokens(45, 30, 6);
    let (c, sinks, window) = (6, 2, 9);
    let got = fold_logits(&m, &toks, c, CachePolicy::SinkWindow { n_sinks: sinks, window });
    let positions: Vec<usize> = (0..toks.len()).collect();
    // Query i sees its own chunk causally plus what the cache held after the previous chunk.
    let visible = |i: usize, j: usize| {
        let start = i / c * c;
        if j >= start {
            return j <= i;
        }
        let held = simulate_sink_window(&vec![c; start / c], sinks, window);
        held.contains(&j)
    };
    let want = reference_logits(&cfg, m.weights(), &toks, &positions, &visible);
    assert!(max_rel_diff(&got, &want) < 1e-12);
}

#[test]
fn greedy_decode_matches_re_forward() {
    let cfg = config(2, 4, 2, 8, 30);
    let m = model(&cfg, 12);
    let prompt = random_tokens(10, 30, 3);
    let out = m.forward_chunk(&prompt, &[], 0).unwrap();
    let mut cache = KvCache::new(cfg.n_layers, cfg.n_kv_heads, cfg.d_head, CachePolicy::FoldAccumulate).unwrap();
    cache.append(out.new_kv).unwrap();
    let last = out.logits.row(prompt.len() - 1);
    let generated = greedy_decode(&m, &mut cache, last, prompt.len(), 8, None).unwrap();
    assert_eq!(generated.len(), 8);

    let mut seq = prompt.clone();
    for &tok in &generated {
        let want = reference_causal(&cfg, m.weights(), &seq);
        let row = want.last().unwrap();
        let best = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
        assert_eq!(tok as usize, best);
        seq.push(tok);
    }
    assert_eq!(cache.len(), prompt.len() + 7);
}

#[test]
fn greedy_decode_stops_before_stop_token() {
    let cfg = config(1, 2, 2, 4, 20);
    let m = model(&cfg, 1);
    let prompt = random_tokens(6, 20, 0);
    let out = m.forward_chunk(&prompt, &[], 0).unwrap();
    let first = argmax(out.logits.row(5));
    let mut cache = KvCache::new(1, 2, 4, CachePolicy::FoldAccumulate).unwrap();
    cache.append(out.new_kv).unwrap();
    let got = greedy_decode(&m, &mut cache, out.logits.row(5), 6, 5, Some(first)).unwrap();
    assert!(got.is_empty());
}

#[test]
fn single_token_chunks_match_reference() {
    let cfg = config(1, 2, 1, 4, 16);
    let m = model(&cfg, 2);
    let toks = random_tokens(12, 16, 4);
    let got = fold_logits(&m, &toks, 1, CachePolicy::FoldAccumulate);
    assert!(max_rel_diff(&got, &reference_causal(&cfg, m.weights(), &toks)) < 1e-12);
}

#[test]
fn input_errors() {
    let mut cfg = config(1, 2, 1, 4, 16);
    cfg.max_position = 10;
    let m = model(&cfg, 0);
    assert!(matches!(m.forward_chunk(&[], &[], 0), Err(Error::Empty(_))));
    assert!(matches!(m.forward_chunk(&[16], &[], 0), Err(Error::TokenOutOfRange { id: 16, .. })));
    assert!(matches!(m.forward_chunk(&[1; 4], &[], 8), Err(Error::PositionOverflow { end: 12, max: 10 })));
    let out = m.forward_chunk(&[1, 2, 3], &[], 0).unwrap();
    assert!(matches!(m.forward_chunk(&[1], &out.new_kv, 2), Err(Error::PositionOrder { .. })));

    let mut state = FoldState::new(&m, CachePolicy::FoldAccumulate).unwrap();
    let gap = Chunk { tokens: vec![1, 2], start_position: 3 };
    assert!(matches!(state.step(&m, &gap), Err(Error::Discontinuous { expected: 0, got: 3 })));
    let toks = random_tokens(11, 16, 0);
    assert!(matches!(
        fold_run(&m, &chunk_sequence(&toks, 4).unwrap(), CachePolicy::FoldAccumulate),
        Err(Error::PositionOverflow { .. })
    ));
}

#[test]
fn attention_mass_sums_to_query_count() {
    let cfg = config(2, 4, 2, 4, 16);
    let m = model(&cfg, 5);
    let toks = random_tokens(10, 16, 5);
    let first = m.forward_chunk(&toks[..6], &[], 0).unwrap();
    let out = m.forward_chunk_with_mass(&toks[6..], &first.new_kv, 6).unwrap();
    let mass = out.attention_mass.unwrap();
    assert_eq!(mass.len(), 10);
    let total: f64 = mass.iter().sum();
    assert!((total - (cfg.n_layers * cfg.n_heads * 4) as f64).abs() < 1e-9);
}
