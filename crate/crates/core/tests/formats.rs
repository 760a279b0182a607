mod common;

use common::{config, random_tokens, weights};
use kvfold::fold::{decode_state, encode_state, load_state, save_state};
use kvfold::model::file::{decode_weights, encode_weights, load_weights, save_weights, validate_weights};
use kvfold::{chunk_sequence, fold_run, CachePolicy, Error, FoldState, Model, ModelConfig, QuantBits, Rounding};
use proptest::prelude::*;

/// Writes a KVFW file field by field, independent of the engine's writer.
struct Builder {
    header: Vec<u8>,
    entries: Vec<(String, u8, Vec<u64>, Vec<u8>)>,
    gap: usize,
}

impl Builder {
    fn new(h: [u32; 8], rope_theta: f32, norm_eps: f32) -> Self {
        let mut header = b"KVFW".to_vec();
        header.extend_from_slice(&1u32.to_le_bytes());
        for v in h {
            header.extend_from_slice(&v.to_le_bytes());
        }
        header.extend_from_slice(&rope_theta.to_le_bytes());
        header.extend_from_slice(&norm_eps.to_le_bytes());
        Self { header, entries: vec![], gap: 0 }
    }

    fn f32s(mut self, name: &str, shape: &[u64], f: impl Fn(usize) -> f32) -> Self {
        let n: u64 = shape.iter().product();
        let bytes = (0..n as usize).flat_map(|i| f(i).to_le_bytes()).collect();
        self.entries.push((name.into(), 0, shape.to_vec(), bytes));
        self
    }

    fn build(self) -> Vec<u8> {
        let mut out = self.header;
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let dir: usize = self.entries.iter().map(|(n, _, s, _)| 4 + n.len() + 1 + 1 + 8 * s.len() + 8).sum();
        let mut offset = out.len() + dir + self.gap;
        for (name, dtype, shape, bytes) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(*dtype);
            out.push(shape.len() as u8);
            for d in shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(&(offset as u64).to_le_bytes());
            offset += bytes.len() + self.gap;
        }
        for (_, _, _, bytes) in &self.entries {
            out.extend(std::iter::repeat_n(0xEE, self.gap));
            out.extend_from_slice(bytes);
        }
        out
    }
}

/// One layer, 2 heads over 1 kv head, d_head 2, d_ff 3, vocab 5.
fn toy(gap: usize, skip: Option<&str>) -> Vec<u8> {
    let mut b = Builder::new([1, 2, 1, 4, 2, 3, 5, 32], 500.0, 1e-6);
    b.gap = gap;
    let tensors: [(&str, &[u64]); 12] = [
        ("lm_head", &[4, 5]),
        ("layer.0.mlp.w_down", &[3, 4]),
        ("token_embedding", &[5, 4]),
        ("layer.0.attn_norm", &[4]),
        ("layer.0.attn.wq", &[4, 4]),
        ("layer.0.attn.wk", &[4, 2]),
        ("layer.0.attn.wv", &[4, 2]),
        ("layer.0.attn.wo", &[4, 4]),
        ("layer.0.mlp_norm", &[4]),
        ("layer.0.mlp.w_gate", &[4, 3]),
        ("layer.0.mlp.w_up", &[4, 3]),
        ("final_norm", &[4]),
    ];
    for (k, (name, shape)) in tensors.iter().enumerate() {
        if Some(*name) == skip {
            continue;
        }
        b = b.f32s(name, shape, move |i| (k * 100 + i) as f32 * 0.01);
    }
    b.build()
}

#[test]
fn hand_built_file_decodes_to_known_values() {
    for gap in [0, 3] {
        let (cfg, w) = decode_weights::<f32>(&toy(gap, None)).unwrap();
        assert_eq!(
            (cfg.n_layers, cfg.n_heads, cfg.n_kv_heads, cfg.d_model, cfg.d_head, cfg.d_ff, cfg.vocab_size),
            (1, 2, 1, 4, 2, 3, 5)
        );
        assert_eq!(cfg.max_position, 32);
        assert_eq!(cfg.rope_theta, 500.0);
        assert_eq!(cfg.norm_eps, 1e-6f32 as f64);
        assert_eq!(w.lm_head.data()[7], 7.0 * 0.01);
        assert_eq!(w.token_embedding.data()[0], 200.0 * 0.01);
        assert_eq!(w.layers[0].wk.shape(), &[4, 2]);
        assert_eq!(w.layers[0].wk.data()[3], 503.0 * 0.01);
        assert_eq!(w.final_norm.data()[2], 1102.0 * 0.01);
    }
}

#[test]
fn validator_rejects_bad_files() {
    assert!(validate_weights(&toy(0, None)).is_ok());
    assert!(matches!(validate_weights(&toy(0, Some("layer.0.attn.wv"))), Err(Error::Format(_))));

    let mut bytes = toy(0, None);
    bytes[0] = b'X';
    assert!(validate_weights(&bytes).is_err());

    let mut bytes = toy(0, None);
    bytes[4] = 2;
    assert!(validate_weights(&bytes).is_err());

    let bytes = toy(0, None);
    assert!(validate_weights(&bytes[..bytes.len() - 1]).is_err());

    let wrong_shape = Builder::new([1, 2, 1, 4, 2, 3, 5, 32], 500.0, 1e-6).f32s("lm_head", &[5, 4], |_| 0.0).build();
    assert!(matches!(validate_weights(&wrong_shape), Err(Error::Shape(_))));

    let mut b = Builder::new([1, 2, 1, 4, 2, 3, 5, 32], 500.0, 1e-6).f32s("final_norm", &[4], |_| 1.0);
    b.entries[0].1 = 1;
    b.entries[0].3.extend([0u8; 16]);
    assert!(validate_weights(&b.build()).is_err());

    let unknown = Builder::new([1, 2, 1, 4, 2, 3, 5, 32], 500.0, 1e-6).f32s("layer.1.attn_norm", &[4], |_| 1.0).build();
    assert!(validate_weights(&unknown).is_err());

    let bad_config = Builder::new([1, 3, 1, 4, 2, 3, 5, 32], 500.0, 1e-6).build();
    assert!(validate_weights(&bad_config).is_err());
}

#[test]
fn duplicate_and_overlapping_tensors_are_rejected() {
    let dup = Builder::new([1, 2, 1, 4, 2, 3, 5, 32], 500.0, 1e-6)
        .f32s("final_norm", &[4], |_| 1.0)
        .f32s("final_norm", &[4], |_| 1.0)
        .build();
    assert!(validate_weights(&dup).is_err());

    let mut bytes = Builder::new([1, 2, 1, 4, 2, 3, 5, 32], 500.0, 1e-6)
        .f32s("final_norm", &[4], |_| 1.0)
        .f32s("layer.0.attn_norm", &[4], |_| 1.0)
        .build();
    // Point the second payload at the first.
    let header = 4 + 4 + 32 + 4 + 4 + 4;
    let first_entry = 4 + "final_norm".len() + 2 + 8 + 8;
    let second_offset_at = header + first_entry + 4 + "layer.0.attn_norm".len() + 2 + 8;
    let first_offset = bytes[header + first_entry - 8..header + first_entry].to_vec();
    bytes[second_offset_at..second_offset_at + 8].copy_from_slice(&first_offset);
    assert!(matches!(validate_weights(&bytes), Err(Error::Format(m)) if m.contains("overlap")));
}

#[test]
fn engine_round_trip_and_file_model_logits() {
    let cfg = config(2, 4, 2, 4, 30);
    let w = weights(&cfg, 7).cast::<f32>();
    let bytes = encode_weights(&cfg, &w).unwrap();
    let (back_cfg, back) = decode_weights::<f32>(&bytes).unwrap();
    assert_eq!(back, w);
    assert_eq!(back_cfg.n_layers, cfg.n_layers);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.kvfw");
    save_weights(&path, &cfg, &w).unwrap();
    let (file_cfg, file_w) = load_weights::<f32>(&path).unwrap();
    let toks = random_tokens(12, 30, 1);
    let a = Model::new(cfg.clone(), w, Rounding::Native).unwrap().forward_chunk(&toks, &[], 0).unwrap();
    let b = Model::new(file_cfg, file_w, Rounding::Native).unwrap().forward_chunk(&toks, &[], 0).unwrap();
    assert_eq!(a.logits, b.logits);
    assert!(load_weights::<f32>(dir.path().join("missing.kvfw")).is_err());
}

#[test]
fn f64_weights_are_stored_as_f32() {
    let cfg = config(1, 2, 1, 4, 10);
    let w = weights(&cfg, 3);
    let (_, back) = decode_weights::<f64>(&encode_weights(&cfg, &w).unwrap()).unwrap();
    for (x, y) in back.lm_head.data().iter().zip(w.lm_head.data()) {
        assert_eq!(*x, *y as f32 as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn corrupted_files_never_panic(idx in 0usize..2000, byte in any::<u8>()) {
        let mut bytes = toy(0, None);
        let i = idx % bytes.len();
        bytes[i] = byte;
        let _ = decode_weights::<f32>(&bytes);
    }
}

fn policies() -> [CachePolicy; 5] {
    [
        CachePolicy::FoldAccumulate,
        CachePolicy::SinkWindow { n_sinks: 2, window: 11 },
        CachePolicy::QuantRoundTrip { bits: QuantBits::Int4 },
        CachePolicy::UniformDecay { gamma: 0.95 },
        CachePolicy::AttentionPrune { keep: 9 },
    ]
}

fn resume_everywhere<T: kvfold::Scalar>(cfg: &ModelConfig, rounding: Rounding) {
    let m = Model::<T>::new(cfg.clone(), weights(cfg, 1).cast(), rounding).unwrap();
    let toks = random_tokens(40, cfg.vocab_size, 2);
    let chunks = chunk_sequence(&toks, 6).unwrap();
    for policy in policies() {
        let (final_state, steps) = fold_run(&m, &chunks, policy).unwrap();
        for split in 0..=chunks.len() {
            let mut state = FoldState::new(&m, policy).unwrap();
            state.run(&m, &chunks[..split]).unwrap();
            let mut resumed = decode_state::<T>(&encode_state(&state)).unwrap();
            assert_eq!(resumed, state);
            let rest = resumed.run(&m, &chunks[split..]).unwrap();
            assert_eq!(resumed, final_state, "{policy} split {split}");
            for (a, b) in rest.iter().zip(&steps[split..]) {
                assert_eq!(a.logits, b.logits);
            }
        }
    }
}

#[test]
fn resume_is_bit_identical_at_every_boundary() {
    let cfg = config(2, 4, 2, 4, 24);
    resume_everywhere::<f64>(&cfg, Rounding::Native);
    resume_everywhere::<f32>(&cfg, Rounding::Native);
    resume_everywhere::<f32>(&cfg, Rounding::Bf16);
}

#[test]
fn checkpoint_files() {
    let cfg = config(1, 2, 1, 4, 16);
    let m = Model::<f64>::new(cfg.clone(), weights(&cfg, 0), Rounding::Native).unwrap();
    let chunks = chunk_sequence(&random_tokens(20, 16, 0), 8).unwrap();
    let (state, _) = fold_run(&m, &chunks, CachePolicy::SinkWindow { n_sinks: 1, window: 5 }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.kvfs");
    save_state(&path, &state).unwrap();
    assert_eq!(load_state::<f64>(&path).unwrap(), state);
    assert_eq!(state.depth(), Some(2));
    assert_eq!(state.next_position(), 20);

    let bytes = encode_state(&state);
    assert!(decode_state::<f64>(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'Z';
    assert!(decode_state::<f64>(&bad).is_err());
    assert!(decode_state::<f32>(&bytes).is_err());
    let fresh = FoldState::new(&m, CachePolicy::FoldAccumulate).unwrap();
    let back = decode_state::<f64>(&encode_state(&fresh)).unwrap();
    assert_eq!(back.depth(), None);
    assert!(back.cache.is_empty());
}
