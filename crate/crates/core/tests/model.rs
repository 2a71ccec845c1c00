//! Encoder-decoder behaviour: shapes, causality, attention, parameter
//! bookkeeping, and encoder extraction.

use audapt_core::autodiff::{Graph, Tensor};
use audapt_core::checkpoint::{extract_encoder, EncoderCheckpoint};
use audapt_core::data::{BOS, VOCAB_SIZE};
use audapt_core::frontend::{AudioClip, FrontendConfig, MelFrontend, MelSpectrogram};
use audapt_core::model::{
    avg_pool_2x, multi_head_attention, AttentionVars, HiddenStates, ModelConfig, Seq2SeqModel,
};
use audapt_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(d: usize, enc: usize, dec: usize) -> ModelConfig {
    ModelConfig {
        d_model: d,
        n_heads: 2,
        n_enc_layers: enc,
        n_dec_layers: dec,
        ..ModelConfig::toy()
    }
}

fn random_mel(n_mels: usize, frames: usize, seed: u64) -> MelSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MelSpectrogram::new(
        (0..n_mels * frames).map(|_| rng.gen_range(-1.5f32..1.0)).collect(),
        n_mels,
        frames,
    )
    .unwrap()
}

/// Parameter count written out per layer from the architecture description.
fn expected_counts(cfg: &ModelConfig) -> (usize, usize) {
    let d = cfg.d_model;
    let ln = 2 * d;
    // q (w, b), k (w only), v (w, b), out (w, b)
    let attn = 4 * d * d + 3 * d;
    let mlp = d * 4 * d + 4 * d + 4 * d * d + d;
    let stem = (3 * cfg.n_mels * d + d) + (3 * d * d + d);
    let encoder = stem + cfg.n_enc_layers * (ln + attn + ln + mlp) + ln;
    let decoder = cfg.vocab_size * d
        + cfg.max_decoder_len * d
        + cfg.n_dec_layers * (ln + attn + ln + attn + ln + mlp)
        + ln;
    (encoder, decoder)
}

#[test]
fn parameter_count_matches_per_layer_bookkeeping() {
    for cfg in [ModelConfig::toy(), small(16, 2, 2), small(32, 3, 1)] {
        let model = Seq2SeqModel::<f32>::new(cfg.clone(), 0).unwrap();
        let (enc, dec) = expected_counts(&cfg);
        assert_eq!(model.num_params(), enc + dec);
        let ck = extract_encoder(&model);
        assert_eq!(ck.encoder.params().num_params(), enc);
        assert_eq!(ck.encoder.params().num_params(), model.num_params() - dec);
    }
}

#[test]
fn thirty_second_shape_chain() {
    let fe = MelFrontend::new(FrontendConfig::default()).unwrap();
    let samples: Vec<f32> = (0..480_000).map(|i| ((i as f32) * 0.01).sin() * 0.2).collect();
    let mel = fe.process(&AudioClip::new(samples, 16_000).unwrap()).unwrap();
    assert_eq!((mel.n_mels(), mel.n_frames()), (128, 3000));
    let cfg = ModelConfig {
        d_model: 32,
        n_heads: 4,
        n_enc_layers: 1,
        n_dec_layers: 1,
        ..ModelConfig::toy()
    };
    let model = Seq2SeqModel::<f32>::new(cfg, 1).unwrap();
    let h = model.encode(&mel).unwrap();
    assert_eq!((h.n_frames(), h.d_model()), (1500, 32));
    let pooled = avg_pool_2x(&h).unwrap();
    assert_eq!((pooled.n_frames(), pooled.d_model()), (750, 32));
}

#[test]
fn wrong_mel_shape_is_a_shape_error() {
    let model = Seq2SeqModel::<f32>::new(small(16, 1, 1), 0).unwrap();
    assert!(matches!(model.encode(&random_mel(64, 10, 0)), Err(Error::Shape(_))));
    assert!(matches!(model.encode(&random_mel(128, 11, 0)), Err(Error::Shape(_))));
    assert!(matches!(model.encode(&random_mel(128, 3002, 0)), Err(Error::Shape(_))));
}

#[test]
fn decoder_is_causal_at_twenty_random_positions() {
    let model = Seq2SeqModel::<f64>::new(small(16, 1, 2), 3).unwrap();
    let h = model.encode(&random_mel(128, 12, 4)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tokens: Vec<usize> = (0..24).map(|_| rng.gen_range(0..VOCAB_SIZE)).collect();
    let base = model.decode_teacher_forced(&h, &tokens).unwrap();
    let v = VOCAB_SIZE;
    for _ in 0..20 {
        let t = rng.gen_range(0..tokens.len());
        let mut perturbed = tokens.clone();
        perturbed[t] = (perturbed[t] + 1 + rng.gen_range(0..v - 1)) % v;
        let out = model.decode_teacher_forced(&h, &perturbed).unwrap();
        for pos in 0..tokens.len() {
            let a = base.row(pos);
            let b = out.row(pos);
            let same = a == b;
            if pos < t {
                assert!(same, "position {pos} changed after perturbing {t}");
            } else if pos == t {
                assert!(!same, "position {t} ignores its own input token");
            }
        }
    }
}

#[test]
fn bos_only_target_gives_one_row_of_logits() {
    let model = Seq2SeqModel::<f32>::new(small(16, 1, 1), 0).unwrap();
    let h = model.encode(&random_mel(128, 8, 0)).unwrap();
    let logits = model.decode_teacher_forced(&h, &[BOS]).unwrap();
    assert_eq!(logits.shape(), &[1, VOCAB_SIZE]);
}

#[test]
fn overlong_target_is_a_length_error() {
    let model = Seq2SeqModel::<f32>::new(small(16, 1, 1), 0).unwrap();
    let h = model.encode(&random_mel(128, 8, 0)).unwrap();
    let r = model.decode_teacher_forced(&h, &vec![7; 449]);
    assert!(matches!(r, Err(Error::Length { len: 449, max: 448 })));
}

#[test]
fn zero_key_projection_gives_uniform_attention_over_values() {
    // two frames, d = 2, one head; identity value/output projections
    let x = Tensor::new(vec![2, 2], vec![1.0f64, 2.0, -3.0, 0.5]).unwrap();
    let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let w = AttentionVars {
        q_w: g.constant(Tensor::new(vec![2, 2], vec![0.3, -1.2, 2.0, 0.7]).unwrap()),
        q_b: g.constant(Tensor::new(vec![2], vec![0.1, 0.2]).unwrap()),
        k_w: g.constant(Tensor::zeros(&[2, 2])),
        v_w: g.constant(eye.clone()),
        v_b: g.constant(Tensor::zeros(&[2])),
        o_w: g.constant(eye),
        o_b: g.constant(Tensor::zeros(&[2])),
    };
    let y = multi_head_attention(&mut g, &w, xv, xv, 1, false).unwrap();
    // equal keys → weights 1/2 each → every output row is the mean frame
    let expected = [(1.0 - 3.0) / 2.0, (2.0 + 0.5) / 2.0];
    for row in 0..2 {
        for c in 0..2 {
            assert!((g.value(y).row(row)[c] - expected[c]).abs() < 1e-12);
        }
    }
    // causal variant: the first query sees only itself
    let y = multi_head_attention(&mut g, &w, xv, xv, 1, true).unwrap();
    assert_eq!(g.value(y).row(0), x.row(0));
}

#[test]
fn encoder_output_ignores_decoder_weights() {
    let cfg = small(16, 2, 1);
    let a = Seq2SeqModel::<f32>::new(cfg.clone(), 0).unwrap();
    let mut b = a.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (name, t) in b.params_mut().iter_mut() {
        if name.starts_with("dec.") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
    }
    let mel = random_mel(128, 16, 2);
    assert_eq!(a.encode(&mel).unwrap(), b.encode(&mel).unwrap());
    assert_eq!(extract_encoder(&a), extract_encoder(&b));
}

#[test]
fn encoder_checkpoint_round_trips_and_holds_no_decoder_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let model = Seq2SeqModel::<f32>::new(small(16, 2, 2), 9).unwrap();
    let ck = extract_encoder(&model);
    assert!(ck.encoder.params().iter().all(|(n, _)| n.starts_with("enc.")));
    let path = dir.path().join("enc.bin");
    let hash = ck.save(&path).unwrap();
    let loaded = EncoderCheckpoint::load(&path).unwrap();
    assert_eq!(loaded.hash, hash);
    assert_eq!(loaded.encoder, ck.encoder);
    let mel = random_mel(128, 20, 3);
    let h1 = model.encode(&mel).unwrap();
    let h2 = loaded.encoder.encode(&mel).unwrap();
    assert_eq!(h1.tensor().data(), h2.tensor().data());
    let mut wrong = *ck.config();
    wrong.d_model = 32;
    assert!(matches!(
        EncoderCheckpoint::load_expecting(&path, &wrong),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn initialization_is_seed_reproducible() {
    let cfg = small(16, 1, 1);
    let a = Seq2SeqModel::<f32>::new(cfg.clone(), 42).unwrap();
    let b = Seq2SeqModel::<f32>::new(cfg.clone(), 42).unwrap();
    let c = Seq2SeqModel::<f32>::new(cfg, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn mean_pool_commutes_with_pair_averaging() {
    let model = Seq2SeqModel::<f32>::new(small(16, 1, 1), 0).unwrap();
    let h = model.encode(&random_mel(128, 40, 8)).unwrap();
    let direct = h.mean_pool();
    let pooled = avg_pool_2x(&h).unwrap().mean_pool();
    for (a, b) in direct.iter().zip(&pooled) {
        assert!((a - b).abs() < 1e-6);
    }
    let two = HiddenStates::new(Tensor::new(vec![2, 2], vec![1.0f32, 0.0, 0.0, 1.0]).unwrap()).unwrap();
    assert_eq!(two.mean_pool(), vec![0.5, 0.5]);
}
