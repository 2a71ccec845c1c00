//! Shared oracles for the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use audapt_core::autodiff::{Graph, Real, Tensor, Var};
use audapt_core::data::{encode_caption, CorpusRecord, Domain, MixtureSampler, MixtureSpec, PAD};
use audapt_core::frontend::{AudioClip, FrontendConfig, MelFrontend, MelSpectrogram};
use audapt_core::model::{ModelConfig, Seq2SeqModel};
use audapt_core::probe::{FeatureVector, Split};
use audapt_core::synth::{generate_corpus, SynthConfig};
use audapt_core::trainer::{TrainConfig, Trainer, TrainingSet};
use audapt_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-6;

pub type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.5..1.5))
}

/// Reduces an arbitrary-shaped output to a scalar with fixed random weights
/// so every output element contributes a distinct coefficient.
fn scalarize(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    if shape.iter().product::<usize>() == 1 && shape.len() <= 1 {
        return Ok(y);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let r = g.constant(random_tensor(&mut rng, &shape));
    let m = g.mul(y, r)?;
    g.sum(m)
}

fn eval(inputs: &[Tensor<f64>], build: &Build, seed: u64) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let y = build(&mut g, &vars).unwrap();
    let s = scalarize(&mut g, y, seed).unwrap();
    g.value(s).data()[0]
}

/// Max over inputs of `||analytic - numeric||_inf / max(||numeric||_inf, 1e-6)`.
pub fn max_rel_error(inputs: &[Tensor<f64>], build: &Build, seed: u64) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let y = build(&mut g, &vars).unwrap();
    let s = scalarize(&mut g, y, seed).unwrap();
    g.backward(s).unwrap();
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).unwrap().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for j in 0..analytic.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= H;
            numeric[j] = (eval(&plus, build, seed) - eval(&minus, build, seed)) / (2.0 * H);
        }
        let scale = numeric.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-6);
        let diff = analytic
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        worst = worst.max(diff / scale);
    }
    worst
}

pub struct OpCase {
    pub name: &'static str,
    pub shapes: Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Vec<usize>>>,
    pub build: Box<Build>,
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(2..6)
}

pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            shapes: Box::new(|r| {
                let (m, k, n) = (dim(r), dim(r), dim(r));
                vec![vec![m, k], vec![k, n]]
            }),
            build: Box::new(|g, v| g.matmul(v[0], v[1])),
        },
        OpCase {
            name: "matmul_t",
            shapes: Box::new(|r| {
                let (m, k, n) = (dim(r), dim(r), dim(r));
                vec![vec![m, k], vec![n, k]]
            }),
            build: Box::new(|g, v| g.matmul_t(v[0], v[1])),
        },
        OpCase {
            name: "add",
            shapes: Box::new(|r| {
                let s = vec![dim(r), dim(r)];
                vec![s.clone(), s]
            }),
            build: Box::new(|g, v| g.add(v[0], v[1])),
        },
        OpCase {
            name: "mul",
            shapes: Box::new(|r| {
                let s = vec![dim(r), dim(r)];
                vec![s.clone(), s]
            }),
            build: Box::new(|g, v| g.mul(v[0], v[1])),
        },
        OpCase {
            name: "add_row",
            shapes: Box::new(|r| {
                let (m, n) = (dim(r), dim(r));
                vec![vec![m, n], vec![n]]
            }),
            build: Box::new(|g, v| g.add_row(v[0], v[1])),
        },
        OpCase {
            name: "mul_row",
            shapes: Box::new(|r| {
                let (m, n) = (dim(r), dim(r));
                vec![vec![m, n], vec![n]]
            }),
            build: Box::new(|g, v| g.mul_row(v[0], v[1])),
        },
        OpCase {
            name: "scale",
            shapes: Box::new(|r| vec![vec![dim(r), dim(r)]]),
            build: Box::new(|g, v| g.scale(v[0], -0.7)),
        },
        OpCase {
            name: "transpose",
            shapes: Box::new(|r| vec![vec![dim(r), dim(r)]]),
            build: Box::new(|g, v| g.transpose(v[0])),
        },
        OpCase {
            name: "reshape",
            shapes: Box::new(|r| vec![vec![2, dim(r) * 3]]),
            build: Box::new(|g, v| {
                let n = g.shape(v[0])[1];
                g.reshape(v[0], &[n / 3, 6])
            }),
        },
        OpCase {
            name: "slice_rows",
            shapes: Box::new(|r| vec![vec![dim(r) + 2, dim(r)]]),
            build: Box::new(|g, v| g.slice_rows(v[0], 1, 2)),
        },
        OpCase {
            name: "slice_cols",
            shapes: Box::new(|r| vec![vec![dim(r), dim(r) + 2]]),
            build: Box::new(|g, v| g.slice_cols(v[0], 1, 2)),
        },
        OpCase {
            name: "concat_rows",
            shapes: Box::new(|r| {
                let n = dim(r);
                vec![vec![dim(r), n], vec![dim(r), n]]
            }),
            build: Box::new(|g, v| g.concat_rows(&[v[0], v[1], v[0]])),
        },
        OpCase {
            name: "concat_cols",
            shapes: Box::new(|r| {
                let m = dim(r);
                vec![vec![m, dim(r)], vec![m, dim(r)]]
            }),
            build: Box::new(|g, v| g.concat_cols(&[v[0], v[1]])),
        },
        OpCase {
            name: "embedding",
            shapes: Box::new(|r| vec![vec![6, dim(r)]]),
            build: Box::new(|g, v| g.embedding(v[0], &[3, 0, 3, 5, 1])),
        },
        OpCase {
            name: "softmax",
            shapes: Box::new(|r| vec![vec![dim(r), dim(r)]]),
            build: Box::new(|g, v| g.softmax(v[0])),
        },
        OpCase {
            name: "layer_norm",
            shapes: Box::new(|r| vec![vec![dim(r), dim(r) + 1]]),
            build: Box::new(|g, v| g.layer_norm(v[0], 1e-5)),
        },
        OpCase {
            name: "gelu",
            shapes: Box::new(|r| vec![vec![dim(r), dim(r)]]),
            build: Box::new(|g, v| g.gelu(v[0])),
        },
        OpCase {
            name: "mean_axis0",
            shapes: Box::new(|r| vec![vec![dim(r), dim(r)]]),
            build: Box::new(|g, v| g.mean(v[0], 0)),
        },
        OpCase {
            name: "mean_axis1",
            shapes: Box::new(|r| vec![vec![dim(r), dim(r)]]),
            build: Box::new(|g, v| g.mean(v[0], 1)),
        },
        OpCase {
            name: "sum",
            shapes: Box::new(|r| vec![vec![dim(r), dim(r)]]),
            build: Box::new(|g, v| g.sum(v[0])),
        },
        OpCase {
            name: "im2col_stride1",
            shapes: Box::new(|r| vec![vec![dim(r) + 3, dim(r)]]),
            build: Box::new(|g, v| g.im2col(v[0], 3, 1, 1)),
        },
        OpCase {
            name: "im2col_stride2",
            shapes: Box::new(|r| vec![vec![2 * dim(r), dim(r)]]),
            build: Box::new(|g, v| g.im2col(v[0], 3, 2, 1)),
        },
        OpCase {
            name: "cross_entropy",
            shapes: Box::new(|r| vec![vec![4, dim(r) + 2]]),
            build: Box::new(|g, v| g.cross_entropy(v[0], &[0, 1, 99, 2], 99)),
        },
        OpCase {
            name: "shared_input",
            shapes: Box::new(|r| vec![vec![dim(r), dim(r)]]),
            build: Box::new(|g, v| {
                let a = g.mul(v[0], v[0])?;
                let t = g.transpose(v[0])?;
                let b = g.matmul(a, t)?;
                g.softmax(b)
            }),
        },
    ]
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_enc_layers: 2,
        n_dec_layers: 2,
        vocab_size: audapt_core::data::VOCAB_SIZE,
        max_decoder_len: 16,
        max_encoder_frames: 8,
        n_mels: 6,
    }
}

/// Finite-difference check of the captioning loss over (up to `max_coords`
/// evenly spaced) coordinates of every parameter tensor. Returns the worst
/// per-tensor relative error.
pub fn full_model_rel_error(seed: u64, max_coords: usize) -> f64 {
    let cfg = tiny_config();
    let mut model = Seq2SeqModel::<f64>::new(cfg.clone(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    // Init-scale weights make attention nearly uniform and leave some
    // gradients at the finite-difference noise floor; widen everything so
    // each path carries signal.
    for (_, t) in model.params_mut().iter_mut() {
        for x in t.data_mut() {
            *x = *x * 6.0 + rng.gen_range(-0.1..0.1);
        }
    }
    let frames = 8;
    let mel = MelSpectrogram::new(
        (0..cfg.n_mels * frames).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        cfg.n_mels,
        frames,
    )
    .unwrap();
    let mut tokens = encode_caption("a b", Domain::Sound, true).into_ids();
    tokens.push(PAD);
    let (_, grads) = model.loss_and_grads(&mel, &tokens, PAD).unwrap();
    let mut worst = 0.0f64;
    let names: Vec<String> = model.params().iter().map(|(n, _)| n.to_string()).collect();
    for (k, name) in names.iter().enumerate() {
        let n = model.params().get(name).unwrap().numel();
        let stride = n.div_ceil(max_coords).max(1);
        let coords: Vec<usize> = (0..n).step_by(stride).collect();
        let mut num_max = 0.0f64;
        let mut diff_max = 0.0f64;
        for j in coords {
            let mut plus = model.clone();
            plus.params_mut().get_mut(name).unwrap().data_mut()[j] += H;
            let mut minus = model.clone();
            minus.params_mut().get_mut(name).unwrap().data_mut()[j] -= H;
            let num = (plus.loss(&mel, &tokens, PAD).unwrap() - minus.loss(&mel, &tokens, PAD).unwrap())
                / (2.0 * H);
            num_max = num_max.max(num.abs());
            diff_max = diff_max.max((num - grads[k][j]).abs());
        }
        worst = worst.max(diff_max / num_max.max(1e-6));
    }
    worst
}


/// Every op over ten seeds; returns (worst error, failures).
pub fn all_ops_rel_error() -> (f64, Vec<String>) {
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for case in op_cases() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + 1);
            let inputs: Vec<Tensor<f64>> = (case.shapes)(&mut rng)
                .iter()
                .map(|s| random_tensor(&mut rng, s))
                .collect();
            let err = max_rel_error(&inputs, case.build.as_ref(), seed);
            worst = worst.max(err);
            if !(err < 1e-4) {
                failures.push(format!("{} seed {seed}: {err:.3e}", case.name));
            }
        }
    }
    (worst, failures)
}

/// Two Gaussian classes with means ±3 on axis 0 and σ = 0.5 in 4 dims;
/// 200 train and 100 test vectors.
pub fn gaussian_blobs(seed: u64) -> Vec<FeatureVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..300)
        .map(|i| {
            let label = i % 2;
            let mean = if label == 0 { -3.0 } else { 3.0 };
            let values = (0..4)
                .map(|k| {
                    let z: f64 = rng.sample(StandardNormal);
                    if k == 0 { mean + 0.5 * z } else { 0.5 * z }
                })
                .collect();
            FeatureVector {
                values,
                label,
                split: if i < 200 { Split::Train } else { Split::Test },
            }
        })
        .collect()
}

/// Random 16-dim features with labels drawn uniformly from 5 classes,
/// independent of the features; 1000 train and 1000 test vectors.
pub fn shuffled_label_features(seed: u64) -> Vec<FeatureVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..2000)
        .map(|i| FeatureVector {
            values: (0..16).map(|_| rng.sample(StandardNormal)).collect(),
            label: rng.gen_range(0..5),
            split: if i < 1000 { Split::Train } else { Split::Test },
        })
        .collect()
}

/// One-second window: 100 mel frames, 50 encoder frames.
pub fn short_frontend() -> MelFrontend {
    MelFrontend::new(FrontendConfig {
        window_s: 1.0,
        ..FrontendConfig::default()
    })
    .unwrap()
}

/// Synthetic mixed-domain corpus of `n` clips (0.4 to 1 s each), kept in
/// memory and featurized with the one-second frontend.
pub fn synthetic_training_set(n: usize, seed: u64) -> TrainingSet {
    let synth = SynthConfig {
        min_dur_s: 0.4,
        max_dur_s: 1.0,
        ..SynthConfig::default()
    };
    let mut clips = generate_corpus(&synth, &Domain::ALL, n.div_ceil(3), seed);
    clips.truncate(n);
    let fe = short_frontend();
    let mels = clips.iter().map(|c| fe.process(&c.clip).unwrap()).collect();
    let records = clips
        .iter()
        .enumerate()
        .map(|(i, c)| CorpusRecord {
            audio_path: format!("clip_{i}.wav"),
            text: c.text.clone(),
            domain: c.domain,
        })
        .collect();
    TrainingSet::from_parts(records, mels, true).unwrap()
}

/// Small captioning model sized for the one-second frontend.
pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        d_model: 32,
        n_heads: 2,
        n_enc_layers: 2,
        n_dec_layers: 1,
        max_encoder_frames: 50,
        ..ModelConfig::toy()
    }
}

pub fn small_train_config(max_steps: usize) -> TrainConfig {
    TrainConfig {
        peak_lr: 1e-3,
        max_steps,
        micro_batch: 8,
        accum_steps: 1,
        ..TrainConfig::default()
    }
}

pub fn trainer<T: Real>(
    seed: u64,
    cfg: TrainConfig,
    set: &Arc<TrainingSet>,
    eval: Option<&Arc<TrainingSet>>,
) -> Trainer<T> {
    let model = Seq2SeqModel::<T>::new(small_model_config(), seed).unwrap();
    Trainer::new(model, cfg, MixtureSpec::default(), set.clone(), eval.cloned()).unwrap()
}

/// Largest absolute parameter difference between micro-batch `2b` with no
/// accumulation and micro-batch `b` accumulated twice, after `steps` f64
/// optimizer steps from the same init and batch order.
pub fn accumulation_max_diff(set: &Arc<TrainingSet>, b: usize, steps: usize) -> f64 {
    let run = |micro_batch, accum_steps| {
        let cfg = TrainConfig {
            micro_batch,
            accum_steps,
            ..small_train_config(steps)
        };
        let mut t = trainer::<f64>(3, cfg, set, None);
        t.run_until(steps, |_| {}).unwrap();
        t.into_model()
    };
    let a = run(2 * b, 1);
    let c = run(b, 2);
    a.params()
        .iter()
        .zip(c.params().iter())
        .flat_map(|((_, x), (_, y))| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Slaney mel scale written out from its definition: linear at 200/3 Hz
/// per mel below 1 kHz, logarithmic with step ln(6.4)/27 above.
pub fn oracle_hz_to_mel(f: f64) -> f64 {
    if f < 1000.0 {
        3.0 * f / 200.0
    } else {
        15.0 + 27.0 * (f / 1000.0).ln() / 6.4f64.ln()
    }
}

pub fn oracle_mel_to_hz(m: f64) -> f64 {
    if m < 15.0 {
        200.0 * m / 3.0
    } else {
        1000.0 * (6.4f64.ln() * (m - 15.0) / 27.0).exp()
    }
}

/// Centre frequencies of the 128 filters: 130 points evenly spaced in mel
/// between 0 and Nyquist, minus the two outer edges.
pub fn oracle_centres() -> Vec<f64> {
    let top = oracle_hz_to_mel(8000.0);
    (1..=128).map(|i| oracle_mel_to_hz(top * i as f64 / 129.0)).collect()
}

/// `amp * sin(2π f t)` sampled at 16 kHz.
pub fn sine_clip(freq: f64, amp: f64, seconds: f64) -> AudioClip {
    let n = (seconds * 16_000.0) as usize;
    let s = (0..n)
        .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin()) as f32)
        .collect();
    AudioClip::new(s, 16_000).unwrap()
}

/// Shift over the cells that survive the normalization clamp (within eight
/// decades of the peak); lower cells are dominated by f32 rounding noise.
pub fn above_floor_shift(gain: f32) -> (usize, f64, f64) {
    let fe = MelFrontend::new(FrontendConfig {
        window_s: 2.0,
        ..FrontendConfig::default()
    })
    .unwrap();
    let base = sine_clip(700.0, 0.05, 2.0);
    let scaled = AudioClip::new(base.samples().iter().map(|s| s * gain).collect(), 16_000).unwrap();
    let a = fe.log_mel_unnormalized(&base).unwrap();
    let b = fe.log_mel_unnormalized(&scaled).unwrap();
    let peak = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut n = 0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in a.iter().zip(&b) {
        if *x > peak - 8.0 {
            n += 1;
            lo = lo.min(y - x);
            hi = hi.max(y - x);
        }
    }
    (n, lo, hi)
}

/// Empirical domain fractions over `n` single-slot draws.
pub fn mixture_fractions(spec: MixtureSpec, n: usize, seed: u64) -> [f64; 3] {
    let manifest: Vec<CorpusRecord> = Domain::ALL
        .iter()
        .map(|&d| CorpusRecord {
            audio_path: "a.wav".into(),
            text: "x".into(),
            domain: d,
        })
        .collect();
    let sampler = MixtureSampler::new(&manifest, spec).unwrap();
    let mut counts = [0usize; 3];
    for i in sampler.sample_indices(n, seed) {
        counts[manifest[i].domain.index()] += 1;
    }
    counts.map(|c| c as f64 / n as f64)
}

