//! Whisper-shaped encoder-decoder transformer.
//!
//! The encoder is a two-convolution stem (kernel 3, strides 1 and 2, GELU)
//! followed by fixed sinusoidal positions and pre-norm transformer blocks.
//! The decoder has learned positions, causal self-attention, cross-attention
//! over the encoder states, and an output projection tied to its token
//! embedding. Every forward pass is built on a fresh [`Graph`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::frontend::MelSpectrogram;
use crate::params::{Bound, ParamStore};

pub const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
const MASK_VALUE: f64 = -1e9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub vocab_size: usize,
    pub max_decoder_len: usize,
    pub max_encoder_frames: usize,
    pub n_mels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// Desk-scale default.
    pub fn toy() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 4,
            n_dec_layers: 2,
            vocab_size: crate::data::VOCAB_SIZE,
            max_decoder_len: 448,
            max_encoder_frames: 1500,
            n_mels: 128,
        }
    }

    /// Shape of whisper-large-v3. Documented for reference; far too large to
    /// instantiate with this engine.
    pub fn whisper_large_v3() -> Self {
        Self {
            d_model: 1280,
            n_heads: 20,
            n_enc_layers: 32,
            n_dec_layers: 32,
            vocab_size: 51_866,
            max_decoder_len: 448,
            max_encoder_frames: 1500,
            n_mels: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model: {m}")));
        for (name, v) in [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("vocab_size", self.vocab_size),
            ("max_decoder_len", self.max_decoder_len),
            ("max_encoder_frames", self.max_encoder_frames),
            ("n_mels", self.n_mels),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "n_heads {} does not divide d_model {}",
                self.n_heads, self.d_model
            ));
        }
        Ok(())
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_enc_layers: self.n_enc_layers,
            max_encoder_frames: self.max_encoder_frames,
            n_mels: self.n_mels,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// The subset of [`ModelConfig`] an encoder checkpoint carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub max_encoder_frames: usize,
    pub n_mels: usize,
}

/// Encoder output, `[n_frames, d_model]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenStates<T>(Tensor<T>);

impl<T: Real> HiddenStates<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        if t.shape().len() != 2 {
            return Err(Error::shape(format!(
                "hidden states must be [frames, d], got {:?}",
                t.shape()
            )));
        }
        Ok(Self(t))
    }

    pub fn n_frames(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn d_model(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn frame(&self, i: usize) -> &[T] {
        self.0.row(i)
    }

    /// Arithmetic mean over the time axis.
    pub fn mean_pool(&self) -> Vec<T> {
        let d = self.d_model();
        let mut acc = vec![0.0f64; d];
        for row in self.0.data().chunks(d) {
            for (a, x) in acc.iter_mut().zip(row) {
                *a += x.to_f64().unwrap();
            }
        }
        let n = self.n_frames() as f64;
        acc.into_iter().map(|a| T::lit(a / n)).collect()
    }
}

/// Halves the frame rate by averaging frames `2i` and `2i + 1`. With an odd
/// frame count the final frame is dropped.
pub fn avg_pool_2x<T: Real>(hidden: &HiddenStates<T>) -> Result<HiddenStates<T>> {
    let n = hidden.n_frames() / 2;
    if n == 0 {
        return Err(Error::shape("avg_pool_2x needs at least two frames"));
    }
    let d = hidden.d_model();
    let half = T::lit(0.5);
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let (a, b) = (hidden.frame(2 * i), hidden.frame(2 * i + 1));
        data.extend(a.iter().zip(b).map(|(&x, &y)| (x + y) * half));
    }
    HiddenStates::new(Tensor::new(vec![n, d], data)?)
}

/// Whisper-style sinusoid table `[length, channels]`: sines in the first
/// half of the channels, cosines in the second.
pub fn sinusoids(length: usize, channels: usize) -> Vec<f64> {
    let half = channels / 2;
    let inc = if half > 1 {
        10_000f64.ln() / (half - 1) as f64
    } else {
        0.0
    };
    let mut out = vec![0.0; length * channels];
    for t in 0..length {
        for i in 0..half {
            let x = t as f64 * (-inc * i as f64).exp();
            out[t * channels + i] = x.sin();
            out[t * channels + half + i] = x.cos();
        }
    }
    out
}

/// Graph nodes of one multi-head attention layer.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub q_w: Var,
    pub q_b: Var,
    pub k_w: Var,
    pub v_w: Var,
    pub v_b: Var,
    pub o_w: Var,
    pub o_b: Var,
}

impl AttentionVars {
    fn bind(p: &Bound, prefix: &str) -> Self {
        Self {
            q_w: p.var(&format!("{prefix}.q.w")),
            q_b: p.var(&format!("{prefix}.q.b")),
            k_w: p.var(&format!("{prefix}.k.w")),
            v_w: p.var(&format!("{prefix}.v.w")),
            v_b: p.var(&format!("{prefix}.v.b")),
            o_w: p.var(&format!("{prefix}.o.w")),
            o_b: p.var(&format!("{prefix}.o.b")),
        }
    }
}

/// Scaled dot-product attention of queries from `x` over keys/values from
/// `kv`. The key projection has no bias.
pub fn multi_head_attention<T: Real>(
    g: &mut Graph<T>,
    w: &AttentionVars,
    x: Var,
    kv: Var,
    n_heads: usize,
    causal: bool,
) -> Result<Var> {
    let q = g.matmul(x, w.q_w)?;
    let q = g.add_row(q, w.q_b)?;
    let k = g.matmul(kv, w.k_w)?;
    let v = g.matmul(kv, w.v_w)?;
    let v = g.add_row(v, w.v_b)?;
    let d = g.shape(q)[1];
    if d % n_heads != 0 {
        return Err(Error::shape(format!("{n_heads} heads do not divide {d}")));
    }
    let dh = d / n_heads;
    let (tq, tk) = (g.shape(q)[0], g.shape(k)[0]);
    let mask = if causal {
        Some(g.constant(Tensor::from_fn(&[tq, tk], |i| {
            if i % tk > i / tk {
                T::lit(MASK_VALUE)
            } else {
                T::zero()
            }
        })))
    } else {
        None
    };
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = if n_heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, dh)?,
                g.slice_cols(k, h * dh, dh)?,
                g.slice_cols(v, h * dh, dh)?,
            )
        };
        let s = g.matmul_t(qh, kh)?;
        let mut s = g.scale(s, scale)?;
        if let Some(m) = mask {
            s = g.add(s, m)?;
        }
        let a = g.softmax(s)?;
        heads.push(g.matmul(a, vh)?);
    }
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    let o = g.matmul(cat, w.o_w)?;
    g.add_row(o, w.o_b)
}

fn norm<T: Real>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let n = g.layer_norm(x, LN_EPS)?;
    let n = g.mul_row(n, p.var(&format!("{prefix}.g")))?;
    g.add_row(n, p.var(&format!("{prefix}.b")))
}

fn linear<T: Real>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let y = g.matmul(x, p.var(&format!("{prefix}.w")))?;
    g.add_row(y, p.var(&format!("{prefix}.b")))
}

fn mlp<T: Real>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(g, p, &format!("{prefix}.fc1"), x)?;
    let h = g.gelu(h)?;
    linear(g, p, &format!("{prefix}.fc2"), h)
}

/// Runs the encoder on a time-major mel node `[frames, n_mels]`.
pub fn encoder_forward<T: Real>(
    g: &mut Graph<T>,
    cfg: &EncoderConfig,
    p: &Bound,
    mel_tm: Var,
) -> Result<Var> {
    let x = g.im2col(mel_tm, 3, 1, 1)?;
    let x = linear(g, p, "enc.conv1", x)?;
    let x = g.gelu(x)?;
    let x = g.im2col(x, 3, 2, 1)?;
    let x = linear(g, p, "enc.conv2", x)?;
    let x = g.gelu(x)?;
    let frames = g.shape(x)[0];
    if frames > cfg.max_encoder_frames {
        return Err(Error::shape(format!(
            "{frames} encoder frames exceed the positional table of {}",
            cfg.max_encoder_frames
        )));
    }
    let pos = sinusoids(frames, cfg.d_model);
    let pos = g.constant(Tensor::new(
        vec![frames, cfg.d_model],
        pos.into_iter().map(T::lit).collect(),
    )?);
    let mut x = g.add(x, pos)?;
    for l in 0..cfg.n_enc_layers {
        let pre = format!("enc.blocks.{l}");
        let h = norm(g, p, &format!("{pre}.attn_ln"), x)?;
        let w = AttentionVars::bind(p, &format!("{pre}.attn"));
        let h = multi_head_attention(g, &w, h, h, cfg.n_heads, false)?;
        x = g.add(x, h)?;
        let h = norm(g, p, &format!("{pre}.mlp_ln"), x)?;
        let h = mlp(g, p, &format!("{pre}.mlp"), h)?;
        x = g.add(x, h)?;
    }
    norm(g, p, "enc.ln_post", x)
}

/// Runs the decoder with teacher forcing; returns logits `[T, vocab]`.
pub fn decoder_forward<T: Real>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    p: &Bound,
    hidden: Var,
    tokens: &[usize],
) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::shape("decoder input has no tokens"));
    }
    if tokens.len() > cfg.max_decoder_len {
        return Err(Error::Length {
            len: tokens.len(),
            max: cfg.max_decoder_len,
        });
    }
    let emb = p.var("dec.tok_emb");
    let x = g.embedding(emb, tokens)?;
    let pos = g.slice_rows(p.var("dec.pos_emb"), 0, tokens.len())?;
    let mut x = g.add(x, pos)?;
    for l in 0..cfg.n_dec_layers {
        let pre = format!("dec.blocks.{l}");
        let h = norm(g, p, &format!("{pre}.attn_ln"), x)?;
        let w = AttentionVars::bind(p, &format!("{pre}.attn"));
        let h = multi_head_attention(g, &w, h, h, cfg.n_heads, true)?;
        x = g.add(x, h)?;
        let h = norm(g, p, &format!("{pre}.cross_ln"), x)?;
        let w = AttentionVars::bind(p, &format!("{pre}.cross"));
        let h = multi_head_attention(g, &w, h, hidden, cfg.n_heads, false)?;
        x = g.add(x, h)?;
        let h = norm(g, p, &format!("{pre}.mlp_ln"), x)?;
        let h = mlp(g, p, &format!("{pre}.mlp"), h)?;
        x = g.add(x, h)?;
    }
    let x = norm(g, p, "dec.ln", x)?;
    g.matmul_t(x, emb)
}

/// Parameter names and shapes in initialization order.
pub fn encoder_layout(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut out = vec![
        ("enc.conv1.w".to_string(), vec![3 * cfg.n_mels, d]),
        ("enc.conv1.b".to_string(), vec![d]),
        ("enc.conv2.w".to_string(), vec![3 * d, d]),
        ("enc.conv2.b".to_string(), vec![d]),
    ];
    for l in 0..cfg.n_enc_layers {
        let pre = format!("enc.blocks.{l}");
        push_norm(&mut out, &format!("{pre}.attn_ln"), d);
        push_attention(&mut out, &format!("{pre}.attn"), d);
        push_norm(&mut out, &format!("{pre}.mlp_ln"), d);
        push_mlp(&mut out, &format!("{pre}.mlp"), d);
    }
    push_norm(&mut out, "enc.ln_post", d);
    out
}

pub fn decoder_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut out = vec![
        ("dec.tok_emb".to_string(), vec![cfg.vocab_size, d]),
        ("dec.pos_emb".to_string(), vec![cfg.max_decoder_len, d]),
    ];
    for l in 0..cfg.n_dec_layers {
        let pre = format!("dec.blocks.{l}");
        push_norm(&mut out, &format!("{pre}.attn_ln"), d);
        push_attention(&mut out, &format!("{pre}.attn"), d);
        push_norm(&mut out, &format!("{pre}.cross_ln"), d);
        push_attention(&mut out, &format!("{pre}.cross"), d);
        push_norm(&mut out, &format!("{pre}.mlp_ln"), d);
        push_mlp(&mut out, &format!("{pre}.mlp"), d);
    }
    push_norm(&mut out, "dec.ln", d);
    out
}

fn push_norm(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, d: usize) {
    out.push((format!("{prefix}.g"), vec![d]));
    out.push((format!("{prefix}.b"), vec![d]));
}

fn push_attention(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, d: usize) {
    out.push((format!("{prefix}.q.w"), vec![d, d]));
    out.push((format!("{prefix}.q.b"), vec![d]));
    out.push((format!("{prefix}.k.w"), vec![d, d]));
    out.push((format!("{prefix}.v.w"), vec![d, d]));
    out.push((format!("{prefix}.v.b"), vec![d]));
    out.push((format!("{prefix}.o.w"), vec![d, d]));
    out.push((format!("{prefix}.o.b"), vec![d]));
}

fn push_mlp(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, d: usize) {
    out.push((format!("{prefix}.fc1.w"), vec![d, 4 * d]));
    out.push((format!("{prefix}.fc1.b"), vec![4 * d]));
    out.push((format!("{prefix}.fc2.w"), vec![4 * d, d]));
    out.push((format!("{prefix}.fc2.b"), vec![d]));
}

/// Biases and norm parameters: initialized to constants and exempt from
/// weight decay.
pub fn is_bias_or_norm(name: &str) -> bool {
    name.ends_with(".b") || name.ends_with(".g")
}

fn init_params<T: Real>(layout: &[(String, Vec<usize>)], rng: &mut ChaCha8Rng) -> ParamStore<T> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut store = ParamStore::new();
    for (name, shape) in layout {
        let t = if name.ends_with(".g") {
            Tensor::full(shape, T::one())
        } else if name.ends_with(".b") {
            Tensor::zeros(shape)
        } else {
            Tensor::from_fn(shape, |_| T::lit(normal.sample(rng)))
        };
        store.insert(name.clone(), t);
    }
    store
}

fn check_mel(cfg: &EncoderConfig, mel: &MelSpectrogram) -> Result<()> {
    if mel.n_mels() != cfg.n_mels {
        return Err(Error::shape(format!(
            "mel has {} bins, encoder expects {}",
            mel.n_mels(),
            cfg.n_mels
        )));
    }
    if mel.n_frames() % 2 != 0 || mel.n_frames() > 2 * cfg.max_encoder_frames {
        return Err(Error::shape(format!(
            "mel has {} frames; encoder needs an even count of at most {}",
            mel.n_frames(),
            2 * cfg.max_encoder_frames
        )));
    }
    Ok(())
}

pub(crate) fn mel_node<T: Real>(g: &mut Graph<T>, mel: &MelSpectrogram) -> Result<Var> {
    let data = mel.to_time_major().into_iter().map(|v| T::lit(f64::from(v))).collect();
    Ok(g.constant(Tensor::new(vec![mel.n_frames(), mel.n_mels()], data)?))
}

/// Encoder parameters only; what survives after the decoder is discarded.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T> {
    cfg: EncoderConfig,
    params: ParamStore<T>,
}

impl<T: Real> Encoder<T> {
    pub fn from_params(cfg: EncoderConfig, params: ParamStore<T>) -> Result<Self> {
        check_layout(&params, &encoder_layout(&cfg))?;
        Ok(Self { cfg, params })
    }

    /// Freshly initialized encoder, identical to the encoder half of
    /// `Seq2SeqModel::new` under the same seed.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&encoder_layout(&cfg.encoder()), &mut rng);
        Ok(Self {
            cfg: cfg.encoder(),
            params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn encode(&self, mel: &MelSpectrogram) -> Result<HiddenStates<T>> {
        check_mel(&self.cfg, mel)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, "enc.", false);
        let m = mel_node(&mut g, mel)?;
        let h = encoder_forward(&mut g, &self.cfg, &p, m)?;
        HiddenStates::new(g.value(h).clone())
    }
}

/// Full encoder-decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2SeqModel<T> {
    cfg: ModelConfig,
    params: ParamStore<T>,
}

impl<T: Real> Seq2SeqModel<T> {
    /// Draws all parameters from one seeded stream: encoder first, then decoder.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layout = encoder_layout(&cfg.encoder());
        layout.extend(decoder_layout(&cfg));
        let params = init_params(&layout, &mut rng);
        Ok(Self { cfg, params })
    }

    pub fn from_params(cfg: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        cfg.validate()?;
        let mut layout = encoder_layout(&cfg.encoder());
        layout.extend(decoder_layout(&cfg));
        check_layout(&params, &layout)?;
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    pub fn encode(&self, mel: &MelSpectrogram) -> Result<HiddenStates<T>> {
        check_mel(&self.cfg.encoder(), mel)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, "enc.", false);
        let m = mel_node(&mut g, mel)?;
        let h = encoder_forward(&mut g, &self.cfg.encoder(), &p, m)?;
        HiddenStates::new(g.value(h).clone())
    }

    pub fn decode_teacher_forced(
        &self,
        hidden: &HiddenStates<T>,
        tokens: &[usize],
    ) -> Result<Tensor<T>> {
        if hidden.d_model() != self.cfg.d_model {
            return Err(Error::shape(format!(
                "hidden width {} vs model width {}",
                hidden.d_model(),
                self.cfg.d_model
            )));
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, "dec.", false);
        let h = g.constant(hidden.tensor().clone());
        let logits = decoder_forward(&mut g, &self.cfg, &p, h, tokens)?;
        Ok(g.value(logits).clone())
    }

    /// Builds the captioning loss for one (mel, token sequence) pair on `g`.
    /// The decoder reads `tokens[..n-1]` and predicts `tokens[1..]`;
    /// `ignore` positions (padding) do not count.
    pub fn loss_on_graph(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        mel: &MelSpectrogram,
        tokens: &[usize],
        ignore: usize,
    ) -> Result<Var> {
        check_mel(&self.cfg.encoder(), mel)?;
        if tokens.len() < 2 {
            return Err(Error::shape("a training sequence needs at least two tokens"));
        }
        if tokens.len() > self.cfg.max_decoder_len {
            return Err(Error::Length {
                len: tokens.len(),
                max: self.cfg.max_decoder_len,
            });
        }
        let m = mel_node(g, mel)?;
        let h = encoder_forward(g, &self.cfg.encoder(), p, m)?;
        let logits = decoder_forward(g, &self.cfg, p, h, &tokens[..tokens.len() - 1])?;
        g.cross_entropy(logits, &tokens[1..], ignore)
    }

    /// Loss and parameter gradients (store order) for one example.
    pub fn loss_and_grads(
        &self,
        mel: &MelSpectrogram,
        tokens: &[usize],
        ignore: usize,
    ) -> Result<(f64, Vec<Vec<T>>)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, "", true);
        let loss = self.loss_on_graph(&mut g, &p, mel, tokens, ignore)?;
        g.backward(loss)?;
        let value = g.value(loss).data()[0].to_f64().unwrap();
        Ok((value, p.gradients(&g, &self.params)))
    }

    pub fn loss(&self, mel: &MelSpectrogram, tokens: &[usize], ignore: usize) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, "", false);
        let loss = self.loss_on_graph(&mut g, &p, mel, tokens, ignore)?;
        Ok(g.value(loss).data()[0].to_f64().unwrap())
    }

    /// Drops every decoder parameter.
    pub fn encoder(&self) -> Encoder<T> {
        Encoder {
            cfg: self.cfg.encoder(),
            params: self.params.filter_prefix("enc."),
        }
    }
}

fn check_layout<T: Real>(params: &ParamStore<T>, layout: &[(String, Vec<usize>)]) -> Result<()> {
    if params.len() != layout.len() {
        return Err(Error::Checkpoint(format!(
            "{} parameters present, configuration implies {}",
            params.len(),
            layout.len()
        )));
    }
    for (name, shape) in layout {
        match params.get(name) {
            None => return Err(Error::Checkpoint(format!("missing parameter {name}"))),
            Some(t) if t.shape() != shape.as_slice() => {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, configuration implies {shape:?}",
                    t.shape()
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}
