//! Binary parameter files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   "AUDAPTCK"
//! version    u32       1
//! kind       u8        0 = full model, 1 = encoder only, 2 = optimizer moments
//! n_config   u32       number of config words that follow
//! config     u32 × n   model: d_model n_heads n_enc_layers n_dec_layers vocab_size
//!                              max_decoder_len max_encoder_frames n_mels
//!                      encoder: d_model n_heads n_enc_layers max_encoder_frames n_mels
//! n_params   u32
//! per param: name_len u32, name (UTF-8), rank u32, dims u32 × rank, f32 × numel
//! trailer    32 bytes  SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::model::{EncoderConfig, Encoder, ModelConfig, Seq2SeqModel};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"AUDAPTCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum CheckpointKind {
    Model = 0,
    Encoder = 1,
    Optimizer = 2,
}

impl CheckpointKind {
    fn from_u8(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Self::Model),
            1 => Ok(Self::Encoder),
            2 => Ok(Self::Optimizer),
            other => Err(Error::Checkpoint(format!("unknown checkpoint kind {other}"))),
        }
    }
}

/// Decoded checkpoint contents before they are matched to a model.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCheckpoint {
    pub kind: CheckpointKind,
    pub config: Vec<u32>,
    pub params: ParamStore<f32>,
    pub hash: String,
}

fn model_words(cfg: &ModelConfig) -> Vec<u32> {
    [
        cfg.d_model,
        cfg.n_heads,
        cfg.n_enc_layers,
        cfg.n_dec_layers,
        cfg.vocab_size,
        cfg.max_decoder_len,
        cfg.max_encoder_frames,
        cfg.n_mels,
    ]
    .iter()
    .map(|&v| v as u32)
    .collect()
}

fn encoder_words(cfg: &EncoderConfig) -> Vec<u32> {
    [
        cfg.d_model,
        cfg.n_heads,
        cfg.n_enc_layers,
        cfg.max_encoder_frames,
        cfg.n_mels,
    ]
    .iter()
    .map(|&v| v as u32)
    .collect()
}

fn model_from_words(w: &[u32]) -> Result<ModelConfig> {
    let [d_model, n_heads, n_enc_layers, n_dec_layers, vocab_size, max_decoder_len, max_encoder_frames, n_mels] =
        w
    else {
        return Err(Error::Checkpoint(format!(
            "model config block has {} words, expected 8",
            w.len()
        )));
    };
    let cfg = ModelConfig {
        d_model: *d_model as usize,
        n_heads: *n_heads as usize,
        n_enc_layers: *n_enc_layers as usize,
        n_dec_layers: *n_dec_layers as usize,
        vocab_size: *vocab_size as usize,
        max_decoder_len: *max_decoder_len as usize,
        max_encoder_frames: *max_encoder_frames as usize,
        n_mels: *n_mels as usize,
    };
    cfg.validate()
        .map_err(|e| Error::Checkpoint(format!("stored config invalid: {e}")))?;
    Ok(cfg)
}

fn encoder_from_words(w: &[u32]) -> Result<EncoderConfig> {
    let [d_model, n_heads, n_enc_layers, max_encoder_frames, n_mels] = w else {
        return Err(Error::Checkpoint(format!(
            "encoder config block has {} words, expected 5",
            w.len()
        )));
    };
    let cfg = EncoderConfig {
        d_model: *d_model as usize,
        n_heads: *n_heads as usize,
        n_enc_layers: *n_enc_layers as usize,
        max_encoder_frames: *max_encoder_frames as usize,
        n_mels: *n_mels as usize,
    };
    if cfg.d_model == 0 || cfg.n_heads == 0 || cfg.d_model % cfg.n_heads != 0 {
        return Err(Error::Checkpoint(format!("stored encoder config invalid: {cfg:?}")));
    }
    Ok(cfg)
}

pub fn encode_bytes<T: Real>(kind: CheckpointKind, config: &[u32], params: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.num_params() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind as u8);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    for w in config {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for x in t.data() {
            out.extend_from_slice(&x.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_bytes(bytes: &[u8]) -> Result<RawCheckpoint> {
    if bytes.len() < MAGIC.len() + 32 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(Error::Checkpoint("content hash mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let kind = CheckpointKind::from_u8(r.take(1)?[0])?;
    let n_cfg = r.u32()? as usize;
    let config = (0..n_cfg).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let n_params = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..n_params {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| Error::Checkpoint(format!("parameter {name}: {e}")))?;
        if params.get(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        params.insert(name, t);
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(RawCheckpoint {
        kind,
        config,
        params,
        hash: hex(trailer),
    })
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<String> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(hex(&bytes[bytes.len() - 32..]))
}

pub fn read_raw(path: &Path) -> Result<RawCheckpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Saved encoder: configuration, parameters, and the file's content hash.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderCheckpoint {
    pub encoder: Encoder<f32>,
    pub hash: String,
}

impl EncoderCheckpoint {
    pub fn config(&self) -> &EncoderConfig {
        self.encoder.config()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encoder_bytes(&self.encoder)
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = read_raw(path)?;
        Self::from_raw(raw)
    }

    /// Loads and additionally requires the stored configuration to match.
    pub fn load_expecting(path: &Path, expected: &EncoderConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.config() != expected {
            return Err(Error::Checkpoint(format!(
                "{}: stored encoder {:?} does not match expected {:?}",
                path.display(),
                ck.config(),
                expected
            )));
        }
        Ok(ck)
    }

    fn from_raw(raw: RawCheckpoint) -> Result<Self> {
        if raw.kind != CheckpointKind::Encoder {
            return Err(Error::Checkpoint(format!(
                "expected an encoder checkpoint, found {:?}",
                raw.kind
            )));
        }
        let cfg = encoder_from_words(&raw.config)?;
        let encoder = Encoder::from_params(cfg, raw.params)?;
        Ok(Self {
            encoder,
            hash: raw.hash,
        })
    }
}

fn encoder_bytes<T: Real>(enc: &Encoder<T>) -> Vec<u8> {
    encode_bytes(CheckpointKind::Encoder, &encoder_words(enc.config()), enc.params())
}

/// Discards the decoder and packages the encoder, hashing its serialized form.
pub fn extract_encoder<T: Real>(model: &Seq2SeqModel<T>) -> EncoderCheckpoint {
    let enc = model.encoder();
    let params = enc.params().cast::<f32>();
    let encoder = Encoder::from_params(*enc.config(), params).expect("layout preserved by cast");
    let bytes = encoder_bytes(&encoder);
    EncoderCheckpoint {
        encoder,
        hash: hex(&bytes[bytes.len() - 32..]),
    }
}

pub fn save_model(path: &Path, model: &Seq2SeqModel<f32>) -> Result<String> {
    let bytes = encode_bytes(CheckpointKind::Model, &model_words(model.config()), model.params());
    write_file(path, &bytes)
}

pub fn model_hash(model: &Seq2SeqModel<f32>) -> String {
    let bytes = encode_bytes(CheckpointKind::Model, &model_words(model.config()), model.params());
    hex(&bytes[bytes.len() - 32..])
}

pub fn load_model(path: &Path) -> Result<Seq2SeqModel<f32>> {
    let raw = read_raw(path)?;
    if raw.kind != CheckpointKind::Model {
        return Err(Error::Checkpoint(format!(
            "{}: expected a model checkpoint, found {:?}",
            path.display(),
            raw.kind
        )));
    }
    let cfg = model_from_words(&raw.config)?;
    Seq2SeqModel::from_params(cfg, raw.params)
}

pub fn save_optimizer(path: &Path, cfg: &ModelConfig, moments: &ParamStore<f32>) -> Result<String> {
    write_file(
        path,
        &encode_bytes(CheckpointKind::Optimizer, &model_words(cfg), moments),
    )
}

pub fn load_optimizer(path: &Path, cfg: &ModelConfig) -> Result<ParamStore<f32>> {
    let raw = read_raw(path)?;
    if raw.kind != CheckpointKind::Optimizer {
        return Err(Error::Checkpoint(format!(
            "{}: expected optimizer state, found {:?}",
            path.display(),
            raw.kind
        )));
    }
    if model_from_words(&raw.config)? != *cfg {
        return Err(Error::Checkpoint(format!(
            "{}: optimizer state belongs to a different model configuration",
            path.display()
        )));
    }
    Ok(raw.params)
}
