//! Encoder domain adaptation at desk scale.
//!
//! A small Whisper-shaped encoder-decoder is trained to caption a mixed
//! speech/sound/music corpus; the decoder is then dropped and the encoder is
//! scored with linear probes on frozen, mean-pooled features.
//!
//! * [`frontend`]: waveform to 128-bin log-mel.
//! * [`autodiff`]: tape-based reverse-mode differentiation.
//! * [`model`] and [`checkpoint`]: the encoder-decoder and its storage.
//! * [`data`] and [`synth`]: corpora, tokenization and mixture sampling.
//! * [`optim`] and [`trainer`]: AdamW, the LR schedule and the training loop.
//! * [`probe`]: splits, linear probes and encoder comparisons.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod frontend;
pub mod model;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod probe;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
