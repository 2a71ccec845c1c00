//! End-to-end captioning fine-tuning: mixture-sampled batches, gradient
//! accumulation, AdamW with warmup + cosine decay, per-epoch evaluation,
//! checkpoint/resume.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::checkpoint::{self, extract_encoder, EncoderCheckpoint};
use crate::data::{self, CorpusRecord, Domain, MixtureSampler, MixtureSpec, PAD};
use crate::error::{Error, Result};
use crate::frontend::{MelFrontend, MelSpectrogram};
use crate::model::{is_bias_or_norm, Seq2SeqModel};
use crate::optim::{adamw_step, lr_at, AdamHyper, AdamState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub epochs: usize,
    /// Overrides `epochs` when non-zero.
    pub max_steps: usize,
    pub micro_batch: usize,
    pub accum_steps: usize,
    pub seed: u64,
    /// Save a resumable checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    pub domain_prefix: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_frac: 0.05,
            epochs: 2,
            max_steps: 0,
            micro_batch: 8,
            accum_steps: 2,
            seed: 0,
            checkpoint_every: 0,
            domain_prefix: true,
        }
    }
}

impl TrainConfig {
    pub fn effective_batch(&self) -> usize {
        self.micro_batch * self.accum_steps
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return bad("warmup_frac must lie in (0, 1)");
        }
        if self.micro_batch == 0 || self.accum_steps == 0 {
            return bad("micro_batch and accum_steps must be positive");
        }
        if self.epochs == 0 && self.max_steps == 0 {
            return bad("either epochs or max_steps must be positive");
        }
        if !(self.peak_lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("peak_lr and weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_records: usize) -> usize {
        n_records.div_ceil(self.effective_batch()).max(1)
    }

    pub fn total_steps(&self, n_records: usize) -> usize {
        if self.max_steps > 0 {
            self.max_steps
        } else {
            self.epochs * self.steps_per_epoch(n_records)
        }
    }
}

/// One preprocessed training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub mel: MelSpectrogram,
    pub tokens: Vec<usize>,
    pub domain: Domain,
}

/// Caption-filtered records with their mel features and token sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub records: Vec<CorpusRecord>,
    pub examples: Vec<Example>,
}

impl TrainingSet {
    /// Pairs records with precomputed mels, dropping over-long captions.
    pub fn from_parts(
        records: Vec<CorpusRecord>,
        mels: Vec<MelSpectrogram>,
        domain_prefix: bool,
    ) -> Result<Self> {
        if records.len() != mels.len() {
            return Err(Error::Data(format!(
                "{} records but {} spectrograms",
                records.len(),
                mels.len()
            )));
        }
        let (records, examples): (Vec<_>, Vec<_>) = records
            .into_iter()
            .zip(mels)
            .filter(|(r, _)| data::filter_caption(r, domain_prefix))
            .map(|(r, mel)| {
                let tokens = data::encode_caption(&r.text, r.domain, domain_prefix).into_ids();
                let ex = Example {
                    mel,
                    tokens,
                    domain: r.domain,
                };
                (r, ex)
            })
            .unzip();
        if examples.is_empty() {
            return Err(Error::Data("no records survive caption filtering".into()));
        }
        Ok(Self { records, examples })
    }

    pub fn from_manifest(path: &Path, frontend: &MelFrontend, domain_prefix: bool) -> Result<Self> {
        let records = data::load_manifest(path)?;
        let kept = data::filter_manifest(&records, domain_prefix);
        if kept.is_empty() {
            return Err(Error::Data(format!(
                "{}: no records survive caption filtering",
                path.display()
            )));
        }
        let mels = kept
            .par_iter()
            .map(|r| frontend.process_file(&data::resolve_audio(path, &r.audio_path)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(kept, mels, domain_prefix)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// One line of the loss log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogRecord {
    Train {
        step: usize,
        lr: f64,
        train_loss: f64,
        wall_ms: u64,
    },
    Eval {
        step: usize,
        eval_loss: f64,
    },
}

impl LogRecord {
    /// Same record with timing removed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        match self {
            LogRecord::Train {
                step,
                lr,
                train_loss,
                ..
            } => LogRecord::Train {
                step: *step,
                lr: *lr,
                train_loss: *train_loss,
                wall_ms: 0,
            },
            other => other.clone(),
        }
    }
}

/// Mean per-example caption loss; parameters are not touched.
pub fn evaluate<T: Real>(model: &Seq2SeqModel<T>, set: &TrainingSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let losses = set
        .examples
        .par_iter()
        .map(|ex| model.loss(&ex.mel, &ex.tokens, PAD))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn batch_seed(seed: u64, step: usize) -> u64 {
    // splitmix64 finalizer over (seed, step)
    let mut z = seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SavedState {
    step: usize,
    total_steps: usize,
    adam_t: u64,
    config: TrainConfig,
    log: Vec<LogRecord>,
}

pub struct Trainer<T: Real> {
    model: Seq2SeqModel<T>,
    cfg: TrainConfig,
    state: AdamState<T>,
    decay: Vec<bool>,
    sampler: MixtureSampler,
    train: Arc<TrainingSet>,
    eval: Option<Arc<TrainingSet>>,
    step: usize,
    total_steps: usize,
    log: Vec<LogRecord>,
}

impl<T: Real> Trainer<T> {
    pub fn new(
        model: Seq2SeqModel<T>,
        cfg: TrainConfig,
        mixture: MixtureSpec,
        train: Arc<TrainingSet>,
        eval: Option<Arc<TrainingSet>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Data("empty training set".into()));
        }
        let sampler = MixtureSampler::new(&train.records, mixture)?;
        let state = AdamState::zeros_like(model.params());
        let decay = model.params().iter().map(|(n, _)| !is_bias_or_norm(n)).collect();
        let total_steps = cfg.total_steps(train.len());
        Ok(Self {
            model,
            cfg,
            state,
            decay,
            sampler,
            train,
            eval,
            step: 0,
            total_steps,
            log: Vec::new(),
        })
    }

    pub fn model(&self) -> &Seq2SeqModel<T> {
        &self.model
    }

    pub fn into_model(self) -> Seq2SeqModel<T> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.cfg.steps_per_epoch(self.train.len())
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn adam_state(&self) -> &AdamState<T> {
        &self.state
    }

    /// Manifest indices making up optimizer step `step`, split into micro-batches.
    pub fn batch_indices(&self, step: usize) -> Vec<usize> {
        self.sampler
            .sample_indices(self.cfg.effective_batch(), batch_seed(self.cfg.seed, step))
    }

    /// Averaged gradient and loss for one optimizer step without applying it.
    pub fn accumulated_gradient(&self, step: usize) -> Result<(f64, Vec<Vec<T>>)> {
        let idx = self.batch_indices(step);
        let mut acc: Vec<Vec<T>> = self
            .model
            .params()
            .iter()
            .map(|(_, t)| vec![T::zero(); t.numel()])
            .collect();
        let mut loss_sum = 0.0;
        for micro in idx.chunks(self.cfg.micro_batch) {
            let results = micro
                .par_iter()
                .map(|&i| {
                    let ex = &self.train.examples[i];
                    self.model.loss_and_grads(&ex.mel, &ex.tokens, PAD)
                })
                .collect::<Result<Vec<_>>>()?;
            let inv = T::lit(1.0 / micro.len() as f64);
            let mut micro_loss = 0.0;
            let mut micro_grad: Vec<Vec<T>> = acc.iter().map(|a| vec![T::zero(); a.len()]).collect();
            for (loss, grads) in results {
                micro_loss += loss;
                for (dst, src) in micro_grad.iter_mut().zip(grads) {
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d = *d + s);
                }
            }
            loss_sum += micro_loss / micro.len() as f64;
            for (dst, src) in acc.iter_mut().zip(micro_grad) {
                dst.iter_mut().zip(src).for_each(|(d, s)| *d = *d + s * inv);
            }
        }
        let inv_accum = T::lit(1.0 / self.cfg.accum_steps as f64);
        for buf in &mut acc {
            buf.iter_mut().for_each(|x| *x = *x * inv_accum);
        }
        Ok((loss_sum / self.cfg.accum_steps as f64, acc))
    }

    /// Performs one optimizer step; returns the log records it produced.
    pub fn step(&mut self) -> Result<Vec<LogRecord>> {
        if self.step >= self.total_steps {
            return Err(Error::Config(format!(
                "training already completed {} steps",
                self.total_steps
            )));
        }
        let t0 = Instant::now();
        let lr = lr_at(self.step, self.total_steps, self.cfg.peak_lr, self.cfg.warmup_frac)?;
        let (loss, grads) = self.accumulated_gradient(self.step)?;
        adamw_step(
            self.model.params_mut(),
            &grads,
            &mut self.state,
            lr,
            &self.cfg.hyper(),
            &self.decay,
        )?;
        self.step += 1;
        let mut out = vec![LogRecord::Train {
            step: self.step,
            lr,
            train_loss: loss,
            wall_ms: t0.elapsed().as_millis() as u64,
        }];
        let end_of_epoch = self.step % self.steps_per_epoch() == 0;
        if let Some(eval) = &self.eval {
            if end_of_epoch || self.step == self.total_steps {
                out.push(LogRecord::Eval {
                    step: self.step,
                    eval_loss: evaluate(&self.model, eval)?,
                });
            }
        }
        self.log.extend(out.iter().cloned());
        Ok(out)
    }

    /// Steps until `until` (capped at the total), feeding each record to `sink`.
    pub fn run_until(&mut self, until: usize, mut sink: impl FnMut(&LogRecord)) -> Result<()> {
        while self.step < until.min(self.total_steps) {
            for r in self.step()? {
                sink(&r);
            }
        }
        Ok(())
    }
}

impl Trainer<f32> {
    pub fn save_state(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save_model(&dir.join("model.bin"), &self.model)?;
        checkpoint::save_optimizer(
            &dir.join("optim.bin"),
            self.model.config(),
            &self.state.to_store(self.model.params()),
        )?;
        let saved = SavedState {
            step: self.step,
            total_steps: self.total_steps,
            adam_t: self.state.t,
            config: self.cfg.clone(),
            log: self.log.clone(),
        };
        let path = dir.join("state.json");
        let text = serde_json::to_string_pretty(&saved).expect("state serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Rebuilds a trainer from `save_state` output. The training data and
    /// mixture must be the ones the run started with.
    pub fn resume(
        dir: &Path,
        mixture: MixtureSpec,
        train: Arc<TrainingSet>,
        eval: Option<Arc<TrainingSet>>,
    ) -> Result<Self> {
        let path = dir.join("state.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let saved: SavedState = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let model = checkpoint::load_model(&dir.join("model.bin"))?;
        let moments = checkpoint::load_optimizer(&dir.join("optim.bin"), model.config())?;
        let mut t = Trainer::new(model, saved.config, mixture, train, eval)?;
        if t.total_steps != saved.total_steps {
            return Err(Error::Checkpoint(format!(
                "saved run has {} total steps, data implies {}",
                saved.total_steps, t.total_steps
            )));
        }
        t.state = AdamState::from_store(&moments, t.model.params(), saved.adam_t)?;
        t.step = saved.step;
        t.log = saved.log;
        Ok(t)
    }
}

pub struct TrainOutcome<T> {
    pub model: Seq2SeqModel<T>,
    pub log: Vec<LogRecord>,
    pub encoder: EncoderCheckpoint,
}

/// Trains to completion in memory and extracts the encoder.
pub fn train<T: Real>(
    model: Seq2SeqModel<T>,
    train_set: Arc<TrainingSet>,
    eval_set: Option<Arc<TrainingSet>>,
    mixture: MixtureSpec,
    cfg: TrainConfig,
) -> Result<TrainOutcome<T>> {
    let mut t = Trainer::new(model, cfg, mixture, train_set, eval_set)?;
    let total = t.total_steps();
    t.run_until(total, |_| {})?;
    let log = t.log.clone();
    let model = t.into_model();
    let encoder = extract_encoder(&model);
    Ok(TrainOutcome {
        model,
        log,
        encoder,
    })
}

/// Files a run directory ends up holding.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
    pub fn loss_log(&self) -> PathBuf {
        self.dir.join("loss_log.jsonl")
    }
    pub fn init_encoder(&self) -> PathBuf {
        self.dir.join("encoder_init.bin")
    }
    pub fn encoder(&self) -> PathBuf {
        self.dir.join("encoder.bin")
    }
    pub fn model(&self) -> PathBuf {
        self.dir.join("model.bin")
    }
    pub fn checkpoint(&self, step: usize) -> PathBuf {
        self.dir.join("checkpoints").join(format!("step_{step:06}"))
    }
    pub fn final_state(&self) -> PathBuf {
        self.dir.join("final")
    }
}

/// Drives a trainer to completion while writing the loss log, periodic
/// checkpoints, the final model and both the initial and trained encoders.
pub fn train_to_dir(mut trainer: Trainer<f32>, paths: &RunPaths) -> Result<TrainOutcome<f32>> {
    fs::create_dir_all(&paths.dir).map_err(|e| Error::io(&paths.dir, e))?;
    if trainer.step_count() == 0 {
        extract_encoder(trainer.model()).save(&paths.init_encoder())?;
    }
    let log_path = paths.loss_log();
    let mut log_file = fs::OpenOptions::new()
        .create(true)
        .append(trainer.step_count() > 0)
        .write(true)
        .truncate(trainer.step_count() == 0)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let every = trainer.config().checkpoint_every;
    while trainer.step_count() < trainer.total_steps() {
        for rec in trainer.step()? {
            let line = serde_json::to_string(&rec).expect("log record serializes");
            writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))?;
        }
        let s = trainer.step_count();
        if every > 0 && s % every == 0 && s < trainer.total_steps() {
            trainer.save_state(&paths.checkpoint(s))?;
        }
    }
    trainer.save_state(&paths.final_state())?;
    checkpoint::save_model(&paths.model(), trainer.model())?;
    let encoder = extract_encoder(trainer.model());
    encoder.save(&paths.encoder())?;
    let log = trainer.log().to_vec();
    Ok(TrainOutcome {
        model: trainer.into_model(),
        log,
        encoder,
    })
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}
