//! The whole recipe on synthetic data: synthesize a mixed-domain corpus and
//! the probe benchmarks, fine-tune, keep the encoder, and compare it with the
//! random-init encoder it started from.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, EncoderCheckpoint};
use crate::config::RunConfig;
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::frontend::MelFrontend;
use crate::model::Seq2SeqModel;
use crate::probe::{self, compare_encoders, Comparison, PreparedBenchmark};
use crate::synth::{generate_corpus, write_corpus};
use crate::trainer::{train_to_dir, LogRecord, RunPaths, Trainer, TrainingSet};

/// Data sizes and seeds for a pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub corpus_per_domain: usize,
    pub eval_per_domain: usize,
    pub corpus_seed: u64,
    pub bench_per_class: usize,
    pub bench_seed: u64,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        Self {
            corpus_per_domain: 300,
            eval_per_domain: 10,
            corpus_seed: 7,
            bench_per_class: 50,
            bench_seed: 11,
        }
    }
}

/// Settings the committed pilot run used: the toy model on 3 s windows with
/// a toy-scale learning rate and an 800-step budget.
pub fn pilot_config() -> RunConfig {
    let overrides = [
        "frontend.window_s=3.0",
        "train.peak_lr=1e-3",
        "train.max_steps=800",
        "train.micro_batch=8",
        "train.accum_steps=1",
    ]
    .map(String::from);
    RunConfig::load(None, &overrides).expect("pilot overrides are valid")
}

/// Where a pipeline run leaves its artifacts.
#[derive(Clone, Debug)]
pub struct PipelineDirs {
    pub root: PathBuf,
}

impl PipelineDirs {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }
    pub fn eval_corpus(&self) -> PathBuf {
        self.root.join("eval_corpus")
    }
    pub fn benchmarks(&self) -> PathBuf {
        self.root.join("benchmarks")
    }
    pub fn run(&self) -> RunPaths {
        RunPaths::new(self.root.join("run"))
    }
    pub fn comparison(&self) -> PathBuf {
        self.root.join("comparison.json")
    }
}

pub struct PipelineOutcome {
    pub comparison: Comparison,
    pub log: Vec<LogRecord>,
    /// SHA-256 of the final full-model checkpoint.
    pub model_hash: String,
    pub encoder: EncoderCheckpoint,
}

/// Writes the three synthetic benchmarks and returns their manifests in
/// speech, sound, music order.
pub fn write_benchmarks(cfg: &RunConfig, spec: &PipelineSpec, dir: &Path) -> Result<Vec<PathBuf>> {
    Domain::ALL
        .iter()
        .map(|&d| probe::write_synthetic_benchmark(dir, d, spec.bench_per_class, &cfg.synth, spec.bench_seed))
        .collect()
}

pub fn run_pipeline(cfg: &RunConfig, spec: &PipelineSpec, dirs: &PipelineDirs) -> Result<PipelineOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&dirs.root).map_err(|e| Error::io(&dirs.root, e))?;
    cfg.echo_to(&dirs.root)?;
    let frontend = MelFrontend::new(cfg.frontend.clone())?;
    let prefix = cfg.train.domain_prefix;

    let clips = generate_corpus(&cfg.synth, &Domain::ALL, spec.corpus_per_domain, spec.corpus_seed);
    let manifest = write_corpus(&dirs.corpus(), &clips)?;
    let train_set = Arc::new(TrainingSet::from_manifest(&manifest, &frontend, prefix)?);
    let eval_set = if spec.eval_per_domain > 0 {
        let held_out = generate_corpus(&cfg.synth, &Domain::ALL, spec.eval_per_domain, !spec.corpus_seed);
        let m = write_corpus(&dirs.eval_corpus(), &held_out)?;
        Some(Arc::new(TrainingSet::from_manifest(&m, &frontend, prefix)?))
    } else {
        None
    };

    let benches = write_benchmarks(cfg, spec, &dirs.benchmarks())?
        .iter()
        .map(|m| PreparedBenchmark::load(m, &frontend))
        .collect::<Result<Vec<_>>>()?;

    let model = Seq2SeqModel::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
    let trainer = Trainer::new(model, cfg.train.clone(), cfg.mixture, train_set, eval_set)?;
    let run = dirs.run();
    let out = train_to_dir(trainer, &run)?;
    let baseline = EncoderCheckpoint::load(&run.init_encoder())?;

    let comparison = compare_encoders(&baseline, &out.encoder, &benches, &cfg.probe)?;
    let path = dirs.comparison();
    let json = serde_json::to_string_pretty(&comparison).expect("comparison serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(PipelineOutcome {
        comparison,
        log: out.log,
        model_hash: checkpoint::model_hash(&out.model),
        encoder: out.encoder,
    })
}
