//! `audapt`: synthesize data, fine-tune, extract the encoder, probe, compare
//! and report. Logs go to stderr; structured outputs go to files.
//!
//! Exit codes: 0 ok, 2 configuration, 3 data, 4 numerical, 5 I/O.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use audapt_core::checkpoint::{extract_encoder, load_model, EncoderCheckpoint};
use audapt_core::config::RunConfig;
use audapt_core::data::Domain;
use audapt_core::frontend::MelFrontend;
use audapt_core::model::Seq2SeqModel;
use audapt_core::pipeline::{pilot_config, run_pipeline, PipelineDirs, PipelineSpec};
use audapt_core::probe::{self, compare_encoders, probe_encoder, Comparison, PreparedBenchmark};
use audapt_core::synth::{generate_corpus, write_corpus};
use audapt_core::trainer::{train_to_dir, LogRecord, RunPaths, Trainer, TrainingSet};
use audapt_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "audapt", version, about = "Audio encoder domain adaptation on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Config file of `section.key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set train.peak_lr=1e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic captioning corpus: WAV files plus manifest.jsonl.
    SynthCorpus {
        #[arg(long, value_delimiter = ',', default_value = "speech,sound,music")]
        domains: Vec<Domain>,
        #[arg(long)]
        n_per_domain: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write the synthetic keyword, environment and genre benchmarks.
    SynthBenchmarks {
        #[arg(long, value_delimiter = ',', default_value = "speech,sound,music")]
        domains: Vec<Domain>,
        #[arg(long, default_value_t = 50)]
        n_per_class: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 11)]
        seed: u64,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Fine-tune the encoder-decoder on a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        eval_manifest: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides `train.seed` (model init and batch order).
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a saved state directory (`checkpoints/step_N` or `final`).
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Drop the decoder from a model checkpoint and save the encoder.
    ExtractEncoder {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear-probe one encoder on benchmark manifests.
    Probe {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long = "benchmark", required = true)]
        benchmarks: Vec<PathBuf>,
        /// Also probe this encoder and report deltas against it.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Probe a baseline and an adapted encoder under identical settings.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        adapted: PathBuf,
        #[arg(long = "benchmark", required = true)]
        benchmarks: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Render a comparison JSON as a table.
    Report {
        #[arg(long)]
        comparison: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize, train, extract and compare in one run directory.
    Pipeline {
        #[arg(long)]
        out_dir: PathBuf,
        /// Start from the committed pilot settings before applying --config/--set.
        #[arg(long)]
        pilot: bool,
        #[arg(long, default_value_t = 300)]
        corpus_per_domain: usize,
        #[arg(long, default_value_t = 10)]
        eval_per_domain: usize,
        #[arg(long, default_value_t = 50)]
        bench_per_class: usize,
        #[arg(long, default_value_t = 7)]
        corpus_seed: u64,
        #[arg(long, default_value_t = 11)]
        bench_seed: u64,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Mixture(_) => 2,
        Error::Numerical(_) | Error::DegenerateBatch => 4,
        Error::Io { .. } => 5,
        Error::InvalidAudio(_)
        | Error::Shape(_)
        | Error::Length { .. }
        | Error::Checkpoint(_)
        | Error::Manifest { .. }
        | Error::Data(_)
        | Error::Split(_)
        | Error::Comparison(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::SynthCorpus {
            domains,
            n_per_domain,
            out_dir,
            seed,
            config,
        } => {
            let cfg = config.load()?;
            cfg.echo_to(&out_dir)?;
            let clips = generate_corpus(&cfg.synth, &domains, n_per_domain, seed);
            let manifest = write_corpus(&out_dir, &clips)?;
            eprintln!("wrote {} clips, manifest {}", clips.len(), manifest.display());
        }
        Command::SynthBenchmarks {
            domains,
            n_per_class,
            out_dir,
            seed,
            config,
        } => {
            let cfg = config.load()?;
            cfg.echo_to(&out_dir)?;
            for d in domains {
                let m = probe::write_synthetic_benchmark(&out_dir, d, n_per_class, &cfg.synth, seed)?;
                eprintln!("wrote {}", m.display());
            }
        }
        Command::Train {
            manifest,
            eval_manifest,
            out_dir,
            seed,
            resume,
            config,
        } => train(&manifest, eval_manifest.as_deref(), &out_dir, seed, resume.as_deref(), &config)?,
        Command::ExtractEncoder { model, out } => {
            let model = load_model(&model)?;
            let hash = extract_encoder(&model).save(&out)?;
            eprintln!("encoder {} sha256 {hash}", out.display());
        }
        Command::Probe {
            encoder,
            benchmarks,
            baseline,
            out,
            config,
        } => {
            let cfg = config.load()?;
            let adapted = EncoderCheckpoint::load(&encoder)?;
            let benches = load_benchmarks(&cfg, &benchmarks)?;
            let json = match baseline {
                Some(b) => {
                    let base = EncoderCheckpoint::load(&b)?;
                    let cmp = compare_encoders(&base, &adapted, &benches, &cfg.probe)?;
                    eprint!("{}", cmp.render_text());
                    serde_json::to_string_pretty(&cmp.adapted_reports)
                }
                None => {
                    let reports = benches
                        .iter()
                        .map(|b| probe_encoder(&adapted.encoder, &adapted.hash, b, &cfg.probe))
                        .collect::<Result<Vec<_>>>()?;
                    for r in &reports {
                        eprintln!("{}: {:.2}%", r.benchmark, 100.0 * r.accuracy);
                    }
                    serde_json::to_string_pretty(&reports)
                }
            };
            write_text(&out, &json.expect("reports serialize"))?;
        }
        Command::Compare {
            baseline,
            adapted,
            benchmarks,
            out,
            config,
        } => {
            let cfg = config.load()?;
            let base = EncoderCheckpoint::load(&baseline)?;
            let adapted = EncoderCheckpoint::load(&adapted)?;
            let benches = load_benchmarks(&cfg, &benchmarks)?;
            let cmp = compare_encoders(&base, &adapted, &benches, &cfg.probe)?;
            eprint!("{}", cmp.render_text());
            write_text(&out, &serde_json::to_string_pretty(&cmp).expect("comparison serializes"))?;
        }
        Command::Report {
            comparison,
            format,
            out,
        } => {
            let text = fs::read_to_string(&comparison).map_err(|e| Error::io(&comparison, e))?;
            let cmp: Comparison = serde_json::from_str(&text)
                .map_err(|e| Error::Data(format!("{}: {e}", comparison.display())))?;
            let rendered = match format {
                Format::Text => cmp.render_text(),
                Format::Csv => cmp.render_csv(),
                Format::Json => serde_json::to_string_pretty(&cmp.rows).expect("rows serialize") + "\n",
            };
            match out {
                Some(p) => write_text(&p, &rendered)?,
                None => print!("{rendered}"),
            }
        }
        Command::Pipeline {
            out_dir,
            pilot,
            corpus_per_domain,
            eval_per_domain,
            bench_per_class,
            corpus_seed,
            bench_seed,
            config,
        } => {
            let cfg = if pilot {
                let mut base = pilot_config().to_toml();
                if let Some(p) = &config.config {
                    base += &fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                }
                let merged = out_dir.join("pilot_base.toml");
                fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
                write_text(&merged, &base)?;
                RunConfig::load(Some(&merged), &config.overrides)?
            } else {
                config.load()?
            };
            let spec = PipelineSpec {
                corpus_per_domain,
                eval_per_domain,
                corpus_seed,
                bench_per_class,
                bench_seed,
            };
            let out = run_pipeline(&cfg, &spec, &PipelineDirs::new(&out_dir))?;
            eprintln!("model sha256 {}", out.model_hash);
            print!("{}", out.comparison.render_text());
        }
    }
    Ok(())
}

fn train(
    manifest: &Path,
    eval_manifest: Option<&Path>,
    out_dir: &Path,
    seed: Option<u64>,
    resume: Option<&Path>,
    config: &ConfigArgs,
) -> Result<()> {
    let mut overrides = config.overrides.clone();
    if let Some(s) = seed {
        overrides.push(format!("train.seed={s}"));
    }
    let cfg = RunConfig::load(config.config.as_deref(), &overrides)?;
    cfg.echo_to(out_dir)?;
    let frontend = MelFrontend::new(cfg.frontend.clone())?;
    let prefix = cfg.train.domain_prefix;
    let train_set = Arc::new(TrainingSet::from_manifest(manifest, &frontend, prefix)?);
    let eval_set = eval_manifest
        .map(|m| TrainingSet::from_manifest(m, &frontend, prefix).map(Arc::new))
        .transpose()?;
    eprintln!("{} training examples after caption filtering", train_set.len());
    let trainer = match resume {
        Some(dir) => Trainer::resume(dir, cfg.mixture, train_set, eval_set)?,
        None => {
            let model = Seq2SeqModel::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
            Trainer::new(model, cfg.train.clone(), cfg.mixture, train_set, eval_set)?
        }
    };
    eprintln!(
        "training steps {}..{} ({} params)",
        trainer.step_count(),
        trainer.total_steps(),
        trainer.model().num_params()
    );
    let paths = RunPaths::new(out_dir);
    let out = train_to_dir(trainer, &paths)?;
    if let Some(LogRecord::Train { step, train_loss, .. }) =
        out.log.iter().rev().find(|r| matches!(r, LogRecord::Train { .. }))
    {
        eprintln!("step {step}: train loss {train_loss:.4}");
    }
    eprintln!("encoder {} sha256 {}", paths.encoder().display(), out.encoder.hash);
    Ok(())
}

fn load_benchmarks(cfg: &RunConfig, manifests: &[PathBuf]) -> Result<Vec<PreparedBenchmark>> {
    let frontend = MelFrontend::new(cfg.frontend.clone())?;
    manifests
        .iter()
        .map(|m| PreparedBenchmark::load(m, &frontend))
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
