//! Linear-probe evaluation of frozen encoders.
//!
//! Clips go through the frontend and the encoder; hidden states are
//! mean-pooled over time into one `d_model` vector per clip, and a single
//! affine layer is trained on those vectors with Adam and cross-entropy.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::checkpoint::EncoderCheckpoint;
use crate::data::{self, Domain};
use crate::error::{Error, Result};
use crate::frontend::{read_wav, write_wav, AudioClip, MelFrontend, MelSpectrogram};
use crate::model::Encoder;
use crate::optim::{adamw_step, AdamHyper, AdamState};
use crate::params::ParamStore;
use crate::synth::{self, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub label: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Pool only over frames that cover actual audio rather than the whole
    /// (zero-padded) window.
    pub exclude_padding: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-3,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            exclude_padding: false,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("probe: epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("probe: lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("probe: betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("probe: eps must be positive".into()));
        }
        Ok(())
    }

    fn hyper(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: 0.0,
        }
    }
}

/// Trained affine classifier: `logits = x · w + b`, `w` is `[d, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    pub w: Tensor<f64>,
    pub b: Tensor<f64>,
}

impl LinearProbe {
    pub fn n_classes(&self) -> usize {
        self.b.numel()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let c = self.n_classes();
        let mut out = self.b.data().to_vec();
        for (xi, row) in x.iter().zip(self.w.data().chunks(c)) {
            for (o, wv) in out.iter_mut().zip(row) {
                *o += xi * wv;
            }
        }
        out
    }

    /// Argmax with ties going to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub benchmark: String,
    pub encoder_id: String,
    pub accuracy: f64,
    /// `None` for classes absent from the test split.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub n_test: usize,
    pub n_correct: usize,
    /// Train split contained a single class.
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

/// Trains a linear probe on the train split and scores the test split.
pub fn train_probe(
    features: &[FeatureVector],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<(LinearProbe, ProbeReport)> {
    cfg.validate()?;
    if n_classes == 0 {
        return Err(Error::Config("probe: n_classes must be positive".into()));
    }
    let train: Vec<&FeatureVector> = features.iter().filter(|f| f.split == Split::Train).collect();
    let test: Vec<&FeatureVector> = features.iter().filter(|f| f.split == Split::Test).collect();
    if train.is_empty() {
        return Err(Error::Split("probe: train split is empty".into()));
    }
    let d = train[0].values.len();
    for f in features {
        if f.values.len() != d {
            return Err(Error::shape(format!(
                "probe: feature of length {} where {d} expected",
                f.values.len()
            )));
        }
        if f.label >= n_classes {
            return Err(Error::Data(format!(
                "probe: label {} outside [0, {n_classes})",
                f.label
            )));
        }
        if f.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("probe: non-finite feature".into()));
        }
    }
    let degenerate = train.iter().all(|f| f.label == train[0].label);

    let mut params = ParamStore::new();
    params.insert("w", Tensor::zeros(&[d, n_classes]));
    params.insert("b", Tensor::zeros(&[n_classes]));
    let mut state = AdamState::zeros_like(&params);
    let hp = cfg.hyper();
    let decay = [false, false];

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut x = Vec::with_capacity(chunk.len() * d);
            let mut y = Vec::with_capacity(chunk.len());
            for &i in chunk {
                x.extend_from_slice(&train[i].values);
                y.push(train[i].label);
            }
            let mut g = Graph::new();
            let xv = g.constant(Tensor::new(vec![chunk.len(), d], x)?);
            let w = g.param(params.get("w").unwrap().clone());
            let b = g.param(params.get("b").unwrap().clone());
            let z = g.matmul(xv, w)?;
            let logits = g.add_row(z, b)?;
            let loss = g.cross_entropy(logits, &y, usize::MAX)?;
            g.backward(loss)?;
            let grads = vec![g.grad(w).unwrap().to_vec(), g.grad(b).unwrap().to_vec()];
            adamw_step(&mut params, &grads, &mut state, cfg.lr, &hp, &decay)?;
        }
    }

    let probe = LinearProbe {
        w: params.get("w").unwrap().clone(),
        b: params.get("b").unwrap().clone(),
    };
    let mut correct = vec![0usize; n_classes];
    let mut total = vec![0usize; n_classes];
    for f in &test {
        total[f.label] += 1;
        if probe.predict(&f.values) == f.label {
            correct[f.label] += 1;
        }
    }
    let n_correct: usize = correct.iter().sum();
    let n_test = test.len();
    let report = ProbeReport {
        benchmark: String::new(),
        encoder_id: String::new(),
        accuracy: if n_test == 0 { 0.0 } else { n_correct as f64 / n_test as f64 },
        per_class_accuracy: correct
            .iter()
            .zip(&total)
            .map(|(&c, &t)| (t > 0).then(|| c as f64 / t as f64))
            .collect(),
        n_test,
        n_correct,
        degenerate,
        delta: None,
    };
    Ok((probe, report))
}

fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    let mut z = seed ^ epoch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---- benchmarks and splits ----

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkRecord {
    pub audio_path: String,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "split_rule", content = "params", rename_all = "lowercase")]
pub enum SplitRule {
    Folds { train_folds: Vec<u32>, test_fold: u32 },
    Stratified { test_frac: f64, seed: u64 },
}

/// Sidecar metadata stored next to a benchmark manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMeta {
    pub benchmark_name: String,
    pub n_classes: usize,
    #[serde(flatten)]
    pub rule: SplitRule,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub meta: BenchmarkMeta,
    pub records: Vec<BenchmarkRecord>,
    pub manifest_path: PathBuf,
}

/// `<stem>.jsonl` → `<stem>.meta.json`.
pub fn sidecar_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("meta.json")
}

impl Benchmark {
    pub fn load(manifest: &Path) -> Result<Self> {
        let meta_path = sidecar_path(manifest);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: BenchmarkMeta = serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: meta_path.clone(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let body = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let mut records = Vec::new();
        for (i, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: BenchmarkRecord = serde_json::from_str(line).map_err(|e| Error::Manifest {
                path: manifest.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            if rec.label >= meta.n_classes {
                return Err(Error::Manifest {
                    path: manifest.to_path_buf(),
                    line: i + 1,
                    msg: format!("label {} outside [0, {})", rec.label, meta.n_classes),
                });
            }
            records.push(rec);
        }
        Ok(Self {
            meta,
            records,
            manifest_path: manifest.to_path_buf(),
        })
    }

    pub fn save(&self) -> Result<()> {
        data::write_jsonl(&self.manifest_path, &self.records)?;
        let meta_path = sidecar_path(&self.manifest_path);
        let json = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))
    }

    /// Train and test indices under the benchmark's split rule.
    pub fn split(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        match &self.meta.rule {
            SplitRule::Folds {
                train_folds,
                test_fold,
            } => split_folds(&self.records, &train_folds.iter().copied().collect(), *test_fold),
            SplitRule::Stratified { test_frac, seed } => {
                split_stratified(&self.records, *test_frac, *seed)
            }
        }
    }
}

/// Partitions records by fold id. Records in neither set are left out.
pub fn split_folds(
    records: &[BenchmarkRecord],
    train_folds: &BTreeSet<u32>,
    test_fold: u32,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if train_folds.contains(&test_fold) {
        return Err(Error::Split(format!(
            "fold {test_fold} requested as both train and test"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let fold = r
            .fold
            .ok_or_else(|| Error::Split(format!("record {} ({}) has no fold", i, r.audio_path)))?;
        if fold == test_fold {
            test.push(i);
        } else if train_folds.contains(&fold) {
            train.push(i);
        }
    }
    if test.is_empty() {
        return Err(Error::Split(format!("test fold {test_fold} is empty")));
    }
    Ok((train, test))
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Index of the most populous class; ties go to the lowest label.
pub fn largest_class(by_class: &[Vec<usize>]) -> usize {
    let mut best = 0;
    for (c, members) in by_class.iter().enumerate() {
        if members.len() > by_class[best].len() {
            best = c;
        }
    }
    best
}

/// Per-class seeded split. Each class sends `round(test_frac * n_c)` records
/// (half rounds up) to test; if the total then differs from
/// `round(test_frac * N)`, the largest class gives or takes one record.
pub fn split_stratified(
    records: &[BenchmarkRecord],
    test_frac: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::Split(format!("test_frac {test_frac} outside (0, 1)")));
    }
    let n_classes = records.iter().map(|r| r.label + 1).max().unwrap_or(0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, r) in records.iter().enumerate() {
        by_class[r.label].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.len() == 1 {
            return Err(Error::Split(format!("class {c} has a single record")));
        }
    }
    let mut n_test: Vec<usize> = by_class
        .iter()
        .map(|m| round_half_up(test_frac * m.len() as f64))
        .collect();
    let target = round_half_up(test_frac * records.len() as f64);
    let assigned: usize = n_test.iter().sum();
    if assigned != target {
        let largest = largest_class(&by_class);
        let cap = by_class[largest].len() - 1;
        n_test[largest] = if assigned > target {
            n_test[largest].saturating_sub(1)
        } else {
            (n_test[largest] + 1).min(cap)
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (members, &k) in by_class.iter().zip(&n_test) {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        test.extend_from_slice(&shuffled[..k]);
        train.extend_from_slice(&shuffled[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

// ---- feature extraction ----

/// Number of encoder frames that overlap real audio for a clip of
/// `n_samples` at the frontend rate.
pub fn content_frames(n_samples: usize, hop: usize, total_frames: usize) -> usize {
    let mel_frames = n_samples.div_ceil(hop);
    mel_frames.div_ceil(2).clamp(1, total_frames)
}

/// Mel input for probing plus the number of frames that cover real audio.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeInput {
    pub mel: MelSpectrogram,
    pub content_frames: usize,
}

pub fn prepare_clip(frontend: &MelFrontend, clip: &AudioClip) -> Result<ProbeInput> {
    let cfg = frontend.config();
    let mel = frontend.process(clip)?;
    let resampled_len =
        (clip.samples().len() as f64 * f64::from(cfg.target_rate_hz) / f64::from(clip.sample_rate_hz()))
            .round() as usize;
    let n = resampled_len.min(cfg.window_samples());
    Ok(ProbeInput {
        content_frames: content_frames(n, cfg.hop, mel.n_frames() / 2),
        mel,
    })
}

/// Mean-pooled encoder features.
pub fn embed(encoder: &Encoder<f32>, input: &ProbeInput, exclude_padding: bool) -> Result<Vec<f64>> {
    let h = encoder.encode(&input.mel)?;
    let d = h.d_model();
    let frames = if exclude_padding {
        input.content_frames.min(h.n_frames())
    } else {
        h.n_frames()
    };
    let mut acc = vec![0.0f64; d];
    for i in 0..frames {
        for (a, &x) in acc.iter_mut().zip(h.frame(i)) {
            *a += f64::from(x);
        }
    }
    Ok(acc.into_iter().map(|a| a / frames as f64).collect())
}

pub fn embed_clip(
    encoder: &Encoder<f32>,
    frontend: &MelFrontend,
    clip: &AudioClip,
    exclude_padding: bool,
) -> Result<Vec<f64>> {
    embed(encoder, &prepare_clip(frontend, clip)?, exclude_padding)
}

/// Features for every input, in input order.
pub fn extract_features(
    encoder: &Encoder<f32>,
    inputs: &[ProbeInput],
    exclude_padding: bool,
) -> Result<Vec<Vec<f64>>> {
    inputs
        .par_iter()
        .map(|x| embed(encoder, x, exclude_padding))
        .collect()
}

/// A benchmark with its mel inputs computed once and its split resolved.
#[derive(Clone, Debug)]
pub struct PreparedBenchmark {
    pub benchmark: Benchmark,
    pub inputs: Vec<ProbeInput>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl PreparedBenchmark {
    pub fn new(benchmark: Benchmark, frontend: &MelFrontend) -> Result<Self> {
        let (train, test) = benchmark.split()?;
        let manifest = benchmark.manifest_path.clone();
        let inputs = benchmark
            .records
            .par_iter()
            .map(|r| {
                let clip = read_wav(&data::resolve_audio(&manifest, &r.audio_path))?;
                prepare_clip(frontend, &clip)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            benchmark,
            inputs,
            train,
            test,
        })
    }

    pub fn load(manifest: &Path, frontend: &MelFrontend) -> Result<Self> {
        Self::new(Benchmark::load(manifest)?, frontend)
    }

    pub fn name(&self) -> &str {
        &self.benchmark.meta.benchmark_name
    }

    pub fn feature_vectors(&self, features: Vec<Vec<f64>>) -> Vec<FeatureVector> {
        let mut out = Vec::with_capacity(self.train.len() + self.test.len());
        for (idx, split) in [(&self.train, Split::Train), (&self.test, Split::Test)] {
            for &i in idx {
                out.push(FeatureVector {
                    values: features[i].clone(),
                    label: self.benchmark.records[i].label,
                    split,
                });
            }
        }
        out
    }
}

/// Probes one encoder on one prepared benchmark.
pub fn probe_encoder(
    encoder: &Encoder<f32>,
    encoder_id: &str,
    bench: &PreparedBenchmark,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let feats = extract_features(encoder, &bench.inputs, cfg.exclude_padding)?;
    let (_, mut report) = train_probe(
        &bench.feature_vectors(feats),
        bench.benchmark.meta.n_classes,
        cfg,
    )?;
    report.benchmark = bench.name().to_string();
    report.encoder_id = encoder_id.to_string();
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub benchmark: String,
    /// Accuracies in percent, delta in percentage points.
    pub baseline: f64,
    pub adapted: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline_id: String,
    pub adapted_id: String,
    pub rows: Vec<ComparisonRow>,
    pub baseline_reports: Vec<ProbeReport>,
    pub adapted_reports: Vec<ProbeReport>,
}

/// Probes both encoders with identical inputs, splits and settings.
pub fn compare_encoders(
    baseline: &EncoderCheckpoint,
    adapted: &EncoderCheckpoint,
    benchmarks: &[PreparedBenchmark],
    cfg: &ProbeConfig,
) -> Result<Comparison> {
    let (db, da) = (baseline.config().d_model, adapted.config().d_model);
    if db != da {
        return Err(Error::Comparison(format!(
            "baseline d_model {db} differs from adapted d_model {da}"
        )));
    }
    let mut rows = Vec::new();
    let mut base_reports = Vec::new();
    let mut adapt_reports = Vec::new();
    for bench in benchmarks {
        let rb = probe_encoder(&baseline.encoder, &baseline.hash, bench, cfg)?;
        let mut ra = probe_encoder(&adapted.encoder, &adapted.hash, bench, cfg)?;
        let delta = 100.0 * ra.accuracy - 100.0 * rb.accuracy;
        ra.delta = Some(delta);
        rows.push(ComparisonRow {
            benchmark: bench.name().to_string(),
            baseline: 100.0 * rb.accuracy,
            adapted: 100.0 * ra.accuracy,
            delta,
        });
        base_reports.push(rb);
        adapt_reports.push(ra);
    }
    Ok(Comparison {
        baseline_id: baseline.hash.clone(),
        adapted_id: adapted.hash.clone(),
        rows,
        baseline_reports: base_reports,
        adapted_reports: adapt_reports,
    })
}

impl Comparison {
    pub fn render_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.benchmark.len())
            .max()
            .unwrap_or(0)
            .max("Benchmark".len());
        let mut s = String::new();
        writeln!(s, "{:<width$}  {:>8}  {:>8}  {:>8}", "Benchmark", "Baseline", "Adapted", "Delta").unwrap();
        writeln!(s, "{}", "-".repeat(width + 30)).unwrap();
        for r in &self.rows {
            writeln!(
                s,
                "{:<width$}  {:>8.2}  {:>8.2}  {:>+8.2}",
                r.benchmark, r.baseline, r.adapted, r.delta
            )
            .unwrap();
        }
        s
    }

    pub fn render_csv(&self) -> String {
        let mut s = String::from("benchmark,baseline,adapted,delta\n");
        for r in &self.rows {
            writeln!(s, "{},{:.2},{:.2},{:.2}", r.benchmark, r.baseline, r.adapted, r.delta).unwrap();
        }
        s
    }
}

// ---- synthetic benchmark trio ----

pub fn benchmark_name(domain: Domain) -> &'static str {
    match domain {
        Domain::Speech => "synth-keywords",
        Domain::Sound => "synth-environment",
        Domain::Music => "synth-genre",
    }
}

/// Writes a synthetic single-label benchmark for `domain` under `out_dir`:
/// `<name>.jsonl`, `<name>.meta.json` and `<name>/*.wav`. Speech and sound
/// use five folds (1-4 train, 5 test); music uses a stratified 80/20 split.
pub fn write_synthetic_benchmark(
    out_dir: &Path,
    domain: Domain,
    n_per_class: usize,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<PathBuf> {
    let name = benchmark_name(domain);
    let audio_dir = out_dir.join(name);
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let n_classes = synth::n_classes(domain);
    let folds = domain != Domain::Music;
    let jobs: Vec<(usize, usize)> = (0..n_per_class)
        .flat_map(|i| (0..n_classes).map(move |c| (c, i)))
        .collect();
    let records = jobs
        .par_iter()
        .enumerate()
        .map(|(k, &(label, i))| {
            // distinct seed stream from training corpora
            let s = synth::clip_seed(seed ^ 0x5EED_BE4C_0000_0000, domain, k as u64);
            let clip = synth::generate_probe_clip(cfg, domain, label, s);
            let rel = format!("{name}/{k:05}.wav");
            write_wav(&out_dir.join(&rel), &clip.clip)?;
            Ok(BenchmarkRecord {
                audio_path: rel,
                label,
                fold: folds.then_some((i % 5) as u32 + 1),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rule = if folds {
        SplitRule::Folds {
            train_folds: vec![1, 2, 3, 4],
            test_fold: 5,
        }
    } else {
        SplitRule::Stratified {
            test_frac: 0.2,
            seed,
        }
    };
    let manifest_path = out_dir.join(format!("{name}.jsonl"));
    Benchmark {
        meta: BenchmarkMeta {
            benchmark_name: name.to_string(),
            n_classes,
            rule,
        },
        records,
        manifest_path: manifest_path.clone(),
    }
    .save()?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(label: usize, fold: Option<u32>) -> BenchmarkRecord {
        BenchmarkRecord {
            audio_path: String::new(),
            label,
            fold,
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn same_fold_train_and_test_is_rejected() {
        let r = vec![rec(0, Some(1)), rec(0, Some(2))];
        let train: BTreeSet<u32> = [1].into();
        assert!(matches!(split_folds(&r, &train, 1), Err(Error::Split(_))));
        assert!(matches!(split_folds(&r, &train, 3), Err(Error::Split(_))));
    }

    #[test]
    fn stratified_rounding_by_hand() {
        let mut r: Vec<_> = (0..7).map(|_| rec(0, None)).collect();
        r.extend((0..13).map(|_| rec(1, None)));
        let (_, test) = split_stratified(&r, 0.2, 5).unwrap();
        let c0 = test.iter().filter(|&&i| r[i].label == 0).count();
        let c1 = test.len() - c0;
        assert_eq!((c0, c1), (1, 3));
    }

    #[test]
    fn single_record_class_is_rejected() {
        let r = vec![rec(0, None), rec(0, None), rec(1, None)];
        assert!(matches!(split_stratified(&r, 0.2, 0), Err(Error::Split(_))));
    }

    #[test]
    fn sidecar_json_shape() {
        let m = BenchmarkMeta {
            benchmark_name: "x".into(),
            n_classes: 3,
            rule: SplitRule::Folds {
                train_folds: vec![1, 2],
                test_fold: 3,
            },
        };
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["split_rule"], "folds");
        assert_eq!(v["params"]["test_fold"], 3);
        let back: BenchmarkMeta = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn content_frames_of_short_clip() {
        // 5 s at hop 160 → 500 mel frames → 250 encoder frames
        assert_eq!(content_frames(80_000, 160, 1500), 250);
        assert_eq!(content_frames(10_000_000, 160, 1500), 1500);
    }
}
