//! Browser bindings: a synthetic clip's log-mel heatmap, the learning-rate
//! schedule, and a mixture-sampling histogram.

use audapt_core::data::{CorpusRecord, Domain, MixtureSampler, MixtureSpec};
use audapt_core::frontend::{FrontendConfig, MelFrontend};
use audapt_core::optim::lr_at;
use audapt_core::synth::{self, generate_probe_clip, SynthConfig};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Normalized log-mel matrix, mel-major (`values[m * n_frames + t]`).
#[wasm_bindgen]
pub struct Heatmap {
    n_mels: usize,
    n_frames: usize,
    values: Vec<f32>,
    caption: String,
}

#[wasm_bindgen]
impl Heatmap {
    #[wasm_bindgen(getter)]
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    #[wasm_bindgen(getter)]
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f32> {
        self.values.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn caption(&self) -> String {
        self.caption.clone()
    }
}

/// Class names for `domain` ("speech", "sound" or "music").
#[wasm_bindgen]
pub fn class_names(domain: &str) -> Result<Vec<String>, JsError> {
    let d: Domain = domain.parse().map_err(js_err)?;
    Ok(synth::class_names(d).iter().map(|s| s.to_string()).collect())
}

/// Synthesizes one clip of class `label` and runs it through the frontend
/// with a `window_s`-second window.
#[wasm_bindgen]
pub fn synth_log_mel(domain: &str, label: usize, seed: u64, window_s: f64) -> Result<Heatmap, JsError> {
    let d: Domain = domain.parse().map_err(js_err)?;
    if label >= synth::n_classes(d) {
        return Err(js_err(format!("{domain} has {} classes", synth::n_classes(d))));
    }
    let clip = generate_probe_clip(&SynthConfig::default(), d, label, seed);
    let fe = MelFrontend::new(FrontendConfig {
        window_s,
        ..FrontendConfig::default()
    })
    .map_err(js_err)?;
    let mel = fe.process(&clip.clip).map_err(js_err)?;
    Ok(Heatmap {
        n_mels: mel.n_mels(),
        n_frames: mel.n_frames(),
        values: mel.values().to_vec(),
        caption: clip.text,
    })
}

/// Learning rate at every step `0..=total_steps`.
#[wasm_bindgen]
pub fn lr_curve(total_steps: usize, peak: f64, warmup_frac: f64) -> Result<Vec<f64>, JsError> {
    if !(warmup_frac > 0.0 && warmup_frac < 1.0) {
        return Err(js_err("warmup fraction must lie in (0, 1)"));
    }
    (0..=total_steps)
        .map(|s| lr_at(s, total_steps, peak, warmup_frac).map_err(js_err))
        .collect()
}

/// Domain counts (speech, sound, music) over `draws` seeded single-slot draws.
#[wasm_bindgen]
pub fn mixture_histogram(speech: f64, sound: f64, music: f64, draws: usize, seed: u64) -> Result<Vec<u32>, JsError> {
    let spec = MixtureSpec::new(speech, sound, music).map_err(js_err)?;
    let manifest: Vec<CorpusRecord> = Domain::ALL
        .iter()
        .map(|&domain| CorpusRecord {
            audio_path: String::new(),
            text: String::new(),
            domain,
        })
        .collect();
    let sampler = MixtureSampler::new(&manifest, spec).map_err(js_err)?;
    let mut counts = vec![0u32; 3];
    for i in sampler.sample_indices(draws, seed) {
        counts[i] += 1;
    }
    Ok(counts)
}
