//! Waveform to log-mel conversion.
//!
//! The pipeline is: mono PCM → linear-interpolation resampling to 16 kHz →
//! right zero-pad or truncate to a fixed window → Hann-windowed STFT
//! (`n_fft` 400, hop 160, reflect-padded centering) → power spectrum →
//! Slaney-style area-normalized mel filterbank → `log10(max(p, floor))` →
//! clamp to `max - 8` and map through `(x + 4) / 4`.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono waveform with amplitudes nominally in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidAudio("clip has no samples".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::InvalidAudio("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidAudio(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub target_rate_hz: u32,
    pub window_s: f64,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            target_rate_hz: 16_000,
            window_s: 30.0,
            n_fft: 400,
            hop: 160,
            n_mels: 128,
            log_floor: 1e-10,
        }
    }
}

impl FrontendConfig {
    pub fn window_samples(&self) -> usize {
        (self.window_s * f64::from(self.target_rate_hz)).round() as usize
    }

    /// Mel frames produced for one full window.
    pub fn n_frames(&self) -> usize {
        self.window_samples() / self.hop
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("frontend: {m}")));
        if self.target_rate_hz == 0 || self.hop == 0 || self.n_fft == 0 || self.n_mels == 0 {
            return bad("rates and sizes must be positive");
        }
        if !(self.window_s > 0.0) {
            return bad("window_s must be positive");
        }
        let w = self.window_samples();
        if (self.window_s * f64::from(self.target_rate_hz) - w as f64).abs() > 1e-6 {
            return bad("window_s x target_rate_hz must be an integer sample count");
        }
        if w % self.hop != 0 {
            return bad("hop must divide the window sample count");
        }
        if self.n_fft < self.hop {
            return bad("n_fft must be at least hop");
        }
        if w <= self.n_fft / 2 {
            return bad("window too short for reflect padding");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        Ok(())
    }
}

/// Log-mel feature matrix, stored mel-major: `values[m * n_frames + t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f32>,
    n_mels: usize,
    n_frames: usize,
}

impl MelSpectrogram {
    pub fn new(values: Vec<f32>, n_mels: usize, n_frames: usize) -> Result<Self> {
        if values.len() != n_mels * n_frames || values.is_empty() {
            return Err(Error::shape(format!(
                "mel buffer of {} values for {n_mels} x {n_frames}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite mel value".into()));
        }
        Ok(Self {
            values,
            n_mels,
            n_frames,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * self.n_frames + frame]
    }

    /// Time-major copy, `[n_frames, n_mels]`, the layout the encoder consumes.
    pub fn to_time_major(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.values.len()];
        for m in 0..self.n_mels {
            for t in 0..self.n_frames {
                out[t * self.n_mels + m] = self.values[m * self.n_frames + t];
            }
        }
        out
    }
}

/// Linear-interpolation resampling.
pub fn resample(clip: &AudioClip, target_rate_hz: u32) -> Result<AudioClip> {
    if target_rate_hz == 0 {
        return Err(Error::InvalidAudio("target rate must be positive".into()));
    }
    let src = clip.sample_rate_hz();
    if src == target_rate_hz {
        return Ok(clip.clone());
    }
    let x = clip.samples();
    let n = x.len() as u64;
    let n_out = ((n * u64::from(target_rate_hz) + u64::from(src) / 2) / u64::from(src)).max(1);
    let step = f64::from(src) / f64::from(target_rate_hz);
    let last = x.len() - 1;
    let out = (0..n_out)
        .map(|i| {
            let pos = i as f64 * step;
            let i0 = (pos.floor() as usize).min(last);
            let frac = (pos - i0 as f64).clamp(0.0, 1.0);
            let i1 = (i0 + 1).min(last);
            (f64::from(x[i0]) * (1.0 - frac) + f64::from(x[i1]) * frac) as f32
        })
        .collect();
    AudioClip::new(out, target_rate_hz)
}

/// Zero-pads on the right or truncates to `round(window_s * rate)` samples.
pub fn pad_or_truncate(clip: &AudioClip, window_s: f64) -> AudioClip {
    let target = (window_s * f64::from(clip.sample_rate_hz())).round().max(1.0) as usize;
    let mut samples = clip.samples().to_vec();
    samples.resize(target, 0.0);
    AudioClip {
        samples,
        sample_rate_hz: clip.sample_rate_hz(),
    }
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        F_SP * mel
    }
}

/// Triangular, area-normalized filterbank spanning 0 Hz to Nyquist.
/// Returned row-major as `[n_mels, n_fft / 2 + 1]`.
pub fn mel_filterbank(sample_rate_hz: u32, n_fft: usize, n_mels: usize) -> Vec<f64> {
    let n_bins = n_fft / 2 + 1;
    let sr = f64::from(sample_rate_hz);
    let fft_freqs: Vec<f64> = (0..n_bins).map(|k| k as f64 * sr / n_fft as f64).collect();
    let mel_max = hz_to_mel(sr / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut weights = vec![0.0; n_mels * n_bins];
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let enorm = 2.0 / (hi - lo);
        for (k, &f) in fft_freqs.iter().enumerate() {
            let rise = (f - lo) / (center - lo);
            let fall = (hi - f) / (hi - center);
            weights[m * n_bins + k] = rise.min(fall).max(0.0) * enorm;
        }
    }
    weights
}

/// Reusable STFT + filterbank state for one [`FrontendConfig`].
#[derive(Clone)]
pub struct MelFrontend {
    cfg: FrontendConfig,
    window: Vec<f64>,
    filters: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MelFrontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelFrontend").field("cfg", &self.cfg).finish()
    }
}

impl MelFrontend {
    pub fn new(cfg: FrontendConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_fft;
        // periodic Hann
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let filters = mel_filterbank(cfg.target_rate_hz, cfg.n_fft, cfg.n_mels);
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self {
            cfg,
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    /// `log10(max(mel_power, floor))` before the clamp and affine map,
    /// mel-major `[n_mels, n_frames]`.
    pub fn log_mel_unnormalized(&self, clip: &AudioClip) -> Result<Vec<f64>> {
        let cfg = &self.cfg;
        if clip.sample_rate_hz() != cfg.target_rate_hz {
            return Err(Error::InvalidAudio(format!(
                "clip at {} Hz, frontend expects {} Hz",
                clip.sample_rate_hz(),
                cfg.target_rate_hz
            )));
        }
        let want = cfg.window_samples();
        if clip.samples().len() != want {
            return Err(Error::InvalidAudio(format!(
                "clip has {} samples, frontend expects exactly {want}",
                clip.samples().len()
            )));
        }
        let pad = cfg.n_fft / 2;
        let x = clip.samples();
        let len = x.len();
        // reflect padding, excluding the edge sample
        let padded: Vec<f64> = (0..len + 2 * pad)
            .map(|i| {
                let j = i as isize - pad as isize;
                let idx = if j < 0 {
                    (-j) as usize
                } else if j as usize >= len {
                    2 * (len - 1) - j as usize
                } else {
                    j as usize
                };
                f64::from(x[idx])
            })
            .collect();

        let n_frames = cfg.n_frames();
        let n_bins = cfg.n_fft / 2 + 1;
        let n_mels = cfg.n_mels;
        let mut out = vec![0.0; n_mels * n_frames];
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_bins];
        for t in 0..n_frames {
            let start = t * cfg.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(padded[start + i] * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for m in 0..n_mels {
                let row = &self.filters[m * n_bins..(m + 1) * n_bins];
                let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
                out[m * n_frames + t] = e.max(cfg.log_floor).log10();
            }
        }
        Ok(out)
    }

    pub fn log_mel(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        let mut raw = self.log_mel_unnormalized(clip)?;
        normalize_log_mel(&mut raw);
        let values = raw.into_iter().map(|v| v as f32).collect();
        MelSpectrogram::new(values, self.cfg.n_mels, self.cfg.n_frames())
    }

    /// Resample, fit to the window, and convert.
    pub fn process(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        let at_rate = resample(clip, self.cfg.target_rate_hz)?;
        let fitted = pad_or_truncate(&at_rate, self.cfg.window_s);
        self.log_mel(&fitted)
    }

    pub fn process_file(&self, path: &Path) -> Result<MelSpectrogram> {
        self.process(&read_wav(path)?)
    }
}

/// Clamp to `max - 8`, then `(x + 4) / 4`.
pub fn normalize_log_mel(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for v in values.iter_mut() {
        *v = (v.max(max - 8.0) + 4.0) / 4.0;
    }
}

pub fn log_mel(clip: &AudioClip, cfg: &FrontendConfig) -> Result<MelSpectrogram> {
    MelFrontend::new(cfg.clone())?.log_mel(clip)
}

/// Reads a PCM WAV (integer or float samples); channels are averaged to mono.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels.max(1));
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / frame.len() as f32)
        .collect();
    AudioClip::new(mono, spec.sample_rate).map_err(|e| match e {
        Error::InvalidAudio(m) => Error::InvalidAudio(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes a mono 16-bit PCM WAV.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in clip.samples() {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::InvalidAudio(format!("{}: {other}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_cfg() -> FrontendConfig {
        FrontendConfig {
            window_s: 1.0,
            ..FrontendConfig::default()
        }
    }

    #[test]
    fn resample_at_target_rate_is_identity() {
        let clip = AudioClip::new(vec![0.1, -0.2, 0.3], 16_000).unwrap();
        assert_eq!(resample(&clip, 16_000).unwrap(), clip);
    }

    #[test]
    fn resample_constant_doubles_length() {
        let clip = AudioClip::new(vec![0.5; 8000], 8000).unwrap();
        let up = resample(&clip, 16_000).unwrap();
        assert_eq!(up.samples().len(), 16_000);
        assert!(up.samples().iter().all(|&s| s == 0.5));
    }

    #[test]
    fn resample_sine_matches_analytic_samples() {
        let f = 100.0;
        let src: Vec<f32> = (0..48_000)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 48_000.0).sin() as f32)
            .collect();
        let out = resample(&AudioClip::new(src, 48_000).unwrap(), 16_000).unwrap();
        assert_eq!(out.samples().len(), 16_000);
        for (i, &s) in out.samples().iter().enumerate() {
            let want = (2.0 * std::f64::consts::PI * f * i as f64 / 16_000.0).sin();
            assert!((f64::from(s) - want).abs() < 1e-3, "sample {i}");
        }
    }

    #[test]
    fn empty_clip_is_invalid() {
        assert!(matches!(
            AudioClip::new(vec![], 16_000),
            Err(Error::InvalidAudio(_))
        ));
        assert!(AudioClip::new(vec![f32::NAN], 16_000).is_err());
    }

    #[test]
    fn pad_and_truncate_to_window() {
        let ten = AudioClip::new(vec![0.25; 160_000], 16_000).unwrap();
        let padded = pad_or_truncate(&ten, 30.0);
        assert_eq!(padded.samples().len(), 480_000);
        assert!(padded.samples()[160_000..].iter().all(|&s| s == 0.0));

        let long: Vec<f32> = (0..720_000).map(|i| (i % 7) as f32 / 7.0).collect();
        let cut = pad_or_truncate(&AudioClip::new(long.clone(), 16_000).unwrap(), 30.0);
        assert_eq!(cut.samples(), &long[..480_000]);

        let exact = AudioClip::new(vec![0.1; 480_000], 16_000).unwrap();
        assert_eq!(pad_or_truncate(&exact, 30.0), exact);
    }

    #[test]
    fn wrong_length_is_rejected() {
        let fe = MelFrontend::new(short_cfg()).unwrap();
        let clip = AudioClip::new(vec![0.0; 15_999], 16_000).unwrap();
        assert!(matches!(fe.log_mel(&clip), Err(Error::InvalidAudio(_))));
    }

    #[test]
    fn silence_maps_to_one_constant() {
        let fe = MelFrontend::new(short_cfg()).unwrap();
        let mel = fe.log_mel(&AudioClip::new(vec![0.0; 16_000], 16_000).unwrap()).unwrap();
        assert_eq!(mel.n_frames(), 100);
        // log10(1e-10) = -10, normalized (-10 + 4) / 4
        assert!(mel.values().iter().all(|&v| v == -1.5));
    }

    #[test]
    fn filterbank_rows_are_area_normalized_triangles() {
        let fb = mel_filterbank(16_000, 400, 128);
        assert_eq!(fb.len(), 128 * 201);
        assert!(fb.iter().all(|&w| w >= 0.0));
        // every filter touches at least one FFT bin above 200 Hz
        for m in 10..128 {
            assert!(fb[m * 201..(m + 1) * 201].iter().any(|&w| w > 0.0), "filter {m}");
        }
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 250.0, 999.0, 1000.0, 4321.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn config_validation() {
        assert!(FrontendConfig::default().validate().is_ok());
        let bad = FrontendConfig {
            hop: 7,
            ..FrontendConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = FrontendConfig {
            log_floor: 0.0,
            ..FrontendConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn wav_round_trip_and_stereo_downmix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let clip = AudioClip::new(vec![0.5, -0.25, 0.0, 1.0], 16_000).unwrap();
        write_wav(&path, &clip).unwrap();
        let back = read_wav(&path).unwrap();
        for (a, b) in back.samples().iter().zip(clip.samples()) {
            assert!((a - b).abs() < 1e-4);
        }

        let stereo = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        for (l, r) in [(1.0f32, 0.0f32), (0.5, 0.5), (-1.0, 0.0)] {
            w.write_sample(l).unwrap();
            w.write_sample(r).unwrap();
        }
        w.finalize().unwrap();
        let mono = read_wav(&stereo).unwrap();
        assert_eq!(mono.sample_rate_hz(), 8000);
        assert_eq!(mono.samples(), &[0.5, 0.5, -0.5]);
    }
}
