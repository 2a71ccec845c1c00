//! Parametric synthetic audio for the three domains.
//!
//! * speech: formant-synthesized keywords from a 12-word vocabulary; the
//!   text is the transcript.
//! * sound: ten environmental event types built from filtered noise, tones
//!   and clicks with characteristic temporal patterns.
//! * music: ten genre-like styles differing in tempo, chord quality,
//!   rhythm and timbre, transposed to a random key.
//!
//! Every clip draws its own nuisance parameters (gain, background noise,
//! onset offset, speaker/key/tempo) from a seeded generator, so corpora and
//! benchmarks are reproducible bit for bit.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{self, CorpusRecord, Domain};
use crate::error::{Error, Result};
use crate::frontend::{write_wav, AudioClip};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub sample_rate_hz: u32,
    pub min_dur_s: f64,
    pub max_dur_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            min_dur_s: 1.0,
            max_dur_s: 3.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz < 8000 {
            return Err(Error::Config("synth: sample_rate_hz must be at least 8000".into()));
        }
        if !(self.min_dur_s > 0.0 && self.max_dur_s >= self.min_dur_s) {
            return Err(Error::Config(
                "synth: need 0 < min_dur_s <= max_dur_s".into(),
            ));
        }
        Ok(())
    }
}

pub const KEYWORDS: [&str; 12] = [
    "yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go", "one", "two",
];

pub const SOUND_CLASSES: [&str; 10] = [
    "dog bark",
    "rain",
    "siren",
    "clock tick",
    "engine",
    "door knock",
    "bird chirp",
    "wind",
    "glass breaking",
    "water drip",
];

pub const MUSIC_CLASSES: [&str; 10] = [
    "classical",
    "blues",
    "metal",
    "jazz",
    "reggae",
    "disco",
    "country",
    "hiphop",
    "pop",
    "rock",
];

pub fn n_classes(domain: Domain) -> usize {
    match domain {
        Domain::Speech => KEYWORDS.len(),
        Domain::Sound => SOUND_CLASSES.len(),
        Domain::Music => MUSIC_CLASSES.len(),
    }
}

pub fn class_names(domain: Domain) -> &'static [&'static str] {
    match domain {
        Domain::Speech => &KEYWORDS,
        Domain::Sound => &SOUND_CLASSES,
        Domain::Music => &MUSIC_CLASSES,
    }
}

/// Deterministic per-clip seed.
pub fn clip_seed(base: u64, domain: Domain, index: u64) -> u64 {
    let mut z = base
        .wrapping_add((domain.index() as u64 + 1).wrapping_mul(0xD6E8_FEB8_6659_FD93))
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 32)).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    z ^ (z >> 32)
}

// ---- DSP building blocks ----

struct Buf {
    sr: f64,
    x: Vec<f64>,
}

impl Buf {
    fn new(sr: u32, dur_s: f64) -> Self {
        Self {
            sr: f64::from(sr),
            x: vec![0.0; (dur_s * f64::from(sr)).round().max(1.0) as usize],
        }
    }

    fn len_s(&self) -> f64 {
        self.x.len() as f64 / self.sr
    }

    fn idx(&self, t: f64) -> usize {
        ((t * self.sr).round().max(0.0) as usize).min(self.x.len())
    }

    fn add(&mut self, start_s: f64, sig: &[f64], gain: f64) {
        let s = self.idx(start_s);
        for (dst, v) in self.x[s..].iter_mut().zip(sig) {
            *dst += gain * v;
        }
    }
}

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// RBJ band-pass (constant peak gain), applied in place.
fn bandpass(x: &mut [f64], sr: f64, center: f64, q: f64) {
    let center = center.clamp(20.0, sr * 0.45);
    let w0 = 2.0 * PI * center / sr;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let a1 = -2.0 * w0.cos() / a0;
    let a2 = (1.0 - alpha) / a0;
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in x.iter_mut() {
        let y = b0 * *v + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = *v;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

fn band_noise(rng: &mut ChaCha8Rng, sr: f64, dur: f64, lo: f64, hi: f64) -> Vec<f64> {
    let n = (dur * sr).round().max(1.0) as usize;
    let mut x = white(rng, n);
    let center = (lo * hi).sqrt();
    let q = (center / (hi - lo).max(1.0)).max(0.3);
    bandpass(&mut x, sr, center, q);
    bandpass(&mut x, sr, center, q);
    normalize_peak(&mut x);
    x
}

fn normalize_peak(x: &mut [f64]) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v /= peak);
    }
}

/// Attack/decay envelope over `n` samples.
fn envelope(n: usize, sr: f64, attack_s: f64, release_s: f64) -> Vec<f64> {
    let a = ((attack_s * sr) as usize).max(1);
    let r = ((release_s * sr) as usize).max(1);
    (0..n)
        .map(|i| {
            let up = (i as f64 / a as f64).min(1.0);
            let down = ((n - i) as f64 / r as f64).min(1.0);
            up.min(down)
        })
        .collect()
}

fn decay_env(n: usize, sr: f64, tau_s: f64) -> Vec<f64> {
    (0..n).map(|i| (-(i as f64) / (tau_s * sr)).exp()).collect()
}

fn apply(x: &mut [f64], env: &[f64]) {
    x.iter_mut().zip(env).for_each(|(v, e)| *v *= e);
}

/// Sum of harmonics of a (possibly gliding) fundamental with a spectral
/// weight per harmonic frequency.
fn harmonic_tone(
    rng: &mut ChaCha8Rng,
    sr: f64,
    dur: f64,
    f0_start: f64,
    f0_end: f64,
    max_hz: f64,
    weight: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let n = (dur * sr).round().max(1.0) as usize;
    let n_harm = ((max_hz / f0_start.max(f0_end)).floor() as usize).clamp(1, 60);
    let mut out = vec![0.0; n];
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let weights: Vec<f64> = (1..=n_harm)
        .map(|k| weight(k as f64 * 0.5 * (f0_start + f0_end)))
        .collect();
    let mut phase = 0.0;
    for (i, o) in out.iter_mut().enumerate() {
        let f0 = f0_start + (f0_end - f0_start) * i as f64 / n as f64;
        phase += 2.0 * PI * f0 / sr;
        let mut s = 0.0;
        for k in 0..n_harm {
            if (k + 1) as f64 * f0 < sr * 0.45 {
                s += weights[k] * ((k + 1) as f64 * phase + phases[k]).sin();
            }
        }
        *o = s;
    }
    normalize_peak(&mut out);
    out
}

fn sine(sr: f64, dur: f64, f_start: f64, f_end: f64) -> Vec<f64> {
    let n = (dur * sr).round().max(1.0) as usize;
    let mut phase = 0.0;
    (0..n)
        .map(|i| {
            let f = f_start + (f_end - f_start) * i as f64 / n as f64;
            phase += 2.0 * PI * f / sr;
            phase.sin()
        })
        .collect()
}

fn midi_hz(note: f64) -> f64 {
    440.0 * 2f64.powf((note - 69.0) / 12.0)
}

/// Final gain, background noise, and conversion.
fn finish(rng: &mut ChaCha8Rng, mut buf: Buf) -> Vec<f32> {
    normalize_peak(&mut buf.x);
    let gain = rng.gen_range(0.25..0.8);
    let noise_level = rng.gen_range(0.002..0.03);
    let noise = white(rng, buf.x.len());
    buf.x
        .iter()
        .zip(noise)
        .map(|(v, n)| (gain * v + noise_level * n).clamp(-1.0, 1.0) as f32)
        .collect()
}

fn duration(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> f64 {
    if cfg.max_dur_s > cfg.min_dur_s {
        rng.gen_range(cfg.min_dur_s..=cfg.max_dur_s)
    } else {
        cfg.min_dur_s
    }
}

// ---- speech ----

#[derive(Clone, Copy)]
enum Seg {
    Vowel(usize, f64),
    Fric(f64, f64, f64),
    Burst(f64, f64),
    Nasal(f64),
}

// (F1, F2) in Hz: a, i, u, e, o, uh, r
const VOWELS: [(f64, f64); 7] = [
    (730.0, 1090.0),
    (270.0, 2290.0),
    (300.0, 870.0),
    (530.0, 1840.0),
    (570.0, 840.0),
    (640.0, 1190.0),
    (420.0, 1300.0),
];

fn word_segments(word: usize) -> Vec<Seg> {
    use Seg::*;
    match word {
        0 => vec![Vowel(1, 0.08), Vowel(3, 0.15), Fric(4000.0, 7000.0, 0.12)],
        1 => vec![Nasal(0.08), Vowel(4, 0.22)],
        2 => vec![Vowel(5, 0.18), Burst(800.0, 3000.0)],
        3 => vec![Burst(200.0, 1500.0), Vowel(0, 0.12), Vowel(2, 0.12), Nasal(0.06)],
        4 => vec![Vowel(3, 0.16), Fric(1500.0, 4000.0, 0.08), Burst(3000.0, 6000.0)],
        5 => vec![Vowel(6, 0.06), Vowel(0, 0.12), Vowel(1, 0.08), Burst(3000.0, 6000.0)],
        6 => vec![Vowel(4, 0.18), Nasal(0.1)],
        7 => vec![Vowel(4, 0.16), Fric(1500.0, 6000.0, 0.14)],
        8 => vec![
            Fric(4000.0, 7000.0, 0.1),
            Burst(3000.0, 6000.0),
            Vowel(4, 0.14),
            Burst(800.0, 2000.0),
        ],
        9 => vec![Burst(500.0, 2000.0), Vowel(4, 0.14), Vowel(2, 0.1)],
        10 => vec![Vowel(2, 0.06), Vowel(5, 0.14), Nasal(0.08)],
        11 => vec![Burst(3000.0, 6000.0), Vowel(2, 0.22)],
        _ => unreachable!("keyword index"),
    }
}

struct Speaker {
    f0: f64,
    formant_scale: f64,
    rate: f64,
}

fn render_word(rng: &mut ChaCha8Rng, sr: f64, word: usize, spk: &Speaker) -> Vec<f64> {
    let mut out = Vec::new();
    for seg in word_segments(word) {
        let piece = match seg {
            Seg::Vowel(v, dur) => {
                let dur = dur * spk.rate;
                let (f1, f2) = VOWELS[v];
                let (f1, f2) = (f1 * spk.formant_scale, f2 * spk.formant_scale);
                let glide = rng.gen_range(0.9..1.1);
                let mut x = harmonic_tone(rng, sr, dur, spk.f0, spk.f0 * glide, 4000.0, |f| {
                    (-((f - f1) / 120.0).powi(2)).exp()
                        + 0.7 * (-((f - f2) / 180.0).powi(2)).exp()
                        + 0.03
                });
                let env = envelope(x.len(), sr, 0.015, 0.03);
                apply(&mut x, &env);
                x
            }
            Seg::Fric(lo, hi, dur) => {
                let mut x = band_noise(rng, sr, dur * spk.rate, lo, hi);
                let env = envelope(x.len(), sr, 0.02, 0.03);
                apply(&mut x, &env);
                x.iter_mut().for_each(|v| *v *= 0.5);
                x
            }
            Seg::Burst(lo, hi) => {
                let mut x = band_noise(rng, sr, 0.03, lo, hi);
                let env = decay_env(x.len(), sr, 0.008);
                apply(&mut x, &env);
                x.iter_mut().for_each(|v| *v *= 0.7);
                x
            }
            Seg::Nasal(dur) => {
                let dur = dur * spk.rate;
                let mut x = harmonic_tone(rng, sr, dur, spk.f0, spk.f0, 1500.0, |f| {
                    (-((f - 250.0 * spk.formant_scale) / 80.0).powi(2)).exp() + 0.02
                });
                let env = envelope(x.len(), sr, 0.01, 0.02);
                apply(&mut x, &env);
                x.iter_mut().for_each(|v| *v *= 0.6);
                x
            }
        };
        out.extend(piece);
    }
    out
}

fn speaker(rng: &mut ChaCha8Rng) -> Speaker {
    Speaker {
        f0: rng.gen_range(90.0..240.0),
        formant_scale: rng.gen_range(0.88..1.14),
        rate: rng.gen_range(0.8..1.25),
    }
}

/// Utterance of the given keywords; returns samples and the transcript.
pub fn speech_clip(rng: &mut ChaCha8Rng, cfg: &SynthConfig, words: &[usize]) -> (Vec<f32>, String) {
    let sr = f64::from(cfg.sample_rate_hz);
    let dur = duration(rng, cfg);
    let mut buf = Buf::new(cfg.sample_rate_hz, dur);
    let spk = speaker(rng);
    let rendered: Vec<Vec<f64>> = words.iter().map(|&w| render_word(rng, sr, w, &spk)).collect();
    let total: f64 = rendered.iter().map(|r| r.len() as f64 / sr).sum();
    let slack = (buf.len_s() - total).max(0.0);
    let gap = slack / (words.len() as f64 + 1.0);
    let mut t = rng.gen_range(0.0..=gap.max(1e-3) * 1.5).min(slack);
    for r in &rendered {
        buf.add(t, r, 1.0);
        t += r.len() as f64 / sr + gap * rng.gen_range(0.5..1.0);
    }
    let text = words.iter().map(|&w| KEYWORDS[w]).collect::<Vec<_>>().join(" ");
    (finish(rng, buf), text)
}

// ---- sound ----

fn count_word(n: usize) -> &'static str {
    match n {
        1 => "once",
        2 => "twice",
        3 => "three times",
        _ => "several times",
    }
}

/// Environmental event of class `class`; returns samples and a caption.
pub fn sound_clip(rng: &mut ChaCha8Rng, cfg: &SynthConfig, class: usize) -> (Vec<f32>, String) {
    let sr = f64::from(cfg.sample_rate_hz);
    let dur = duration(rng, cfg);
    let mut buf = Buf::new(cfg.sample_rate_hz, dur);
    let len = buf.len_s();
    let loud = rng.gen_bool(0.5);
    let caption = match class {
        0 => {
            let n = rng.gen_range(1..=3);
            let f0 = rng.gen_range(280.0..520.0);
            for i in 0..n {
                let mut x = harmonic_tone(rng, sr, 0.16, f0 * 1.15, f0 * 0.85, 3500.0, |f| {
                    1.0 / (1.0 + f / 800.0)
                });
                let noise = band_noise(rng, sr, 0.16, 400.0, 2500.0);
                x.iter_mut().zip(&noise).for_each(|(v, n)| *v = 0.7 * *v + 0.3 * n);
                let env = envelope(x.len(), sr, 0.01, 0.1);
                apply(&mut x, &env);
                let t = (0.1 + i as f64 * len / (n as f64 + 0.5)).min(len - 0.2).max(0.0);
                buf.add(t, &x, 1.0);
            }
            format!("a dog barking {} {}", count_word(n), if loud { "nearby" } else { "in the distance" })
        }
        1 => {
            let x = band_noise(rng, sr, len, 2000.0, 6500.0);
            buf.add(0.0, &x, 0.6);
            let drops = (len * rng.gen_range(15.0..40.0)) as usize;
            for _ in 0..drops {
                let mut c = band_noise(rng, sr, 0.01, 3000.0, 7000.0);
                let env = decay_env(c.len(), sr, 0.002);
                apply(&mut c, &env);
                let t = rng.gen_range(0.0..len);
                buf.add(t, &c, 0.8);
            }
            format!("{} rain falling steadily", if loud { "heavy" } else { "light" })
        }
        2 => {
            let base = rng.gen_range(550.0..750.0);
            let rate = rng.gen_range(0.6..1.5);
            let n = buf.x.len();
            let mut phase = 0.0;
            for i in 0..n {
                let t = i as f64 / sr;
                let f = base * (1.0 + 0.6 * (0.5 + 0.5 * (2.0 * PI * rate * t).sin()));
                phase += 2.0 * PI * f / sr;
                buf.x[i] += phase.sin() + 0.3 * (2.0 * phase).sin();
            }
            "a siren wailing up and down".to_string()
        }
        3 => {
            let rate = rng.gen_range(2.0..4.0);
            let f = rng.gen_range(2500.0..4500.0);
            let mut t = rng.gen_range(0.0..0.3);
            let mut n = 0;
            while t < len - 0.02 {
                let mut c = sine(sr, 0.015, f, f);
                let env = decay_env(c.len(), sr, 0.003);
                apply(&mut c, &env);
                buf.add(t, &c, 1.0);
                t += 1.0 / rate;
                n += 1;
            }
            format!("a clock ticking {} times", n)
        }
        4 => {
            let x = band_noise(rng, sr, len, 50.0, 320.0);
            let am = rng.gen_range(18.0..32.0);
            let y: Vec<f64> = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (0.6 + 0.4 * (2.0 * PI * am * i as f64 / sr).sin()))
                .collect();
            buf.add(0.0, &y, 1.0);
            let hum = harmonic_tone(rng, sr, len, am * 2.0, am * 2.0, 600.0, |f| 1.0 / f);
            buf.add(0.0, &hum, 0.3);
            format!("an engine idling with a {} rumble", if loud { "loud" } else { "low" })
        }
        5 => {
            let groups = rng.gen_range(1..=2);
            let per = rng.gen_range(2..=3);
            let mut t: f64 = rng.gen_range(0.05..0.3);
            for _ in 0..groups {
                for _ in 0..per {
                    let mut c = band_noise(rng, sr, 0.06, 80.0, 600.0);
                    let thump = sine(sr, 0.06, 140.0, 90.0);
                    c.iter_mut().zip(&thump).for_each(|(v, s)| *v = 0.5 * *v + *s);
                    let env = decay_env(c.len(), sr, 0.015);
                    apply(&mut c, &env);
                    buf.add(t.min(len), &c, 1.0);
                    t += 0.18;
                }
                t += 0.5;
            }
            format!("someone knocking on a door {}", count_word(groups * per))
        }
        6 => {
            let n = rng.gen_range(3..8);
            for _ in 0..n {
                let f = rng.gen_range(2200.0..4200.0);
                let d = rng.gen_range(0.05..0.12);
                let mut c = sine(sr, d, f, f * rng.gen_range(1.2..1.6));
                let env = envelope(c.len(), sr, 0.005, 0.02);
                apply(&mut c, &env);
                let t = rng.gen_range(0.0..(len - d).max(0.01));
                buf.add(t, &c, 1.0);
            }
            format!("birds chirping {}", if loud { "loudly" } else { "softly" })
        }
        7 => {
            let x = band_noise(rng, sr, len, 200.0, 1200.0);
            let rate = rng.gen_range(0.2..0.6);
            let ph = rng.gen_range(0.0..2.0 * PI);
            let y: Vec<f64> = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (0.55 + 0.45 * (2.0 * PI * rate * i as f64 / sr + ph).sin()))
                .collect();
            buf.add(0.0, &y, 1.0);
            format!("{} wind blowing and gusting", if loud { "strong" } else { "gentle" })
        }
        8 => {
            let t0 = rng.gen_range(0.0..(len * 0.4));
            let mut crash = white(rng, ((len - t0) * sr) as usize + 1);
            let env = decay_env(crash.len(), sr, 0.12);
            apply(&mut crash, &env);
            buf.add(t0, &crash, 1.0);
            let tinkles = rng.gen_range(4..10);
            for _ in 0..tinkles {
                let f = rng.gen_range(3000.0..6500.0);
                let mut c = sine(sr, 0.04, f, f);
                let env = decay_env(c.len(), sr, 0.01);
                apply(&mut c, &env);
                buf.add(rng.gen_range(t0..len), &c, 0.5);
            }
            "glass shattering on the floor".to_string()
        }
        9 => {
            let n = rng.gen_range(2..6);
            for _ in 0..n {
                let f = rng.gen_range(700.0..1400.0);
                let mut c = sine(sr, 0.08, f * 1.3, f);
                let env = decay_env(c.len(), sr, 0.02);
                apply(&mut c, &env);
                buf.add(rng.gen_range(0.0..(len - 0.08).max(0.01)), &c, 1.0);
            }
            format!("water dripping {} times", n)
        }
        _ => return sound_clip(rng, cfg, class % SOUND_CLASSES.len()),
    };
    (finish(rng, buf), caption)
}

// ---- music ----

struct Style {
    bpm: (f64, f64),
    /// chord intervals in semitones above the root
    chord: &'static [f64],
    minor: bool,
    /// harmonic count and brightness
    harmonics: f64,
    brightness: f64,
    plucked: bool,
    distorted: bool,
    offbeat: bool,
    kick: bool,
    snare: bool,
    hat: bool,
    description: &'static str,
}

fn style(class: usize) -> Style {
    let base = Style {
        bpm: (90.0, 120.0),
        chord: &[0.0, 4.0, 7.0],
        minor: false,
        harmonics: 6.0,
        brightness: 0.5,
        plucked: false,
        distorted: false,
        offbeat: false,
        kick: false,
        snare: false,
        hat: false,
        description: "",
    };
    match class {
        0 => Style {
            bpm: (60.0, 80.0),
            harmonics: 3.0,
            brightness: 0.3,
            description: "gentle strings and piano arpeggios",
            ..base
        },
        1 => Style {
            bpm: (70.0, 95.0),
            chord: &[0.0, 4.0, 7.0, 10.0],
            harmonics: 12.0,
            brightness: 0.7,
            snare: true,
            description: "a slow shuffle with dominant seventh chords",
            ..base
        },
        2 => Style {
            bpm: (140.0, 180.0),
            chord: &[0.0, 7.0, 12.0],
            minor: true,
            harmonics: 20.0,
            brightness: 0.95,
            distorted: true,
            kick: true,
            snare: true,
            hat: true,
            description: "distorted guitars and pounding drums",
            ..base
        },
        3 => Style {
            bpm: (100.0, 140.0),
            chord: &[0.0, 3.0, 7.0, 10.0],
            minor: true,
            harmonics: 5.0,
            brightness: 0.4,
            hat: true,
            description: "mellow minor seventh chords and brushed cymbals",
            ..base
        },
        4 => Style {
            bpm: (70.0, 90.0),
            offbeat: true,
            harmonics: 8.0,
            brightness: 0.6,
            kick: true,
            description: "offbeat chord stabs and a laid back groove",
            ..base
        },
        5 => Style {
            bpm: (115.0, 130.0),
            harmonics: 10.0,
            brightness: 0.8,
            kick: true,
            hat: true,
            offbeat: false,
            description: "a four on the floor beat and bright chords",
            ..base
        },
        6 => Style {
            bpm: (90.0, 120.0),
            harmonics: 9.0,
            brightness: 0.6,
            plucked: true,
            description: "plucked acoustic guitar in a major key",
            ..base
        },
        7 => Style {
            bpm: (80.0, 95.0),
            chord: &[0.0, 3.0, 7.0],
            minor: true,
            harmonics: 4.0,
            brightness: 0.3,
            kick: true,
            snare: true,
            description: "a heavy beat with deep bass",
            ..base
        },
        8 => Style {
            bpm: (100.0, 125.0),
            harmonics: 7.0,
            brightness: 0.75,
            kick: true,
            snare: true,
            description: "catchy synth chords in a major key",
            ..base
        },
        9 => Style {
            bpm: (110.0, 150.0),
            chord: &[0.0, 7.0, 12.0],
            harmonics: 14.0,
            brightness: 0.85,
            distorted: true,
            kick: true,
            snare: true,
            description: "power chords on electric guitar with drums",
            ..base
        },
        _ => style(class % MUSIC_CLASSES.len()),
    }
}

fn drum_hit(rng: &mut ChaCha8Rng, sr: f64, kind: u8) -> Vec<f64> {
    match kind {
        0 => {
            let mut x = sine(sr, 0.15, 110.0, 45.0);
            let env = decay_env(x.len(), sr, 0.05);
            apply(&mut x, &env);
            x
        }
        1 => {
            let mut x = band_noise(rng, sr, 0.12, 1000.0, 5000.0);
            let tone = sine(sr, 0.12, 200.0, 180.0);
            x.iter_mut().zip(&tone).for_each(|(v, t)| *v = 0.7 * *v + 0.3 * t);
            let env = decay_env(x.len(), sr, 0.04);
            apply(&mut x, &env);
            x
        }
        _ => {
            let mut x = band_noise(rng, sr, 0.04, 6000.0, 7800.0);
            let env = decay_env(x.len(), sr, 0.01);
            apply(&mut x, &env);
            x
        }
    }
}

/// Music excerpt in style `class`; returns samples and a caption.
pub fn music_clip(rng: &mut ChaCha8Rng, cfg: &SynthConfig, class: usize) -> (Vec<f32>, String) {
    let sr = f64::from(cfg.sample_rate_hz);
    let dur = duration(rng, cfg);
    let mut buf = Buf::new(cfg.sample_rate_hz, dur);
    let len = buf.len_s();
    let st = style(class);
    let bpm = rng.gen_range(st.bpm.0..=st.bpm.1);
    let beat = 60.0 / bpm;
    let root = rng.gen_range(45.0..57.0f64).round();
    // I-IV-V (or i-iv-v) progression, one chord per bar of four beats
    let progression = [0.0, 5.0, 7.0, 0.0];
    let mut t = 0.0;
    let mut b = 0usize;
    while t < len {
        let chord_root = root + progression[(b / 4) % progression.len()];
        let on = if st.offbeat { t + beat / 2.0 } else { t };
        let note_len = if st.plucked || st.offbeat {
            beat * 0.45
        } else if class == 0 {
            beat
        } else {
            beat * 0.9
        };
        if on < len {
            if class == 0 {
                // arpeggio: one chord tone per beat
                let iv = st.chord[b % st.chord.len()];
                let f = midi_hz(chord_root + iv + 12.0);
                let mut x = harmonic_tone(rng, sr, note_len, f, f, f * st.harmonics, |h| {
                    (-(h / f - 1.0) * (1.5 - st.brightness)).exp()
                });
                let env = envelope(x.len(), sr, 0.03, note_len * 0.5);
                apply(&mut x, &env);
                buf.add(on, &x, 0.8);
            } else {
                for &iv in st.chord {
                    let f = midi_hz(chord_root + iv);
                    let mut x = harmonic_tone(rng, sr, note_len, f, f, f * st.harmonics, |h| {
                        (-(h / f - 1.0) * (1.5 - st.brightness)).exp()
                    });
                    if st.distorted {
                        x.iter_mut().for_each(|v| *v = (3.0 * *v).tanh());
                    }
                    let env = if st.plucked {
                        decay_env(x.len(), sr, note_len * 0.3)
                    } else {
                        envelope(x.len(), sr, 0.01, 0.05)
                    };
                    apply(&mut x, &env);
                    buf.add(on, &x, 0.5 / st.chord.len() as f64 * 2.0);
                }
            }
            if class == 7 {
                let f = midi_hz(chord_root - 12.0);
                let mut x = sine(sr, beat * 0.8, f, f);
                let env = envelope(x.len(), sr, 0.01, 0.1);
                apply(&mut x, &env);
                buf.add(t, &x, 0.9);
            }
        }
        if st.kick && (b % 2 == 0 || class == 5) {
            let k = drum_hit(rng, sr, 0);
            buf.add(t, &k, 0.9);
        }
        if st.snare && b % 2 == 1 {
            let s = drum_hit(rng, sr, 1);
            buf.add(t, &s, 0.6);
        }
        if st.hat {
            for half in 0..2 {
                let h = drum_hit(rng, sr, 2);
                buf.add(t + half as f64 * beat / 2.0, &h, 0.3);
            }
        }
        t += beat;
        b += 1;
    }
    let tempo = if bpm < 90.0 {
        "slow"
    } else if bpm < 125.0 {
        "moderate"
    } else {
        "fast"
    };
    let key = if st.minor { "minor" } else { "major" };
    let caption = format!(
        "a {tempo} {} song in a {key} key with {}",
        MUSIC_CLASSES[class % MUSIC_CLASSES.len()],
        st.description
    );
    (finish(rng, buf), caption)
}

// ---- corpora and benchmarks ----

/// A generated clip with its text and class label.
#[derive(Clone, Debug)]
pub struct SynthClip {
    pub domain: Domain,
    pub label: usize,
    pub text: String,
    pub clip: AudioClip,
}

pub fn generate_clip(cfg: &SynthConfig, domain: Domain, label: usize, seed: u64) -> SynthClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (samples, text) = match domain {
        Domain::Speech => {
            // training utterances may hold extra words; label is the first
            let extra = rng.gen_range(0..=2usize);
            let mut words = vec![label % KEYWORDS.len()];
            for _ in 0..extra {
                words.push(rng.gen_range(0..KEYWORDS.len()));
            }
            speech_clip(&mut rng, cfg, &words)
        }
        Domain::Sound => sound_clip(&mut rng, cfg, label),
        Domain::Music => music_clip(&mut rng, cfg, label),
    };
    SynthClip {
        domain,
        label,
        text,
        clip: AudioClip::new(samples, cfg.sample_rate_hz).expect("synthesized audio is valid"),
    }
}

/// Single-label clip for a probe benchmark (speech clips hold one keyword).
pub fn generate_probe_clip(cfg: &SynthConfig, domain: Domain, label: usize, seed: u64) -> SynthClip {
    if domain != Domain::Speech {
        return generate_clip(cfg, domain, label, seed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (samples, text) = speech_clip(&mut rng, cfg, &[label % KEYWORDS.len()]);
    SynthClip {
        domain,
        label,
        text,
        clip: AudioClip::new(samples, cfg.sample_rate_hz).expect("synthesized audio is valid"),
    }
}

/// `n_per_domain` clips for each requested domain, classes cycling evenly.
pub fn generate_corpus(
    cfg: &SynthConfig,
    domains: &[Domain],
    n_per_domain: usize,
    seed: u64,
) -> Vec<SynthClip> {
    let mut out = Vec::with_capacity(domains.len() * n_per_domain);
    for &d in domains {
        for i in 0..n_per_domain {
            let label = i % n_classes(d);
            out.push(generate_clip(cfg, d, label, clip_seed(seed, d, i as u64)));
        }
    }
    out
}

/// Writes `audio/<domain>_<i>.wav` files and `manifest.jsonl` under `out_dir`.
pub fn write_corpus(out_dir: &Path, clips: &[SynthClip]) -> Result<PathBuf> {
    let audio_dir = out_dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let mut records = Vec::with_capacity(clips.len());
    let mut counters = [0usize; 3];
    for c in clips {
        let i = counters[c.domain.index()];
        counters[c.domain.index()] += 1;
        let rel = format!("audio/{}_{i:05}.wav", c.domain);
        write_wav(&out_dir.join(&rel), &c.clip)?;
        records.push(CorpusRecord {
            audio_path: rel,
            text: c.text.clone(),
            domain: c.domain,
        });
    }
    let manifest = out_dir.join("manifest.jsonl");
    data::write_manifest(&manifest, &records)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clips_are_deterministic_and_in_range() {
        let cfg = SynthConfig::default();
        for d in Domain::ALL {
            for label in 0..n_classes(d) {
                let a = generate_clip(&cfg, d, label, 42);
                let b = generate_clip(&cfg, d, label, 42);
                assert_eq!(a.clip, b.clip);
                assert_eq!(a.text, b.text);
                let dur = a.clip.duration_s();
                assert!(dur >= cfg.min_dur_s - 1e-3 && dur <= cfg.max_dur_s + 1e-3);
                assert!(a.clip.samples().iter().all(|s| s.abs() <= 1.0));
                let energy: f32 = a.clip.samples().iter().map(|s| s * s).sum();
                assert!(energy > 1.0, "{d} class {label} nearly silent");
            }
        }
    }

    #[test]
    fn speech_transcript_starts_with_label() {
        let cfg = SynthConfig::default();
        for label in 0..12 {
            let c = generate_clip(&cfg, Domain::Speech, label, label as u64);
            assert!(c.text.split(' ').next() == Some(KEYWORDS[label]));
            let p = generate_probe_clip(&cfg, Domain::Speech, label, 3);
            assert_eq!(p.text, KEYWORDS[label]);
        }
    }

    #[test]
    fn captions_fit_the_decoder() {
        let cfg = SynthConfig::default();
        for c in generate_corpus(&cfg, &Domain::ALL, 30, 1) {
            assert!(data::caption_len(&c.text, true) <= data::MAX_DECODER_TOKENS);
            assert!(!c.text.is_empty());
        }
    }
}
