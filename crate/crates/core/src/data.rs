//! Corpus manifests, byte-level tokenization, caption filtering, and
//! weighted domain sampling.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
/// First domain-prefix token; domains follow in [`Domain::ALL`] order.
pub const DOMAIN_BASE: usize = 3;
pub const N_SPECIAL: usize = DOMAIN_BASE + Domain::ALL.len();
pub const VOCAB_SIZE: usize = N_SPECIAL + 256;
pub const MAX_DECODER_TOKENS: usize = 448;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Speech,
    Sound,
    Music,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Speech, Domain::Sound, Domain::Music];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn token(self) -> usize {
        DOMAIN_BASE + self.index()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Speech => "speech",
            Domain::Sound => "sound",
            Domain::Music => "music",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "speech" => Ok(Domain::Speech),
            "sound" => Ok(Domain::Sound),
            "music" => Ok(Domain::Music),
            other => Err(format!(
                "unknown domain {other:?} (expected speech, sound or music)"
            )),
        }
    }
}

/// One (audio, text) training pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub audio_path: String,
    pub text: String,
    pub domain: Domain,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
}

impl TokenSequence {
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn into_ids(self) -> Vec<usize> {
        self.ids
    }
}

pub fn byte_token(b: u8) -> usize {
    N_SPECIAL + usize::from(b)
}

pub fn tokenize_bytes(bytes: &[u8]) -> TokenSequence {
    let mut ids = Vec::with_capacity(bytes.len() + 2);
    ids.push(BOS);
    ids.extend(bytes.iter().map(|&b| byte_token(b)));
    ids.push(EOS);
    TokenSequence { ids }
}

/// `[BOS, byte tokens..., EOS]`.
pub fn tokenize(text: &str) -> TokenSequence {
    tokenize_bytes(text.as_bytes())
}

/// Decoder target for a caption: BOS, optional domain token, bytes, EOS.
pub fn encode_caption(text: &str, domain: Domain, domain_prefix: bool) -> TokenSequence {
    let mut ids = Vec::with_capacity(text.len() + 3);
    ids.push(BOS);
    if domain_prefix {
        ids.push(domain.token());
    }
    ids.extend(text.bytes().map(byte_token));
    ids.push(EOS);
    TokenSequence { ids }
}

/// Bytes carried by the non-special tokens.
pub fn detokenize_bytes(ids: &[usize]) -> Vec<u8> {
    ids.iter()
        .filter(|&&id| (N_SPECIAL..VOCAB_SIZE).contains(&id))
        .map(|&id| (id - N_SPECIAL) as u8)
        .collect()
}

pub fn detokenize(ids: &[usize]) -> String {
    String::from_utf8_lossy(&detokenize_bytes(ids)).into_owned()
}

/// Keep a record iff its full decoder sequence (specials included) fits the
/// decoder limit.
pub fn filter_caption(record: &CorpusRecord, domain_prefix: bool) -> bool {
    caption_len(&record.text, domain_prefix) <= MAX_DECODER_TOKENS
}

pub fn caption_len(text: &str, domain_prefix: bool) -> usize {
    text.len() + 2 + usize::from(domain_prefix)
}

pub fn filter_manifest(records: &[CorpusRecord], domain_prefix: bool) -> Vec<CorpusRecord> {
    records
        .iter()
        .filter(|r| filter_caption(r, domain_prefix))
        .cloned()
        .collect()
}

/// Domain sampling weights, indexed by [`Domain::index`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSpec {
    pub speech: f64,
    pub sound: f64,
    pub music: f64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            speech: 0.8,
            sound: 0.1,
            music: 0.1,
        }
    }
}

impl MixtureSpec {
    pub fn new(speech: f64, sound: f64, music: f64) -> Result<Self> {
        let s = Self {
            speech,
            sound,
            music,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn weights(&self) -> [f64; 3] {
        [self.speech, self.sound, self.music]
    }

    pub fn weight(&self, d: Domain) -> f64 {
        self.weights()[d.index()]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Mixture(format!("weights must be non-negative: {w:?}")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Mixture(format!("weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Per-slot sampler: each slot draws a domain by weight, then a record
/// uniformly within that domain.
#[derive(Clone, Debug)]
pub struct MixtureSampler {
    spec: MixtureSpec,
    by_domain: [Vec<usize>; 3],
}

impl MixtureSampler {
    pub fn new(manifest: &[CorpusRecord], spec: MixtureSpec) -> Result<Self> {
        spec.validate()?;
        let mut by_domain: [Vec<usize>; 3] = Default::default();
        for (i, r) in manifest.iter().enumerate() {
            by_domain[r.domain.index()].push(i);
        }
        for d in Domain::ALL {
            if spec.weight(d) > 0.0 && by_domain[d.index()].is_empty() {
                return Err(Error::Mixture(format!(
                    "domain {d} has weight {} but no records",
                    spec.weight(d)
                )));
            }
        }
        Ok(Self { spec, by_domain })
    }

    pub fn sample_domain(&self, rng: &mut impl Rng) -> Domain {
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        let mut last = Domain::Speech;
        for d in Domain::ALL {
            let w = self.spec.weight(d);
            if w <= 0.0 {
                continue;
            }
            cum += w;
            last = d;
            if u < cum {
                return d;
            }
        }
        last
    }

    /// Manifest indices for one batch; deterministic under `seed`.
    pub fn sample_indices(&self, batch_size: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..batch_size)
            .map(|_| {
                let pool = &self.by_domain[self.sample_domain(&mut rng).index()];
                pool[rng.gen_range(0..pool.len())]
            })
            .collect()
    }
}

pub fn sample_batch(
    manifest: &[CorpusRecord],
    spec: &MixtureSpec,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<CorpusRecord>> {
    let sampler = MixtureSampler::new(manifest, *spec)?;
    Ok(sampler
        .sample_indices(batch_size, seed)
        .into_iter()
        .map(|i| manifest[i].clone())
        .collect())
}

pub fn load_manifest(path: &Path) -> Result<Vec<CorpusRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Manifest {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| err(format!("malformed JSON: {e}")))?;
        if let Some(d) = value.get("domain").and_then(|d| d.as_str()) {
            d.parse::<Domain>().map_err(&err)?;
        }
        let rec: CorpusRecord =
            serde_json::from_value(value).map_err(|e| err(format!("bad record: {e}")))?;
        if rec.text.is_empty() {
            return Err(err("empty text".into()));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Audio paths in a manifest are relative to the manifest's directory unless absolute.
pub fn resolve_audio(manifest_path: &Path, audio_path: &str) -> PathBuf {
    let p = Path::new(audio_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(text: &str, domain: Domain) -> CorpusRecord {
        CorpusRecord {
            audio_path: "a.wav".into(),
            text: text.into(),
            domain,
        }
    }

    #[test]
    fn vocabulary_layout() {
        assert_eq!(VOCAB_SIZE, 262);
        assert_eq!(byte_token(0), 6);
        assert_eq!(byte_token(255), 261);
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("").ids(), &[BOS, EOS]);
        assert_eq!(
            tokenize("ab").ids(),
            &[BOS, byte_token(b'a'), byte_token(b'b'), EOS]
        );
        assert_eq!(detokenize(tokenize("ünïcode ✓").ids()), "ünïcode ✓");
    }

    #[test]
    fn caption_with_domain_prefix() {
        let t = encode_caption("hi", Domain::Music, true);
        assert_eq!(t.ids(), &[BOS, 5, byte_token(b'h'), byte_token(b'i'), EOS]);
        assert_eq!(detokenize(t.ids()), "hi");
    }

    #[test]
    fn caption_filter_boundaries() {
        let keep = rec(&"x".repeat(445), Domain::Sound);
        let drop = rec(&"x".repeat(447), Domain::Sound);
        assert_eq!(tokenize(&keep.text).len(), 447);
        assert_eq!(tokenize(&drop.text).len(), 449);
        assert!(filter_caption(&keep, false));
        assert!(!filter_caption(&drop, false));
        assert!(filter_caption(&rec("", Domain::Speech), false));
        // exactly 448 kept, 449 dropped, counting the domain token too
        assert!(filter_caption(&rec(&"y".repeat(445), Domain::Sound), true));
        assert!(!filter_caption(&rec(&"y".repeat(446), Domain::Sound), true));
    }

    #[test]
    fn mixture_rejects_bad_weights() {
        assert!(MixtureSpec::new(0.8, 0.1, 0.1).is_ok());
        assert!(matches!(
            MixtureSpec::new(0.8, 0.1, 0.2),
            Err(Error::Mixture(_))
        ));
        assert!(MixtureSpec::new(1.1, -0.1, 0.0).is_err());
    }

    #[test]
    fn empty_weighted_domain_is_an_error() {
        let m = vec![rec("a", Domain::Speech), rec("b", Domain::Sound)];
        let spec = MixtureSpec::default();
        assert!(matches!(
            sample_batch(&m, &spec, 4, 0),
            Err(Error::Mixture(_))
        ));
        let ok = MixtureSpec::new(0.5, 0.5, 0.0).unwrap();
        assert_eq!(sample_batch(&m, &ok, 4, 0).unwrap().len(), 4);
    }

    #[test]
    fn degenerate_mixture_draws_one_domain() {
        let m = vec![
            rec("a", Domain::Speech),
            rec("b", Domain::Sound),
            rec("c", Domain::Music),
        ];
        let spec = MixtureSpec::new(1.0, 0.0, 0.0).unwrap();
        let b = sample_batch(&m, &spec, 200, 5).unwrap();
        assert!(b.iter().all(|r| r.domain == Domain::Speech));
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let m: Vec<_> = (0..30)
            .map(|i| rec(&format!("r{i}"), Domain::ALL[i % 3]))
            .collect();
        let spec = MixtureSpec::default();
        let a = sample_batch(&m, &spec, 64, 11).unwrap();
        let b = sample_batch(&m, &spec, 64, 11).unwrap();
        let c = sample_batch(&m, &spec, 64, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn manifest_errors_cite_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(
            &p,
            concat!(
                r#"{"audio_path":"a.wav","text":"t","domain":"speech"}"#,
                "\n",
                r#"{"audio_path":"b.wav","text":"t","domain":"voice"}"#,
                "\n"
            ),
        )
        .unwrap();
        match load_manifest(&p) {
            Err(Error::Manifest { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("voice"));
            }
            other => panic!("expected manifest error, got {other:?}"),
        }

        fs::write(&p, "{not json}\n").unwrap();
        assert!(matches!(
            load_manifest(&p),
            Err(Error::Manifest { line: 1, .. })
        ));
    }

    #[test]
    fn three_lines_load_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let recs = vec![
            rec("one", Domain::Music),
            rec("two", Domain::Speech),
            rec("three", Domain::Sound),
        ];
        write_manifest(&p, &recs).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), recs);
    }

    #[test]
    fn relative_audio_paths_resolve_against_manifest_dir() {
        let m = Path::new("/runs/x/manifest.jsonl");
        assert_eq!(resolve_audio(m, "a/b.wav"), PathBuf::from("/runs/x/a/b.wav"));
        assert_eq!(resolve_audio(m, "/abs.wav"), PathBuf::from("/abs.wav"));
    }
}
