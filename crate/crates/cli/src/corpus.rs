//! Synthetic annotated corpus: word vocabulary, deterministic break rule,
//! tone-rendered audio, correlated word embeddings and a train/test split.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use phrasenet_core::text::{parse_annotated, save_embedding_file, BreakLabel, Utterance, WordEmbeddingTable};
use phrasenet_core::text::{BREAK_MARKER, WORD_EMBED_DIM};
use phrasenet_core::vocoder::write_wav;

pub const CORPUS_FILE: &str = "corpus.txt";
pub const EMBEDDING_FILE: &str = "embeddings.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WAV_DIR: &str = "wavs";

/// Silence appended after a token, per label, in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SilenceMs {
    pub break_ms: u32,
    pub nonbreak_ms: u32,
    pub blank_ms: u32,
    pub punctuation_ms: u32,
    pub stop_ms: u32,
}

impl Default for SilenceMs {
    fn default() -> Self {
        Self {
            break_ms: 120,
            nonbreak_ms: 0,
            blank_ms: 30,
            punctuation_ms: 80,
            stop_ms: 150,
        }
    }
}

impl SilenceMs {
    pub fn for_label(&self, l: BreakLabel) -> u32 {
        match l {
            BreakLabel::Break => self.break_ms,
            BreakLabel::NonBreak => self.nonbreak_ms,
            BreakLabel::Blank => self.blank_ms,
            BreakLabel::Punctuation => self.punctuation_ms,
            BreakLabel::StopToken => self.stop_ms,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub vocab_size: usize,
    pub utterances: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
    /// Letters words are spelled with; letter `k` is rendered as a tone of
    /// `base_freq_hz · 2^(k/tones_per_octave)`.
    pub letters: String,
    pub base_freq_hz: f64,
    pub tones_per_octave: f64,
    pub tone_ms: u32,
    pub tone_amplitude: f64,
    pub fade_ms: u32,
    pub silence: SilenceMs,
    pub comma_probability: f64,
    pub sample_rate: u32,
    /// Fraction of utterances held out for testing (4:1 split).
    pub test_fraction: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            vocab_size: 60,
            utterances: 500,
            min_words: 3,
            max_words: 14,
            seed: 0,
            letters: "abdegiklmnoprstu".into(),
            base_freq_hz: 220.0,
            tones_per_octave: 6.0,
            tone_ms: 50,
            tone_amplitude: 0.5,
            fade_ms: 5,
            silence: SilenceMs::default(),
            comma_probability: 0.1,
            sample_rate: 16000,
            test_fraction: 0.2,
        }
    }
}

/// 32-bit FNV-1a.
pub fn fnv1a32(s: &str) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for b in s.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

/// The break rule: word `w` at lexical position `i` is followed by a break
/// iff `hash(w) + i ≡ 0 (mod 3)`.
pub fn is_break(word: &str, position: usize) -> bool {
    (fnv1a32(word) as u64 + position as u64) % 3 == 0
}

/// Embedding coordinate 0 encodes `hash(w) mod 3` as −1, 0 or 1.
pub fn hash_coordinate(word: &str) -> f64 {
    (fnv1a32(word) % 3) as f64 - 1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub spec: CorpusSpec,
    pub ids: Vec<String>,
    pub split_method: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

pub fn utterance_id(index: usize) -> String {
    format!("utt{index:04}")
}

impl CorpusSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let letters: BTreeSet<char> = self.letters.chars().collect();
        if letters.len() != self.letters.chars().count() || letters.len() < 2 {
            errs.push("letters: need at least two distinct letters".into());
        }
        if self.letters.chars().any(|c| !c.is_ascii_lowercase()) {
            errs.push("letters: only ASCII lowercase letters are supported".into());
        }
        let possible: f64 = (2..=4).map(|n| (letters.len() as f64).powi(n)).sum();
        if self.vocab_size == 0 || self.vocab_size as f64 > possible {
            errs.push(format!("vocab_size: must be in 1..={possible}"));
        }
        if self.utterances < 2 {
            errs.push("utterances: must be >= 2".into());
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            errs.push("min_words/max_words: need 1 <= min_words <= max_words".into());
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            errs.push("test_fraction: must be in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.comma_probability) {
            errs.push("comma_probability: must be in [0, 1]".into());
        }
        if self.sample_rate == 0 || self.tone_ms == 0 || 2 * self.fade_ms > self.tone_ms {
            errs.push("sample_rate/tone_ms/fade_ms: need positive rate and 2·fade <= tone".into());
        }
        errs
    }

    pub fn tone_frequency(&self, letter: char) -> Option<f64> {
        let k = self.letters.chars().position(|c| c == letter)?;
        Some(self.base_freq_hz * 2f64.powf(k as f64 / self.tones_per_octave))
    }

    fn samples(&self, ms: u32) -> usize {
        (self.sample_rate as usize * ms as usize) / 1000
    }

    /// Tones for letters, label-dependent silence after every token.
    pub fn render(&self, utt: &Utterance) -> Vec<f64> {
        let tone_len = self.samples(self.tone_ms);
        let fade = self.samples(self.fade_ms).max(1);
        let mut out = Vec::new();
        for (t, &label) in utt.break_labels.iter().enumerate() {
            let (s, e) = utt.word_char_spans[t];
            for &c in &utt.chars[s..e] {
                let Some(freq) = self.tone_frequency(c) else { continue };
                for n in 0..tone_len {
                    let env = (n.min(tone_len - 1 - n) as f64 / fade as f64).min(1.0);
                    let phase = 2.0 * PI * freq * n as f64 / self.sample_rate as f64;
                    out.push(self.tone_amplitude * env * phase.sin());
                }
            }
            out.resize(out.len() + self.samples(self.silence.for_label(label)), 0.0);
        }
        out
    }

    /// Expected rendered length in samples.
    pub fn expected_samples(&self, utt: &Utterance) -> usize {
        let letters = utt.chars.iter().filter(|c| self.tone_frequency(**c).is_some()).count();
        letters * self.samples(self.tone_ms)
            + utt
                .break_labels
                .iter()
                .map(|&l| self.samples(self.silence.for_label(l)))
                .sum::<usize>()
    }
}

pub struct GeneratedCorpus {
    pub lines: Vec<String>,
    pub vocabulary: Vec<String>,
    pub embeddings: WordEmbeddingTable,
    pub manifest: Manifest,
}

fn random_word(rng: &mut ChaCha8Rng, letters: &[char]) -> String {
    let len = rng.random_range(2..=4);
    (0..len).map(|_| letters[rng.random_range(0..letters.len())]).collect()
}

/// Text, embeddings and split; audio is rendered separately from the text.
pub fn generate(spec: &CorpusSpec) -> Result<GeneratedCorpus> {
    let errs = spec.validate();
    if !errs.is_empty() {
        bail!(phrasenet_core::Error::InvalidConfig(errs));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let letters: Vec<char> = spec.letters.chars().collect();
    let mut seen = BTreeSet::new();
    let mut vocabulary = Vec::with_capacity(spec.vocab_size);
    while vocabulary.len() < spec.vocab_size {
        let w = random_word(&mut rng, &letters);
        if seen.insert(w.clone()) {
            vocabulary.push(w);
        }
    }

    let mut lines = Vec::with_capacity(spec.utterances);
    for _ in 0..spec.utterances {
        let n = rng.random_range(spec.min_words..=spec.max_words);
        let mut line = String::new();
        for i in 0..n {
            let w = &vocabulary[rng.random_range(0..vocabulary.len())];
            if i > 0 {
                line.push(' ');
            }
            line.push_str(w);
            if is_break(w, i) {
                line.push_str(BREAK_MARKER);
            }
            if i + 1 < n && rng.random::<f64>() < spec.comma_probability {
                line.push(',');
            }
        }
        line.push(['.', '?', '!'][rng.random_range(0..3)]);
        lines.push(line);
    }

    let mut entries = Vec::with_capacity(vocabulary.len());
    for w in &vocabulary {
        let mut v: Vec<f64> = (0..WORD_EMBED_DIM).map(|_| rng.random_range(-0.5..0.5)).collect();
        v[0] = hash_coordinate(w);
        entries.push((w.clone(), v));
    }
    let embeddings = WordEmbeddingTable::new(entries)?;

    let ids: Vec<String> = (0..spec.utterances).map(utterance_id).collect();
    let mut order: Vec<usize> = (0..spec.utterances).collect();
    order.shuffle(&mut rng);
    let n_test = ((spec.utterances as f64 * spec.test_fraction).round() as usize).min(spec.utterances - 1);
    let mut test: Vec<usize> = order[..n_test].to_vec();
    let mut train: Vec<usize> = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    let manifest = Manifest {
        seed: spec.seed,
        spec: spec.clone(),
        ids: ids.clone(),
        split_method: "seeded random shuffle, 4:1 train/test".into(),
        train: train.iter().map(|&i| ids[i].clone()).collect(),
        test: test.iter().map(|&i| ids[i].clone()).collect(),
    };
    Ok(GeneratedCorpus {
        lines,
        vocabulary,
        embeddings,
        manifest,
    })
}

/// Writes the full corpus directory.
pub fn write_corpus(spec: &CorpusSpec, out: &Path) -> Result<Manifest> {
    let corpus = generate(spec)?;
    fs::create_dir_all(out.join(WAV_DIR)).with_context(|| format!("creating {}", out.display()))?;
    let mut text = corpus.lines.join("\n");
    text.push('\n');
    fs::write(out.join(CORPUS_FILE), text)?;
    for (id, line) in corpus.manifest.ids.iter().zip(&corpus.lines) {
        let utt = parse_annotated(line)?;
        let audio = spec.render(&utt);
        write_wav(&wav_path(out, id), &audio, spec.sample_rate)?;
    }
    save_embedding_file(&corpus.embeddings, &out.join(EMBEDDING_FILE))?;
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&corpus.manifest)? + "\n")?;
    Ok(corpus.manifest)
}

pub fn wav_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(WAV_DIR).join(format!("{id}.wav"))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
}

/// Parses the annotated text file; utterance ids follow line order.
pub fn read_utterances(dir: &Path) -> Result<Vec<Utterance>> {
    let path = dir.join(CORPUS_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let mut u = parse_annotated(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
            u.id = utterance_id(i);
            Ok(u)
        })
        .collect()
}
