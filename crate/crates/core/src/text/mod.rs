//! Break-annotated text: tokenization, break labels, character inventory.
//!
//! Annotated lines are whitespace-separated words. A `#B` suffix on a word
//! marks a phrase break after it; trailing punctuation is split into its own
//! tokens; a final `.`, `?` or `!` is mandatory. Inter-word spaces become
//! single-character Blank tokens so every character belongs to exactly one
//! token.

mod embedding;

pub use embedding::{load_embedding_file, lookup_word_embeddings, save_embedding_file, WordEmbeddingTable, WORD_EMBED_DIM};

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::MelSpectrogram;

pub const BREAK_MARKER: &str = "#B";
pub const TERMINAL_PUNCT: [char; 3] = ['.', '?', '!'];
pub const PUNCT: [char; 6] = [',', ';', ':', '.', '?', '!'];

/// Five-way phrase-break label with stable integer codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum BreakLabel {
    Break = 0,
    NonBreak = 1,
    Blank = 2,
    Punctuation = 3,
    StopToken = 4,
}

impl BreakLabel {
    pub const ALL: [BreakLabel; 5] = [
        BreakLabel::Break,
        BreakLabel::NonBreak,
        BreakLabel::Blank,
        BreakLabel::Punctuation,
        BreakLabel::StopToken,
    ];
    pub const COUNT: usize = 5;

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    /// Break and NonBreak sit on real words; the other three do not.
    pub fn is_lexical(self) -> bool {
        matches!(self, BreakLabel::Break | BreakLabel::NonBreak)
    }
}

impl fmt::Display for BreakLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BreakLabel::Break => "break",
            BreakLabel::NonBreak => "non-break",
            BreakLabel::Blank => "blank",
            BreakLabel::Punctuation => "punctuation",
            BreakLabel::StopToken => "stop",
        };
        f.write_str(s)
    }
}

/// Character inventory. Index 0 is padding, index 1 is the unknown symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolTable {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
}

impl SymbolTable {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;

    /// Table over the given characters (deduplicated, order preserved).
    pub fn from_symbols(chars: impl IntoIterator<Item = char>) -> Self {
        // Slots 0 and 1 hold control characters that never occur in text.
        let mut symbols = vec!['\u{0}', '\u{1}'];
        let mut index = HashMap::new();
        for c in chars {
            if c == '\u{0}' || c == '\u{1}' || index.contains_key(&c) {
                continue;
            }
            index.insert(c, symbols.len());
            symbols.push(c);
        }
        Self { symbols, index }
    }

    /// Sorted inventory of every character used by the utterances.
    pub fn build<'a>(utts: impl IntoIterator<Item = &'a Utterance>) -> Self {
        let mut chars: Vec<char> = utts.into_iter().flat_map(|u| u.chars.iter().copied()).collect();
        chars.sort_unstable();
        chars.dedup();
        Self::from_symbols(chars)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lookup(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(Self::UNK)
    }

    pub fn symbol_of(&self, id: usize) -> Option<char> {
        (id >= 2).then(|| self.symbols.get(id).copied()).flatten()
    }

    /// The real symbols, without the two reserved slots.
    pub fn symbols(&self) -> &[char] {
        &self.symbols[2..]
    }
}

/// One parsed utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub raw_text: String,
    /// Characters of all tokens, concatenated.
    pub chars: Vec<char>,
    /// `chars` encoded with a [`SymbolTable`]; empty until [`Utterance::encode`].
    pub char_ids: Vec<usize>,
    pub words: Vec<String>,
    pub word_char_spans: Vec<(usize, usize)>,
    pub break_labels: Vec<BreakLabel>,
    pub mel_target: Option<MelSpectrogram>,
}

impl Utterance {
    pub fn num_tokens(&self) -> usize {
        self.words.len()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    /// Fills `char_ids`; returns how many characters were unknown to the table.
    pub fn encode(&mut self, table: &SymbolTable) -> usize {
        self.char_ids = self.chars.iter().map(|&c| table.lookup(c)).collect();
        self.char_ids.iter().filter(|&&i| i == SymbolTable::UNK).count()
    }

    /// Token index owning each character.
    pub fn char_to_token(&self) -> Vec<usize> {
        let mut out = vec![0; self.chars.len()];
        for (t, &(s, e)) in self.word_char_spans.iter().enumerate() {
            out[s..e].iter_mut().for_each(|o| *o = t);
        }
        out
    }

    /// Indices of Break/NonBreak tokens.
    pub fn lexical_positions(&self) -> Vec<usize> {
        self.break_labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_lexical())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let t = self.words.len();
        for (what, len) in [
            ("word_char_spans", self.word_char_spans.len()),
            ("break_labels", self.break_labels.len()),
        ] {
            if len != t {
                return Err(Error::LengthMismatch { what, left: t, right: len });
            }
        }
        check_span_cover(&self.word_char_spans, self.chars.len())?;
        if self.break_labels.last() != Some(&BreakLabel::StopToken)
            || self.break_labels.iter().filter(|&&l| l == BreakLabel::StopToken).count() != 1
        {
            return Err(Error::MalformedMarker {
                offset: self.raw_text.len(),
                reason: "utterance must end with exactly one stop token".into(),
            });
        }
        Ok(())
    }
}

/// Spans must be sorted, non-empty, contiguous and cover `[0, n)`.
pub fn check_span_cover(spans: &[(usize, usize)], n: usize) -> Result<()> {
    let mut pos = 0;
    for (i, &(s, e)) in spans.iter().enumerate() {
        if s != pos || e <= s {
            return Err(Error::SpanCoverage(format!(
                "span {i} is ({s}, {e}) but coverage so far ends at {pos}"
            )));
        }
        pos = e;
    }
    if pos != n {
        return Err(Error::SpanCoverage(format!("spans end at {pos}, sequence has {n}")));
    }
    Ok(())
}

struct Builder {
    chars: Vec<char>,
    words: Vec<String>,
    spans: Vec<(usize, usize)>,
    labels: Vec<BreakLabel>,
}

impl Builder {
    fn push(&mut self, text: &str, label: BreakLabel) {
        let start = self.chars.len();
        self.chars.extend(text.chars());
        self.spans.push((start, self.chars.len()));
        self.words.push(text.to_string());
        self.labels.push(label);
    }
}

/// Parses one annotated line.
pub fn parse_annotated(line: &str) -> Result<Utterance> {
    let trimmed = line.trim_end_matches(['\n', '\r']);
    if trimmed.trim().is_empty() {
        return Err(Error::EmptyLine);
    }
    let mut b = Builder {
        chars: Vec::new(),
        words: Vec::new(),
        spans: Vec::new(),
        labels: Vec::new(),
    };

    let mut chunks: Vec<(usize, &str)> = Vec::new();
    let mut start = None;
    for (i, c) in trimmed.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                chunks.push((s, &trimmed[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        chunks.push((s, &trimmed[s..]));
    }

    for (ci, &(offset, chunk)) in chunks.iter().enumerate() {
        let body_end = chunk
            .char_indices()
            .rev()
            .take_while(|(_, c)| PUNCT.contains(c))
            .last()
            .map_or(chunk.len(), |(i, _)| i);
        let (mut body, punct) = chunk.split_at(body_end);
        let mut marked = false;
        if let Some(stripped) = body.strip_suffix(BREAK_MARKER) {
            body = stripped;
            marked = true;
        }
        if let Some(pos) = body.find('#') {
            return Err(Error::MalformedMarker {
                offset: offset + pos,
                reason: format!("unexpected `#` in `{chunk}`"),
            });
        }
        if marked && body.is_empty() {
            return Err(Error::MalformedMarker {
                offset,
                reason: "break marker without a word".into(),
            });
        }
        if !body.is_empty() {
            if ci > 0 {
                b.push(" ", BreakLabel::Blank);
            }
            let label = if marked { BreakLabel::Break } else { BreakLabel::NonBreak };
            b.push(body, label);
        }
        for c in punct.chars() {
            b.push(&c.to_string(), BreakLabel::Punctuation);
        }
    }

    match (b.words.last(), b.labels.last_mut()) {
        (Some(w), Some(l)) if *l == BreakLabel::Punctuation && w.chars().all(|c| TERMINAL_PUNCT.contains(&c)) => {
            *l = BreakLabel::StopToken;
        }
        _ => {
            return Err(Error::MalformedMarker {
                offset: trimmed.len(),
                reason: "line must end with `.`, `?` or `!`".into(),
            })
        }
    }

    Ok(Utterance {
        id: String::new(),
        raw_text: trimmed.to_string(),
        chars: b.chars,
        char_ids: Vec::new(),
        words: b.words,
        word_char_spans: b.spans,
        break_labels: b.labels,
        mel_target: None,
    })
}

/// Canonical annotated form of an utterance.
pub fn format_annotated(utt: &Utterance) -> String {
    let mut out = String::new();
    for (w, l) in utt.words.iter().zip(&utt.break_labels) {
        out.push_str(w);
        if *l == BreakLabel::Break {
            out.push_str(BREAK_MARKER);
        }
    }
    out
}

/// Plain text with break markers removed.
pub fn strip_annotations(line: &str) -> String {
    line.replace(BREAK_MARKER, "")
}
