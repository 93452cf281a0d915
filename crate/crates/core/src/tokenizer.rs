//! Word-level tokenizer with sentence-pair segments.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

const SPECIALS: [&str; 4] = [PAD, UNK, CLS, SEP];
const PUNCTUATION: &[char] = &['.', ',', ';', ':', '!', '?', '\'', '"', '(', ')', '-'];

const DEFAULT_VOCAB: &str = include_str!("../assets/vocab.txt");

/// Attention regime of the model: decoder-style or encoder-style.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Causal,
    Bidirectional,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Causal => "causal",
            Mode::Bidirectional => "bidirectional",
        }
    }

    pub fn flag(self) -> u32 {
        match self {
            Mode::Causal => 0,
            Mode::Bidirectional => 1,
        }
    }

    pub fn from_flag(flag: u32) -> Option<Self> {
        match flag {
            0 => Some(Mode::Causal),
            1 => Some(Mode::Bidirectional),
            _ => None,
        }
    }

    /// Number of key positions visible to query `i` in a sequence of `n`.
    pub fn allowed_len(self, i: usize, n: usize) -> usize {
        match self {
            Mode::Causal => i + 1,
            Mode::Bidirectional => n,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(Mode::Causal),
            "bidirectional" => Ok(Mode::Bidirectional),
            other => Err(Error::Input(format!(
                "unknown mode {other:?} (expected causal or bidirectional)"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Parses the one-token-per-line format; the line number is the id and
    /// the first four lines must be the special tokens.
    pub fn parse(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text
            .lines()
            .map(|l| l.trim_end_matches('\r').to_string())
            .collect();
        for (id, special) in SPECIALS.iter().enumerate() {
            if tokens.get(id).map(String::as_str) != Some(*special) {
                return Err(Error::Format(format!(
                    "vocabulary line {} must be {special}",
                    id + 1
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::Format(format!(
                    "vocabulary line {} is empty",
                    id + 1
                )));
            }
            if index.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The vocabulary shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_VOCAB).expect("bundled vocabulary is well formed")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lookup(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::builtin()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedInput {
    pub display: Vec<String>,
    pub ids: Vec<u32>,
    pub segments: Vec<u8>,
    pub mode: Mode,
}

impl TokenizedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Lowercases, splits on whitespace and breaks every punctuation character
/// out as its own word.
pub fn split_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in text.to_lowercase().split_whitespace() {
        let mut current = String::new();
        for ch in chunk.chars() {
            if PUNCTUATION.contains(&ch) {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                words.push(ch.to_string());
            } else {
                current.push(ch);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

pub fn tokenize(
    text_a: &str,
    text_b: Option<&str>,
    mode: Mode,
    vocab: &Vocabulary,
    max_seq: usize,
) -> Result<TokenizedInput> {
    if text_a.trim().is_empty() {
        return Err(Error::Input("text must not be empty".into()));
    }
    if text_b.is_some() && mode == Mode::Causal {
        return Err(Error::Mode(
            "a second sentence requires a bidirectional model".into(),
        ));
    }
    if text_b.is_some_and(|b| b.trim().is_empty()) {
        return Err(Error::Input("text_b must not be empty when given".into()));
    }

    let mut out = TokenizedInput {
        display: Vec::new(),
        ids: Vec::new(),
        segments: Vec::new(),
        mode,
    };
    let mut push = |display: String, id: u32, segment: u8| {
        out.display.push(display);
        out.ids.push(id);
        out.segments.push(segment);
    };
    let words = |text: &str, segment: u8, push: &mut dyn FnMut(String, u32, u8)| {
        for w in split_words(text) {
            let id = vocab.lookup(&w);
            push(w, id, segment);
        }
    };

    match mode {
        Mode::Causal => words(text_a, 0, &mut push),
        Mode::Bidirectional => {
            push(CLS.into(), CLS_ID, 0);
            words(text_a, 0, &mut push);
            push(SEP.into(), SEP_ID, 0);
            if let Some(b) = text_b {
                words(b, 1, &mut push);
                push(SEP.into(), SEP_ID, 1);
            }
        }
    }

    if out.len() > max_seq {
        return Err(Error::Length {
            len: out.len(),
            max: max_seq,
        });
    }
    Ok(out)
}
