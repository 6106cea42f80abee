//! Caption vocabulary and sentence encoding.
//!
//! Tokenization is a plain whitespace split: case and attached punctuation
//! are preserved exactly as written.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const PAD: usize = 2;
pub const UNK: usize = 3;

/// Maximum number of interior (non-special) tokens in a sentence.
pub const MAX_SENTENCE_LEN: usize = 20;

pub const SPECIAL_TOKENS: [&str; 4] = ["<bos>", "<eos>", "<pad>", "<unk>"];

/// Bidirectional word/id map. Ids 0..4 are the special tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

/// Encoded sentence, `BOS w1 .. wn EOS`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSequence(pub Vec<usize>);

impl TokenSequence {
    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Tokens between BOS and EOS.
    pub fn interior(&self) -> &[usize] {
        let ids = &self.0[..];
        let start = usize::from(ids.first() == Some(&BOS));
        let end = if ids.len() > start && ids.last() == Some(&EOS) {
            ids.len() - 1
        } else {
            ids.len()
        };
        &ids[start..end]
    }
}

pub fn tokenize(sentence: &str) -> impl Iterator<Item = &str> {
    sentence.split_whitespace()
}

impl Vocabulary {
    fn with_specials() -> Self {
        let mut v = Self {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for s in SPECIAL_TOKENS {
            v.push(s.to_string());
        }
        v
    }

    fn push(&mut self, word: String) -> usize {
        let id = self.words.len();
        self.index.insert(word.clone(), id);
        self.words.push(word);
        id
    }

    /// One entry per distinct token in order of first occurrence, after the
    /// four specials.
    pub fn build<S: AsRef<str>>(sentences: &[S]) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::invalid(
                "cannot build a vocabulary from an empty corpus",
            ));
        }
        let mut vocab = Self::with_specials();
        for sentence in sentences {
            for tok in tokenize(sentence.as_ref()) {
                if SPECIAL_TOKENS.contains(&tok) {
                    return Err(Error::invalid(format!(
                        "corpus contains reserved token {tok:?}"
                    )));
                }
                if !vocab.index.contains_key(tok) {
                    vocab.push(tok.to_string());
                }
            }
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode(&self, sentence: &str) -> TokenSequence {
        let mut ids = vec![BOS];
        ids.extend(
            tokenize(sentence)
                .take(MAX_SENTENCE_LEN)
                .map(|t| self.id(t).unwrap_or(UNK)),
        );
        ids.push(EOS);
        TokenSequence(ids)
    }

    /// Drops BOS/EOS/PAD and joins the remaining words with single spaces.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            let w = self
                .word(id)
                .ok_or_else(|| Error::invalid(format!("token id {id} out of range")))?;
            if matches!(id, BOS | EOS | PAD) {
                continue;
            }
            words.push(w);
        }
        Ok(words.join(" "))
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        for w in &self.words {
            writeln!(out, "{w}")?;
        }
        Ok(())
    }

    /// Reads one token per line; line number is the id.
    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let mut vocab = Self {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let word = line.trim_end_matches('\r');
            if vocab.index.contains_key(word) {
                return Err(Error::format(format!(
                    "duplicate vocabulary entry {word:?} on line {}",
                    lineno + 1
                )));
            }
            vocab.push(word.to_string());
        }
        for (id, s) in SPECIAL_TOKENS.iter().enumerate() {
            if vocab.word(id) != Some(*s) {
                return Err(Error::format(format!(
                    "vocabulary line {} must be the special token {s}",
                    id + 1
                )));
            }
        }
        Ok(vocab)
    }
}
