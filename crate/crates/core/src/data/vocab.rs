//! Word and tag vocabularies and the whitespace/punctuation tokenizer.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const UNK: u32 = 3;
pub const NOOBJ: u32 = 4;

/// Reserved tokens in id order.
pub const RESERVED: [&str; 5] = ["[PAD]", "[CLS]", "[SEP]", "[UNK]", "[NOOBJ]"];

/// Largest tag vocabulary accepted.
pub const MAX_TAGS: usize = 1600;

/// Dense word vocabulary; ids 0..5 are the reserved tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Reserved tokens followed by `words` (lowercased, duplicates skipped).
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for w in RESERVED {
            v.push(w.to_string());
        }
        for w in words {
            let w = w.as_ref().to_lowercase();
            if !v.index.contains_key(&w) {
                v.push(w);
            }
        }
        v
    }

    fn push(&mut self, token: String) {
        self.index.insert(token.to_lowercase(), self.tokens.len() as u32);
        self.tokens.push(token);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(&token.to_lowercase()).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(&token.to_lowercase())
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, line number = id; the first lines must be the
    /// reserved tokens in order.
    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(str::trim).collect();
        for (i, r) in RESERVED.iter().enumerate() {
            if lines.get(i).map(|l| l.to_lowercase()) != Some(r.to_lowercase()) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected reserved token {r}"),
                });
            }
        }
        let mut v = Self::new(std::iter::empty::<&str>());
        for (i, &line) in lines.iter().enumerate().skip(RESERVED.len()) {
            if line.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "empty token".into(),
                });
            }
            if v.contains(line) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate token `{line}`"),
                });
            }
            v.push(line.to_lowercase());
        }
        Ok(v)
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Object-tag names; line number = id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagVocabulary {
    names: Vec<String>,
}

impl TagVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() > MAX_TAGS {
            return Err(Error::Config(format!("{} tags exceed the limit of {}", names.len(), MAX_TAGS)));
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Word ids spelling each tag, indexed by tag id.
    pub fn token_table(&self, vocab: &Vocabulary) -> Vec<Vec<u32>> {
        self.names.iter().map(|n| words(n).map(|w| vocab.id(&w)).collect()).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "empty tag".into(),
                });
            }
            names.push(line.to_string());
        }
        Self::new(names)
    }

    pub fn to_text(&self) -> String {
        self.names.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Lowercased words; punctuation separates words and is dropped, except
/// inside bracketed reserved tokens such as `[SEP]`.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = lower.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '[' {
            let rest: String = chars.clone().take_while(|&x| x != ']').collect();
            let candidate = format!("[{rest}]");
            if RESERVED.iter().any(|r| r.to_lowercase() == candidate) {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.push(candidate);
                for _ in 0..=rest.chars().count() {
                    chars.next();
                }
                continue;
            }
        }
        if c.is_alphanumeric() {
            current.push(c);
        } else if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out.into_iter()
}

/// `[CLS]` followed by word ids, truncated to `max_len` and padded with
/// `[PAD]` to exactly `max_len`.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Vec<u32> {
    let mut ids = vec![CLS];
    ids.extend(words(text).map(|w| vocab.id(&w)));
    ids.truncate(max_len);
    ids.resize(max_len, PAD);
    ids
}

/// Words for every id other than `[PAD]` and `[CLS]`; other reserved ids are
/// rendered in bracket form.
pub fn detokenize(ids: &[u32], vocab: &Vocabulary) -> String {
    ids.iter()
        .filter(|&&id| id != PAD && id != CLS)
        .map(|&id| vocab.token(id).unwrap_or(RESERVED[UNK as usize]))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Several captions joined by `[SEP]` into one query.
pub fn multi_sentence_query(captions: &[String], vocab: &Vocabulary, max_len: usize) -> Vec<u32> {
    tokenize(&captions.join(" [SEP] "), vocab, max_len)
}
