use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Lower-cased whitespace tokenization. Punctuation stays attached.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Shared source/target token ↔ id map with four reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::contract(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Counts tokens over `documents` and keeps those seen at least
    /// `min_freq` times, ordered by descending frequency then lexically.
    pub fn build<'d>(documents: impl IntoIterator<Item = &'d str>, min_freq: usize) -> Result<Self> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut any = false;
        for doc in documents {
            any = true;
            for tok in tokenize(doc) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if !any {
            return Err(Error::contract("cannot build a vocabulary from an empty corpus"));
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq.max(1) && !RESERVED.contains(&t.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Joins tokens with single spaces, dropping `<pad>`, `<bos>` and `<eos>`.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD | BOS | EOS))
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// `token<TAB>id` per line, reserved entries first.
    pub fn to_tsv(&self) -> String {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{t}\t{i}\n"))
            .collect()
    }

    pub fn from_tsv(text: &str, origin: &Path) -> Result<Self> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::format(origin, format!("line {}: expected token<TAB>id", n + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::format(origin, format!("line {}: bad id {id:?}", n + 1)))?;
            if id != tokens.len() {
                return Err(Error::format(origin, format!("line {}: ids must be dense, got {id}", n + 1)));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < RESERVED.len() || tokens[..4] != RESERVED {
            return Err(Error::format(origin, "reserved entries missing or out of order"));
        }
        Self::from_tokens(tokens).map_err(|e| Error::format(origin, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_tsv(&text, path)
    }
}
