//! Atom-wise SMILES tokenization and the token vocabulary.
//!
//! Tokens are produced by maximal munch in a fixed rule order: bracket atom
//! (`[...]`), two-digit ring label (`%nn`), two-letter organic element
//! (`Cl`, `Br`), then a single character.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const BOS: &str = "<BOS>";
pub const EOS: &str = "<EOS>";
pub const PAD: &str = "<PAD>";

const DEFAULT_VOCAB: &str = include_str!("../data/vocab.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("unknown token {token:?} at byte {offset}")]
    UnknownToken { token: String, offset: usize },
    #[error("unterminated bracket atom starting at byte {offset}")]
    UnterminatedBracket { offset: usize },
    #[error("duplicate token {0:?} in vocabulary")]
    DuplicateToken(String),
    #[error("empty token symbol on line {0}")]
    EmptySymbol(usize),
    #[error("token id {0} is out of range")]
    UnknownTokenId(usize),
    #[error("failed to read vocabulary: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub symbol: String,
    pub id: usize,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.symbol)
    }
}

/// Immutable token table. Ids are `0..len()` in declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    index: HashMap<String, usize>,
    bos_id: usize,
    eos_id: usize,
    pad_id: usize,
    /// Specials that were missing from the source and appended on load.
    appended_specials: Vec<&'static str>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::parse(DEFAULT_VOCAB).expect("bundled vocabulary is well formed")
    }
}

impl Vocabulary {
    /// Builds a vocabulary from the text form: one symbol per line, `#`-prefixed
    /// comment lines ignored. A line holding exactly `#` is the triple-bond
    /// symbol, not a comment.
    pub fn parse(text: &str) -> Result<Self, VocabError> {
        let mut symbols = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.starts_with('#') && line != "#" {
                continue;
            }
            let sym = line.trim();
            if sym.is_empty() {
                if line.is_empty() {
                    continue;
                }
                return Err(VocabError::EmptySymbol(lineno + 1));
            }
            symbols.push(sym.to_string());
        }
        Self::from_symbols(symbols)
    }

    pub fn from_symbols<I, S>(symbols: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens = Vec::new();
        let mut index = HashMap::new();
        for sym in symbols {
            let symbol = sym.into();
            if symbol.is_empty() {
                return Err(VocabError::EmptySymbol(tokens.len() + 1));
            }
            if index.contains_key(&symbol) {
                return Err(VocabError::DuplicateToken(symbol));
            }
            index.insert(symbol.clone(), tokens.len());
            tokens.push(Token { symbol, id: tokens.len() });
        }
        let mut appended_specials = Vec::new();
        for special in [BOS, EOS, PAD] {
            if !index.contains_key(special) {
                index.insert(special.to_string(), tokens.len());
                tokens.push(Token { symbol: special.to_string(), id: tokens.len() });
                appended_specials.push(special);
            }
        }
        Ok(Self {
            bos_id: index[BOS],
            eos_id: index[EOS],
            pad_id: index[PAD],
            tokens,
            index,
            appended_specials,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| VocabError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&Token> {
        self.tokens.get(id)
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.tokens[id].symbol
    }

    pub fn lookup(&self, symbol: &str) -> Option<&Token> {
        self.index.get(symbol).map(|&id| &self.tokens[id])
    }

    pub fn id_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn bos_id(&self) -> usize {
        self.bos_id
    }

    pub fn eos_id(&self) -> usize {
        self.eos_id
    }

    pub fn pad_id(&self) -> usize {
        self.pad_id
    }

    pub fn is_special(&self, id: usize) -> bool {
        id == self.bos_id || id == self.eos_id || id == self.pad_id
    }

    /// Specials that the source did not declare and were appended on load.
    pub fn appended_specials(&self) -> &[&'static str] {
        &self.appended_specials
    }

    /// Stable 64-bit fingerprint of the ordered symbol list.
    pub fn hash64(&self) -> u64 {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.symbol.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    pub fn tokenize(&self, smiles: &str) -> Result<Vec<Token>, VocabError> {
        split_units(smiles)?
            .into_iter()
            .map(|(offset, unit)| {
                self.lookup(unit).cloned().ok_or_else(|| VocabError::UnknownToken {
                    token: unit.to_string(),
                    offset,
                })
            })
            .collect()
    }

    pub fn encode(&self, smiles: &str) -> Result<Vec<usize>, VocabError> {
        Ok(self.tokenize(smiles)?.into_iter().map(|t| t.id).collect())
    }

    /// Concatenates symbols of `ids`, stopping at the first EOS and skipping
    /// BOS/PAD.
    pub fn decode(&self, ids: &[usize]) -> Result<String, VocabError> {
        let mut out = String::new();
        for &id in ids {
            if id == self.eos_id {
                break;
            }
            if id == self.bos_id || id == self.pad_id {
                continue;
            }
            let tok = self.token(id).ok_or(VocabError::UnknownTokenId(id))?;
            out.push_str(&tok.symbol);
        }
        Ok(out)
    }
}

/// Inverse of [`Vocabulary::tokenize`].
pub fn detokenize(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.symbol.as_str()).collect()
}

pub(crate) fn split_units(smiles: &str) -> Result<Vec<(usize, &str)>, VocabError> {
    let bytes = smiles.as_bytes();
    let mut units = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let len = match bytes[i] {
            b'[' => match bytes[i..].iter().position(|&b| b == b']') {
                Some(close) => close + 1,
                None => return Err(VocabError::UnterminatedBracket { offset: i }),
            },
            b'%' if bytes.get(i + 1).is_some_and(u8::is_ascii_digit)
                && bytes.get(i + 2).is_some_and(u8::is_ascii_digit) =>
            {
                3
            }
            b'C' if bytes.get(i + 1) == Some(&b'l') => 2,
            b'B' if bytes.get(i + 1) == Some(&b'r') => 2,
            _ => smiles[i..].chars().next().map_or(1, char::len_utf8),
        };
        units.push((i, &smiles[i..i + len]));
        i += len;
    }
    Ok(units)
}
