//! Token identities, vocabulary tables, documents and token sets.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a token in its vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<u32> for TokenId {
    fn from(v: u32) -> Self {
        TokenId(v)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Converts a slice of raw ids.
pub fn ids(raw: &[u32]) -> Vec<TokenId> {
    raw.iter().copied().map(TokenId).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenRecord {
    pub id: TokenId,
    /// Decoded byte content of the token.
    pub surface: Vec<u8>,
    /// `surface` as text, when it is valid UTF-8.
    pub display: Option<String>,
    pub is_special: bool,
}

/// The id <-> surface universe of a tokenizer. Ids are exactly `0..size`.
#[derive(Debug, Clone)]
pub struct VocabularyTable {
    records: Vec<TokenRecord>,
    byte_level: bool,
    by_surface: HashMap<Vec<u8>, TokenId>,
}

impl VocabularyTable {
    /// Builds a table from records already ordered by id.
    pub fn new(records: Vec<TokenRecord>, byte_level: bool) -> Result<Self> {
        let mut by_surface = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            if rec.id.index() != i {
                return Err(Error::Integrity(format!(
                    "record at position {i} carries id {}; ids must be 0..{}",
                    rec.id,
                    records.len()
                )));
            }
            if rec.is_special {
                continue;
            }
            if rec.surface.is_empty() {
                return Err(Error::Integrity(format!(
                    "token {i} has an empty surface and is not special"
                )));
            }
            if let Some(prev) = by_surface.insert(rec.surface.clone(), rec.id) {
                return Err(Error::Integrity(format!(
                    "tokens {prev} and {i} decode to the same bytes {:?}",
                    String::from_utf8_lossy(&rec.surface)
                )));
            }
        }
        Ok(Self {
            records,
            byte_level,
            by_surface,
        })
    }

    pub fn size(&self) -> usize {
        self.records.len()
    }

    pub fn byte_level(&self) -> bool {
        self.byte_level
    }

    pub fn records(&self) -> &[TokenRecord] {
        &self.records
    }

    pub fn get(&self, id: TokenId) -> Result<&TokenRecord> {
        self.records.get(id.index()).ok_or(Error::InvalidToken {
            id: id.0,
            size: self.records.len(),
            doc_index: None,
        })
    }

    /// Looks up a non-special token by its decoded bytes.
    pub fn id_of_surface(&self, surface: &[u8]) -> Option<TokenId> {
        self.by_surface.get(surface).copied()
    }

    pub fn special_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.records.iter().filter(|r| r.is_special).map(|r| r.id)
    }
}

/// One (input, output) example of a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Document {
    pub doc_index: usize,
    pub input_ids: Vec<TokenId>,
    pub output_ids: Vec<TokenId>,
}

impl Document {
    pub fn new(doc_index: usize, input_ids: Vec<TokenId>, output_ids: Vec<TokenId>) -> Self {
        Self {
            doc_index,
            input_ids,
            output_ids,
        }
    }

    /// Checks every id against a vocabulary of `size` tokens.
    pub fn validate(&self, size: usize) -> Result<()> {
        for id in self.input_ids.iter().chain(&self.output_ids) {
            if id.index() >= size {
                return Err(Error::InvalidToken {
                    id: id.0,
                    size,
                    doc_index: Some(self.doc_index),
                });
            }
        }
        Ok(())
    }
}

/// A set of token ids over a fixed universe `0..universe`, stored as a dense bitset.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct TokenSet {
    universe: usize,
    words: Vec<u64>,
    len: usize,
}

impl fmt::Debug for TokenSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|t| t.0)).finish()
    }
}

impl TokenSet {
    pub fn new(universe: usize) -> Self {
        Self {
            universe,
            words: vec![0; universe.div_ceil(64)],
            len: 0,
        }
    }

    /// Set of the distinct values of `ids`.
    pub fn from_ids<I>(universe: usize, ids: I) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: Into<TokenId>,
    {
        let mut set = Self::new(universe);
        for id in ids {
            set.insert(id.into())?;
        }
        Ok(set)
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Returns true when the id was not already present.
    pub fn insert(&mut self, id: TokenId) -> Result<bool> {
        let i = id.index();
        if i >= self.universe {
            return Err(Error::InvalidToken {
                id: id.0,
                size: self.universe,
                doc_index: None,
            });
        }
        let (w, b) = (i / 64, i % 64);
        let fresh = self.words[w] & (1 << b) == 0;
        if fresh {
            self.words[w] |= 1 << b;
            self.len += 1;
        }
        Ok(fresh)
    }

    pub fn remove(&mut self, id: TokenId) -> bool {
        let i = id.index();
        if i >= self.universe {
            return false;
        }
        let (w, b) = (i / 64, i % 64);
        let present = self.words[w] & (1 << b) != 0;
        if present {
            self.words[w] &= !(1 << b);
            self.len -= 1;
        }
        present
    }

    #[inline]
    pub fn contains(&self, id: TokenId) -> bool {
        let i = id.index();
        i < self.universe && self.words[i / 64] & (1 << (i % 64)) != 0
    }

    /// Members in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let b = bits.trailing_zeros();
                bits &= bits - 1;
                Some(TokenId((w * 64) as u32 + b))
            })
        })
    }

    pub fn to_vec(&self) -> Vec<TokenId> {
        self.iter().collect()
    }

    fn check_universe(&self, other: &TokenSet) -> Result<()> {
        if self.universe != other.universe {
            return Err(Error::VocabMismatch {
                left: self.universe,
                right: other.universe,
            });
        }
        Ok(())
    }

    fn combine(&self, other: &TokenSet, op: impl Fn(u64, u64) -> u64) -> Result<TokenSet> {
        self.check_universe(other)?;
        let words: Vec<u64> = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(&a, &b)| op(a, b))
            .collect();
        let len = words.iter().map(|w| w.count_ones() as usize).sum();
        Ok(TokenSet {
            universe: self.universe,
            words,
            len,
        })
    }

    pub fn union(&self, other: &TokenSet) -> Result<TokenSet> {
        self.combine(other, |a, b| a | b)
    }

    pub fn intersection(&self, other: &TokenSet) -> Result<TokenSet> {
        self.combine(other, |a, b| a & b)
    }

    pub fn difference(&self, other: &TokenSet) -> Result<TokenSet> {
        self.combine(other, |a, b| a & !b)
    }

    /// In-place union.
    pub fn union_with(&mut self, other: &TokenSet) -> Result<()> {
        self.check_universe(other)?;
        let mut len = 0;
        for (a, &b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
            len += a.count_ones() as usize;
        }
        self.len = len;
        Ok(())
    }

    pub fn is_subset(&self, other: &TokenSet) -> Result<bool> {
        self.check_universe(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .all(|(&a, &b)| a & !b == 0))
    }

    pub fn is_disjoint(&self, other: &TokenSet) -> Result<bool> {
        self.check_universe(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .all(|(&a, &b)| a & b == 0))
    }
}
