//! Byte-pair-encoding tokenizer loaded from a JSON file.
//!
//! File layout:
//!
//! ```json
//! {
//!   "vocab": {"a": 0, "b": 1, "ab": 2},
//!   "merges": ["a b"],
//!   "byte_level": false,
//!   "special_tokens": []
//! }
//! ```
//!
//! Merges may also be written as two-element arrays (`["a", "b"]`). A merge's
//! rank is its position in the list. With `byte_level` set, vocabulary strings
//! are spelled in the printable byte alphabet of byte-level BPE and every input
//! byte is first mapped into that alphabet.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::script::{classify_surface, ScriptClass};
use crate::token::{TokenId, TokenRecord, VocabularyTable};

/// The 256-entry byte <-> printable code point bijection of byte-level BPE.
pub struct ByteMap {
    to_char: [char; 256],
    to_byte: HashMap<char, u8>,
}

impl ByteMap {
    pub fn get() -> &'static ByteMap {
        static MAP: OnceLock<ByteMap> = OnceLock::new();
        MAP.get_or_init(|| {
            let printable = |b: u8| {
                (b'!'..=b'~').contains(&b)
                    || (0xA1..=0xAC).contains(&b)
                    || (0xAE..=0xFF).contains(&b)
            };
            let mut to_char = ['\0'; 256];
            let mut shifted = 0u32;
            for b in 0..=255u8 {
                to_char[b as usize] = if printable(b) {
                    char::from(b)
                } else {
                    shifted += 1;
                    char::from_u32(255 + shifted).unwrap()
                };
            }
            let to_byte = to_char
                .iter()
                .enumerate()
                .map(|(b, &c)| (c, b as u8))
                .collect();
            ByteMap { to_char, to_byte }
        })
    }

    pub fn char_of(&self, byte: u8) -> char {
        self.to_char[byte as usize]
    }

    pub fn byte_of(&self, ch: char) -> Option<u8> {
        self.to_byte.get(&ch).copied()
    }

    /// Maps raw bytes to their printable spelling.
    pub fn encode(&self, bytes: &[u8]) -> String {
        bytes.iter().map(|&b| self.char_of(b)).collect()
    }

    /// Inverse of [`ByteMap::encode`]; `None` if a character is outside the alphabet.
    pub fn decode(&self, text: &str) -> Option<Vec<u8>> {
        text.chars().map(|c| self.byte_of(c)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeRule {
    pub left: String,
    pub right: String,
    pub rank: u32,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MergeEntry {
    Joined(String),
    Pair([String; 2]),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenizerFile {
    vocab: BTreeMap<String, u32>,
    #[serde(default)]
    merges: Vec<MergeEntry>,
    #[serde(default)]
    byte_level: bool,
    #[serde(default)]
    special_tokens: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    table: VocabularyTable,
    merges: Vec<MergeRule>,
    special_tokens: Vec<TokenId>,
    pair_ranks: HashMap<(u32, u32), (u32, u32)>,
    /// Base symbol ids: bytes for byte-level tokenizers.
    byte_ids: [Option<u32>; 256],
    char_ids: HashMap<char, u32>,
}

impl Tokenizer {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        let file: TokenizerFile =
            serde_json::from_str(text).map_err(|e| Error::json(source_name, e))?;
        Self::from_parts(file)
    }

    fn from_parts(file: TokenizerFile) -> Result<Self> {
        let size = file.vocab.len();
        let mut strings: Vec<Option<String>> = vec![None; size];
        for (s, &id) in &file.vocab {
            let slot = strings.get_mut(id as usize).ok_or_else(|| {
                Error::Integrity(format!("token {s:?} has id {id}; ids must form 0..{size}"))
            })?;
            if slot.is_some() {
                return Err(Error::Integrity(format!("id {id} assigned twice")));
            }
            *slot = Some(s.clone());
        }
        let strings: Vec<String> = strings.into_iter().map(Option::unwrap).collect();

        let specials: HashSet<&str> = file.special_tokens.iter().map(String::as_str).collect();
        let mut special_tokens = Vec::with_capacity(specials.len());
        for s in &file.special_tokens {
            let id = *file.vocab.get(s).ok_or_else(|| {
                Error::Integrity(format!("special token {s:?} is not in the vocabulary"))
            })?;
            special_tokens.push(TokenId(id));
        }
        special_tokens.sort();
        special_tokens.dedup();

        let byte_map = ByteMap::get();
        let mut records = Vec::with_capacity(size);
        for (i, s) in strings.iter().enumerate() {
            let is_special = specials.contains(s.as_str());
            let surface = if file.byte_level && !is_special {
                byte_map.decode(s).ok_or_else(|| {
                    Error::Integrity(format!(
                        "token {s:?} (id {i}) uses characters outside the byte-level alphabet"
                    ))
                })?
            } else {
                s.as_bytes().to_vec()
            };
            let display = String::from_utf8(surface.clone()).ok();
            records.push(TokenRecord {
                id: TokenId(i as u32),
                surface,
                display,
                is_special,
            });
        }
        let table = VocabularyTable::new(records, file.byte_level)?;

        let mut merges = Vec::with_capacity(file.merges.len());
        let mut pair_ranks = HashMap::with_capacity(file.merges.len());
        for (rank, entry) in file.merges.into_iter().enumerate() {
            let (left, right) = match entry {
                MergeEntry::Pair([l, r]) => (l, r),
                MergeEntry::Joined(s) => match s.split_once(' ') {
                    Some((l, r)) if !l.is_empty() && !r.is_empty() && !r.contains(' ') => {
                        (l.to_string(), r.to_string())
                    }
                    _ => {
                        return Err(Error::Integrity(format!(
                            "merge rule {rank} {s:?} is not of the form \"left right\""
                        )))
                    }
                },
            };
            let lookup = |s: &str| {
                file.vocab.get(s).copied().ok_or_else(|| {
                    Error::Integrity(format!(
                        "merge rule {rank} \"{left} {right}\" references unknown token {s:?}"
                    ))
                })
            };
            let l = lookup(&left)?;
            let r = lookup(&right)?;
            let merged = lookup(&format!("{left}{right}"))?;
            if pair_ranks.insert((l, r), (rank as u32, merged)).is_some() {
                return Err(Error::Integrity(format!(
                    "merge rule {rank} \"{left} {right}\" duplicates an earlier rule"
                )));
            }
            merges.push(MergeRule {
                left,
                right,
                rank: rank as u32,
            });
        }

        let mut byte_ids = [None; 256];
        let mut char_ids = HashMap::new();
        for rec in table.records().iter().filter(|r| !r.is_special) {
            if file.byte_level {
                if let [b] = rec.surface[..] {
                    byte_ids[b as usize] = Some(rec.id.0);
                }
            } else if let Some(text) = &rec.display {
                let mut chars = text.chars();
                if let (Some(c), None) = (chars.next(), chars.next()) {
                    char_ids.insert(c, rec.id.0);
                }
            }
        }

        Ok(Self {
            table,
            merges,
            special_tokens,
            pair_ranks,
            byte_ids,
            char_ids,
        })
    }

    pub fn table(&self) -> &VocabularyTable {
        &self.table
    }

    pub fn size(&self) -> usize {
        self.table.size()
    }

    pub fn byte_level(&self) -> bool {
        self.table.byte_level()
    }

    pub fn merges(&self) -> &[MergeRule] {
        &self.merges
    }

    pub fn special_tokens(&self) -> &[TokenId] {
        &self.special_tokens
    }

    /// Id of the token spelled `text` (in the file's spelling).
    pub fn token_id(&self, text: &str) -> Option<TokenId> {
        if let Some(rec) = self
            .table
            .records()
            .iter()
            .find(|r| r.is_special && r.surface == text.as_bytes())
        {
            return Some(rec.id);
        }
        let surface = if self.byte_level() {
            ByteMap::get().decode(text)?
        } else {
            text.as_bytes().to_vec()
        };
        self.table.id_of_surface(&surface)
    }

    /// Maps text onto base symbols (bytes or characters).
    fn base_symbols(&self, text: &str) -> Result<Vec<u32>> {
        let mut out = Vec::with_capacity(text.len());
        for ch in text.chars() {
            if self.byte_level() {
                let mut buf = [0u8; 4];
                for &b in ch.encode_utf8(&mut buf).as_bytes() {
                    out.push(self.byte_ids[b as usize].ok_or(Error::Encoding {
                        ch,
                        doc_index: None,
                    })?);
                }
            } else {
                out.push(*self.char_ids.get(&ch).ok_or(Error::Encoding {
                    ch,
                    doc_index: None,
                })?);
            }
        }
        Ok(out)
    }

    /// Encodes text by repeatedly merging the leftmost occurrence of the
    /// lowest-ranked adjacent pair until no merge applies.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let symbols = self.base_symbols(text)?;
        Ok(self
            .merge_symbols(symbols)
            .into_iter()
            .map(TokenId)
            .collect())
    }

    fn merge_symbols(&self, mut ids: Vec<u32>) -> Vec<u32> {
        const NONE: usize = usize::MAX;
        let n = ids.len();
        if n < 2 || self.pair_ranks.is_empty() {
            return ids;
        }
        let mut prev: Vec<usize> = (0..n).map(|i| if i == 0 { NONE } else { i - 1 }).collect();
        let mut next: Vec<usize> = (0..n)
            .map(|i| if i + 1 == n { NONE } else { i + 1 })
            .collect();
        let mut alive = vec![true; n];

        // (rank, left position, left id, right id)
        let mut heap = BinaryHeap::new();
        for i in 0..n - 1 {
            if let Some(&(rank, _)) = self.pair_ranks.get(&(ids[i], ids[i + 1])) {
                heap.push(Reverse((rank, i, ids[i], ids[i + 1])));
            }
        }

        while let Some(Reverse((rank, i, l, r))) = heap.pop() {
            let j = next[i];
            if !alive[i] || j == NONE || ids[i] != l || ids[j] != r {
                continue;
            }
            let (_, merged) = self.pair_ranks[&(l, r)];
            debug_assert_eq!(self.pair_ranks[&(l, r)].0, rank);
            ids[i] = merged;
            alive[j] = false;
            next[i] = next[j];
            if next[j] != NONE {
                prev[next[j]] = i;
            }
            if prev[i] != NONE {
                let p = prev[i];
                if let Some(&(rk, _)) = self.pair_ranks.get(&(ids[p], merged)) {
                    heap.push(Reverse((rk, p, ids[p], merged)));
                }
            }
            if next[i] != NONE {
                let q = next[i];
                if let Some(&(rk, _)) = self.pair_ranks.get(&(merged, ids[q])) {
                    heap.push(Reverse((rk, i, merged, ids[q])));
                }
            }
        }

        ids.iter()
            .zip(&alive)
            .filter_map(|(&id, &a)| a.then_some(id))
            .collect()
    }

    /// Concatenated surface bytes of `ids`.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            out.extend_from_slice(&self.table.get(id)?.surface);
        }
        Ok(out)
    }

    /// Decodes ids to text; byte sequences that are not valid UTF-8 are replaced lossily.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let bytes = self.decode_bytes(ids)?;
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    pub fn classify_script(&self, id: TokenId) -> ScriptClass {
        match self.table.get(id) {
            Ok(rec) if rec.is_special => ScriptClass::AllowedNeutral,
            Ok(rec) => classify_surface(&rec.surface),
            Err(_) => ScriptClass::ByteFragment,
        }
    }
}
