//! Unicode block classification of token surfaces.
//!
//! The block table is generated at build time from `data/Blocks-13.0.0.txt`
//! (Unicode Character Database 13.0.0).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

include!(concat!(env!("OUT_DIR"), "/blocks.rs"));

pub const UNICODE_VERSION: &str = "13.0.0";

/// Name used for code points outside every listed block.
pub const NO_BLOCK: &str = "No_Block";

/// Script class of a single token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ScriptClass {
    /// Only whitespace, digits, punctuation or symbols.
    AllowedNeutral,
    /// Block holding the majority of the token's alphabetic characters.
    Block(&'static str),
    /// Not valid UTF-8, or no single majority block.
    ByteFragment,
}

/// Unicode block containing `ch`.
pub fn block_of(ch: char) -> &'static str {
    let cp = ch as u32;
    let idx = BLOCKS.partition_point(|&(_, end, _)| end < cp);
    match BLOCKS.get(idx) {
        Some(&(start, _, name)) if start <= cp => name,
        _ => NO_BLOCK,
    }
}

pub fn block_names() -> impl Iterator<Item = &'static str> {
    BLOCKS.iter().map(|&(_, _, name)| name)
}

/// UAX #44 loose matching: case, whitespace, hyphens and underscores are ignored.
fn loose_key(name: &str) -> String {
    name.chars()
        .filter(|c| !c.is_whitespace() && *c != '-' && *c != '_')
        .flat_map(char::to_lowercase)
        .collect()
}

/// Resolves a user-supplied block name to its canonical spelling.
pub fn canonical_block(name: &str) -> Option<&'static str> {
    let key = loose_key(name);
    block_names()
        .chain(std::iter::once(NO_BLOCK))
        .find(|b| loose_key(b) == key)
}

/// Classifies decoded token bytes.
pub fn classify_surface(surface: &[u8]) -> ScriptClass {
    let Ok(text) = std::str::from_utf8(surface) else {
        return ScriptClass::ByteFragment;
    };
    let mut counts: BTreeMap<&'static str, usize> = BTreeMap::new();
    for ch in text.chars().filter(|c| c.is_alphabetic()) {
        *counts.entry(block_of(ch)).or_default() += 1;
    }
    let Some(&top) = counts.values().max() else {
        return ScriptClass::AllowedNeutral;
    };
    let mut leaders = counts.iter().filter(|&(_, &n)| n == top);
    match (leaders.next(), leaders.next()) {
        (Some((&name, _)), None) => ScriptClass::Block(name),
        _ => ScriptClass::ByteFragment,
    }
}

/// Which Unicode blocks count as the target language family.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum AllowedBlocks {
    #[default]
    All,
    Only(BTreeSet<&'static str>),
}

impl AllowedBlocks {
    /// Parses block names; `"all"` or `"*"` selects every block.
    pub fn parse<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        if names
            .iter()
            .any(|n| matches!(n.as_ref().trim(), "all" | "*"))
        {
            return Ok(AllowedBlocks::All);
        }
        let mut set = BTreeSet::new();
        for name in names {
            let name = name.as_ref().trim();
            match canonical_block(name) {
                Some(b) => {
                    set.insert(b);
                }
                None => {
                    let valid: Vec<_> = block_names().collect();
                    return Err(Error::Config(format!(
                        "unknown Unicode block {name:?}; valid names: {}",
                        valid.join(", ")
                    )));
                }
            }
        }
        Ok(AllowedBlocks::Only(set))
    }

    pub fn allows(&self, block: &str) -> bool {
        match self {
            AllowedBlocks::All => true,
            AllowedBlocks::Only(set) => set.contains(block),
        }
    }

    pub fn is_all(&self) -> bool {
        matches!(self, AllowedBlocks::All)
    }

    pub fn names(&self) -> Vec<String> {
        match self {
            AllowedBlocks::All => vec!["all".to_string()],
            AllowedBlocks::Only(set) => set.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Serialize for AllowedBlocks {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.names().serialize(s)
    }
}

impl<'de> Deserialize<'de> for AllowedBlocks {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        AllowedBlocks::parse(&names).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_sorted_and_complete() {
        assert!(BLOCKS.len() > 300);
        assert!(BLOCKS.windows(2).all(|w| w[0].1 < w[1].0));
        assert_eq!(block_of('a'), "Basic Latin");
        assert_eq!(block_of('é'), "Latin-1 Supplement");
        assert_eq!(block_of('中'), "CJK Unified Ideographs");
        assert_eq!(block_of('я'), "Cyrillic");
        assert_eq!(block_of('\u{10FFFF}'), "Supplementary Private Use Area-B");
        assert_eq!(block_of('\u{2FE0}'), NO_BLOCK);
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_surface(b" the"), ScriptClass::Block("Basic Latin"));
        assert_eq!(
            classify_surface("中".as_bytes()),
            ScriptClass::Block("CJK Unified Ideographs")
        );
        // continuation byte of a multi-byte sequence
        assert_eq!(classify_surface(&[0xB8]), ScriptClass::ByteFragment);
        assert_eq!(classify_surface(b" 42,!\n"), ScriptClass::AllowedNeutral);
    }

    #[test]
    fn mixed_scripts_majority_and_tie() {
        assert_eq!(
            classify_surface("ab中".as_bytes()),
            ScriptClass::Block("Basic Latin")
        );
        assert_eq!(
            classify_surface("a中".as_bytes()),
            ScriptClass::ByteFragment
        );
    }

    #[test]
    fn loose_names() {
        assert_eq!(
            canonical_block("latin extended a"),
            Some("Latin Extended-A")
        );
        assert_eq!(canonical_block("BASIC_LATIN"), Some("Basic Latin"));
        assert_eq!(canonical_block("Klingon"), None);
    }

    #[test]
    fn parse_allowed_blocks() {
        assert_eq!(AllowedBlocks::parse(&["all"]).unwrap(), AllowedBlocks::All);
        let only = AllowedBlocks::parse(&["basic latin", "CJK Unified Ideographs"]).unwrap();
        assert!(only.allows("Basic Latin"));
        assert!(!only.allows("Cyrillic"));
        let err = AllowedBlocks::parse(&["Klingon"]).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("Basic Latin")));
    }
}
