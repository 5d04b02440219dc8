//! Offline construction of the static task vocabulary.
//!
//! Three filters run in order over the tokens emitted in any profiled output:
//!
//! 1. input-aware: drop tokens the inputs already supply,
//! 2. language: keep tokens of the configured Unicode blocks,
//! 3. tolerance: sort the survivors by ascending document frequency and prune
//!    the longest prefix whose cumulative frequency stays within `tau * M`.
//!
//! Pruned tokens together appear in at most `tau * M` profiling outputs, which
//! bounds the number of profiling documents that can lose a needed token.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::{read_json, write_json};
use crate::error::{Error, Result};
use crate::profile::ProfiledCorpus;
use crate::script::{AllowedBlocks, ScriptClass};
use crate::token::{TokenId, TokenSet};
use crate::tokenizer::Tokenizer;

/// Which input tokens the input-aware filter removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFilter {
    /// Remove every token seen in any profiling input.
    #[default]
    CorpusUnion,
    /// Keep a token if at least one document emits it without it being in
    /// that document's own input.
    PerExample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub tau: f64,
    pub allowed_blocks: AllowedBlocks,
    pub keep_byte_fragments: bool,
    /// Never pruned; typically the tokenizer's special tokens.
    pub always_keep: Vec<TokenId>,
    pub input_filter: InputFilter,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            tau: 0.01,
            allowed_blocks: AllowedBlocks::All,
            keep_byte_fragments: true,
            always_keep: Vec::new(),
            input_filter: InputFilter::CorpusUnion,
        }
    }
}

impl FilterConfig {
    pub fn with_tau(tau: f64) -> Result<Self> {
        let cfg = Self {
            tau,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default configuration keeping the tokenizer's special tokens.
    pub fn for_tokenizer(tau: f64, tokenizer: &Tokenizer) -> Result<Self> {
        let mut cfg = Self::with_tau(tau)?;
        cfg.always_keep = tokenizer.special_tokens().to_vec();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        validate_tau(self.tau)
    }
}

pub fn validate_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("tau must lie in [0, 1], got {tau}")));
    }
    Ok(())
}

/// `floor(tau * num_docs)`, computed exactly from the binary value of `tau`.
pub fn tolerance_budget(tau: f64, num_docs: usize) -> u64 {
    debug_assert!((0.0..=1.0).contains(&tau));
    if tau <= 0.0 {
        return 0;
    }
    let bits = tau.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (mantissa, exp) = if exp_bits == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp_bits - 1075)
    };
    let product = mantissa as u128 * num_docs as u128;
    if exp >= 0 {
        (product << exp) as u64
    } else if -exp >= 128 {
        0
    } else {
        (product >> (-exp)) as u64
    }
}

/// Where a token left (or stayed in) the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    RemovedInputAware,
    RemovedLanguage,
    PrunedTolerance,
    Retained,
    AlwaysKeep,
}

/// Input-aware filtering: `candidates \ input_tokens`.
pub fn input_aware_filter(candidates: &TokenSet, input_tokens: &TokenSet) -> Result<TokenSet> {
    candidates.difference(input_tokens)
}

/// Language filtering by Unicode block. Without a tokenizer no token can be
/// classified, so only the all-blocks configuration is accepted.
pub fn language_filter(
    candidates: &TokenSet,
    cfg: &FilterConfig,
    tokenizer: Option<&Tokenizer>,
) -> Result<TokenSet> {
    let Some(tokenizer) = tokenizer else {
        if cfg.allowed_blocks.is_all() {
            return Ok(candidates.clone());
        }
        return Err(Error::Config(
            "Unicode block filtering needs a tokenizer to classify tokens".into(),
        ));
    };
    if tokenizer.size() != candidates.universe() {
        return Err(Error::VocabMismatch {
            left: candidates.universe(),
            right: tokenizer.size(),
        });
    }
    let mut kept = TokenSet::new(candidates.universe());
    for id in candidates.iter() {
        let keep = cfg.always_keep.contains(&id)
            || match tokenizer.classify_script(id) {
                ScriptClass::AllowedNeutral => true,
                ScriptClass::Block(b) => cfg.allowed_blocks.allows(b),
                ScriptClass::ByteFragment => cfg.keep_byte_fragments,
            };
        if keep {
            kept.insert(id)?;
        }
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToleranceOutcome {
    pub kept: TokenSet,
    pub pruned: TokenSet,
    /// Sum of document frequencies over `pruned`.
    pub pruned_df_sum: u64,
}

/// Tolerance filtering. Candidates are ordered by `(df, id)`; the longest
/// prefix with cumulative df `<= tau * num_docs` is pruned. Tokens in
/// `always_keep` are never pruned.
pub fn tolerance_filter(
    candidates: &TokenSet,
    df: &[u32],
    num_docs: usize,
    tau: f64,
    always_keep: &[TokenId],
) -> Result<ToleranceOutcome> {
    if num_docs == 0 {
        return Err(Error::Empty(
            "tolerance filtering needs at least one document",
        ));
    }
    validate_tau(tau)?;
    let df_of = |id: TokenId| df.get(id.index()).copied().unwrap_or(0) as u64;

    let mut order: Vec<(u64, TokenId)> = candidates
        .iter()
        .filter(|id| !always_keep.contains(id))
        .map(|id| (df_of(id), id))
        .collect();
    order.sort_unstable();

    let budget = tolerance_budget(tau, num_docs);
    let mut pruned = TokenSet::new(candidates.universe());
    let mut cumulative = 0u64;
    for &(f, id) in &order {
        if cumulative + f > budget {
            break;
        }
        cumulative += f;
        pruned.insert(id)?;
    }
    Ok(ToleranceOutcome {
        kept: candidates.difference(&pruned)?,
        pruned,
        pruned_df_sum: cumulative,
    })
}

/// The calibrated static task vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticTaskVocab {
    pub vocab_size: usize,
    pub num_docs: usize,
    pub tau: f64,
    pub allowed_blocks: AllowedBlocks,
    pub keep_byte_fragments: bool,
    pub input_filter: InputFilter,
    pub members: TokenSet,
    /// Sizes of the candidate set, after input-aware, after language, and of the result.
    pub stage_sizes: [usize; 4],
    pub pruned_df_sum: u64,
    pub provenance: BTreeMap<TokenId, Provenance>,
}

impl StaticTaskVocab {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn with_provenance(&self, which: Provenance) -> TokenSet {
        let mut set = TokenSet::new(self.vocab_size);
        for (&id, &p) in &self.provenance {
            if p == which {
                set.insert(id).expect("provenance ids are in range");
            }
        }
        set
    }

    /// Tokens removed by tolerance filtering.
    pub fn pruned(&self) -> TokenSet {
        self.with_provenance(Provenance::PrunedTolerance)
    }

    pub fn always_keep(&self) -> TokenSet {
        self.with_provenance(Provenance::AlwaysKeep)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, &self.to_file())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(read_json(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("static vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text).map_err(|e| Error::json("static vocab", e))?)
    }

    fn to_file(&self) -> StaticVocabFile {
        StaticVocabFile {
            tau: self.tau,
            allowed_blocks: self.allowed_blocks.clone(),
            keep_byte_fragments: self.keep_byte_fragments,
            input_filter: self.input_filter,
            vocab_size: self.vocab_size,
            m: self.num_docs,
            members: self.members.iter().map(|t| t.0).collect(),
            stage_sizes: self.stage_sizes,
            pruned_df_sum: self.pruned_df_sum,
            provenance: self.provenance.iter().map(|(k, v)| (k.0, *v)).collect(),
        }
    }

    fn from_file(f: StaticVocabFile) -> Result<Self> {
        validate_tau(f.tau)?;
        let members = TokenSet::from_ids(f.vocab_size, f.members)?;
        let mut provenance = BTreeMap::new();
        for (id, p) in f.provenance {
            if id as usize >= f.vocab_size {
                return Err(Error::InvalidToken {
                    id,
                    size: f.vocab_size,
                    doc_index: None,
                });
            }
            provenance.insert(TokenId(id), p);
        }
        let vocab = StaticTaskVocab {
            vocab_size: f.vocab_size,
            num_docs: f.m,
            tau: f.tau,
            allowed_blocks: f.allowed_blocks,
            keep_byte_fragments: f.keep_byte_fragments,
            input_filter: f.input_filter,
            members,
            stage_sizes: f.stage_sizes,
            pruned_df_sum: f.pruned_df_sum,
            provenance,
        };
        vocab.check_invariants()?;
        Ok(vocab)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let s = self.stage_sizes;
        if !(s[0] >= s[1] && s[1] >= s[2]) || s[3] != self.members.len() {
            return Err(Error::Integrity(format!("inconsistent stage sizes {s:?}")));
        }
        for (&id, &p) in &self.provenance {
            let member = self.members.contains(id);
            if member != matches!(p, Provenance::Retained | Provenance::AlwaysKeep) {
                return Err(Error::Integrity(format!(
                    "token {id} has provenance {p:?} but membership {member}"
                )));
            }
        }
        if self
            .members
            .iter()
            .any(|id| !self.provenance.contains_key(&id))
        {
            return Err(Error::Integrity("member without provenance".into()));
        }
        if self.pruned_df_sum > tolerance_budget(self.tau, self.num_docs) {
            return Err(Error::Integrity(format!(
                "pruned df sum {} exceeds tau * M = {} * {}",
                self.pruned_df_sum, self.tau, self.num_docs
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct StaticVocabFile {
    tau: f64,
    allowed_blocks: AllowedBlocks,
    #[serde(default = "default_true")]
    keep_byte_fragments: bool,
    #[serde(default)]
    input_filter: InputFilter,
    vocab_size: usize,
    #[serde(rename = "M")]
    m: usize,
    members: Vec<u32>,
    stage_sizes: [usize; 4],
    pruned_df_sum: u64,
    provenance: BTreeMap<u32, Provenance>,
}

fn default_true() -> bool {
    true
}

/// Runs the three filters over the profiled output tokens.
pub fn build_static(
    p: &ProfiledCorpus,
    cfg: &FilterConfig,
    tokenizer: Option<&Tokenizer>,
) -> Result<StaticTaskVocab> {
    cfg.validate()?;
    if p.num_docs() == 0 {
        return Err(Error::Empty("empty corpus"));
    }
    let size = p.vocab_size();
    let always_keep = TokenSet::from_ids(size, cfg.always_keep.iter().copied())?;

    let candidates = p.output_union();
    let stage1 = match cfg.input_filter {
        InputFilter::CorpusUnion => input_aware_filter(candidates, p.input_union())?,
        InputFilter::PerExample => candidates.intersection(p.novel_output_union())?,
    };
    let stage2 = language_filter(&stage1, cfg, tokenizer)?;
    let outcome = tolerance_filter(
        &stage2,
        p.df_table(),
        p.num_docs(),
        cfg.tau,
        &cfg.always_keep,
    )?;
    let members = outcome.kept.union(&always_keep)?;

    let mut provenance = BTreeMap::new();
    for id in candidates.iter() {
        let stage = if !stage1.contains(id) {
            Provenance::RemovedInputAware
        } else if !stage2.contains(id) {
            Provenance::RemovedLanguage
        } else if outcome.pruned.contains(id) {
            Provenance::PrunedTolerance
        } else {
            Provenance::Retained
        };
        provenance.insert(id, stage);
    }
    for id in always_keep.iter() {
        provenance.insert(id, Provenance::AlwaysKeep);
    }

    let vocab = StaticTaskVocab {
        vocab_size: size,
        num_docs: p.num_docs(),
        tau: cfg.tau,
        allowed_blocks: cfg.allowed_blocks.clone(),
        keep_byte_fragments: cfg.keep_byte_fragments,
        input_filter: cfg.input_filter,
        stage_sizes: [candidates.len(), stage1.len(), stage2.len(), members.len()],
        members,
        pruned_df_sum: outcome.pruned_df_sum,
        provenance,
    };
    debug_assert!(vocab.check_invariants().is_ok());
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::profile;
    use crate::token::{ids, Document};

    // a=0 b=1 c=2 d=3 e=4
    fn fixture_profile() -> ProfiledCorpus {
        let docs = vec![
            Document::new(0, ids(&[0, 1]), ids(&[1, 2])),
            Document::new(1, ids(&[0, 2]), ids(&[2, 3])),
            Document::new(2, ids(&[1]), ids(&[2, 4])),
        ];
        profile(docs.into_iter().map(Ok), 8).unwrap()
    }

    fn set(raw: &[u32]) -> TokenSet {
        TokenSet::from_ids(8, raw.iter().copied()).unwrap()
    }

    #[test]
    fn budget_is_exact() {
        assert_eq!(tolerance_budget(0.0, 100), 0);
        assert_eq!(tolerance_budget(1.0, 100), 100);
        assert_eq!(tolerance_budget(0.01, 3), 0);
        assert_eq!(tolerance_budget(0.4, 3), 1);
        assert_eq!(tolerance_budget(0.5, 7), 3);
        // 0.29 is slightly below 29/100 in binary
        assert_eq!(tolerance_budget(0.29, 100), 28);
        assert_eq!(tolerance_budget(0.07, 100), 7);
        assert_eq!(tolerance_budget(f64::from_bits(1), usize::MAX), 0);
    }

    #[test]
    fn input_aware_examples() {
        let p = fixture_profile();
        assert_eq!(
            input_aware_filter(p.output_union(), p.input_union()).unwrap(),
            set(&[3, 4])
        );
        assert_eq!(
            input_aware_filter(&set(&[1, 2]), &set(&[])).unwrap(),
            set(&[1, 2])
        );
        assert!(input_aware_filter(&set(&[1]), &set(&[0, 1]))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn tolerance_examples() {
        let p = fixture_profile();
        let c = set(&[3, 4]);
        let out = tolerance_filter(&c, p.df_table(), 3, 0.01, &[]).unwrap();
        assert_eq!((out.kept, out.pruned_df_sum), (set(&[3, 4]), 0));
        let out = tolerance_filter(&c, p.df_table(), 3, 0.4, &[]).unwrap();
        assert_eq!(
            (out.kept, out.pruned.clone(), out.pruned_df_sum),
            (set(&[4]), set(&[3]), 1)
        );
        let out = tolerance_filter(&c, p.df_table(), 3, 0.0, &[]).unwrap();
        assert_eq!(out.kept, c);
    }

    #[test]
    fn tolerance_respects_always_keep_and_zero_m() {
        let p = fixture_profile();
        let out = tolerance_filter(&set(&[3, 4]), p.df_table(), 3, 1.0, &[TokenId(3)]).unwrap();
        assert_eq!(out.kept, set(&[3]));
        assert!(tolerance_filter(&set(&[3]), p.df_table(), 0, 0.5, &[]).is_err());
    }

    #[test]
    fn zero_df_tokens_prune_even_at_tau_zero() {
        let out = tolerance_filter(&set(&[5, 6]), &[0; 8], 4, 0.0, &[]).unwrap();
        assert!(out.kept.is_empty());
        assert_eq!(out.pruned_df_sum, 0);
    }

    #[test]
    fn build_fixture() {
        let p = fixture_profile();
        let v = build_static(&p, &FilterConfig::with_tau(0.01).unwrap(), None).unwrap();
        assert_eq!(v.members, set(&[3, 4]));
        assert_eq!(v.stage_sizes, [4, 2, 2, 2]);
        assert_eq!(v.provenance[&TokenId(1)], Provenance::RemovedInputAware);

        let v = build_static(&p, &FilterConfig::with_tau(0.4).unwrap(), None).unwrap();
        assert_eq!(v.members, set(&[4]));
        assert_eq!(v.pruned(), set(&[3]));

        let mut cfg = FilterConfig::with_tau(1.0).unwrap();
        cfg.always_keep = ids(&[7]);
        let v = build_static(&p, &cfg, None).unwrap();
        assert_eq!(v.members, set(&[7]));
        assert_eq!(v.pruned_df_sum, 2);
        assert_eq!(v.stage_sizes, [4, 2, 2, 1]);
    }

    #[test]
    fn build_per_example_mode() {
        let p = fixture_profile();
        let mut cfg = FilterConfig::with_tau(0.01).unwrap();
        cfg.input_filter = InputFilter::PerExample;
        let v = build_static(&p, &cfg, None).unwrap();
        assert_eq!(v.members, set(&[2, 3, 4]));
        cfg.tau = 0.4;
        let v = build_static(&p, &cfg, None).unwrap();
        assert_eq!(v.members, set(&[2, 4]));
    }

    #[test]
    fn extraction_corpus_keeps_only_always_keep() {
        let docs = vec![
            Document::new(0, ids(&[0, 1, 2]), ids(&[1, 2])),
            Document::new(1, ids(&[3, 4]), ids(&[4])),
        ];
        let p = profile(docs.into_iter().map(Ok), 8).unwrap();
        let mut cfg = FilterConfig::with_tau(0.01).unwrap();
        cfg.always_keep = ids(&[7]);
        let v = build_static(&p, &cfg, None).unwrap();
        assert_eq!(v.members, set(&[7]));
    }

    #[test]
    fn block_filter_without_tokenizer_is_config_error() {
        let mut cfg = FilterConfig::with_tau(0.01).unwrap();
        cfg.allowed_blocks = AllowedBlocks::parse(&["Basic Latin"]).unwrap();
        assert!(matches!(
            build_static(&fixture_profile(), &cfg, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn language_examples() {
        let t = Tokenizer::from_json(
            r#"{"vocab": {"d": 0, "e": 1, "中": 2, " ": 3, "<eos>": 4}, "special_tokens": ["<eos>"]}"#,
            "t",
        )
        .unwrap();
        let all = TokenSet::from_ids(5, [0u32, 1, 2, 3, 4]).unwrap();
        let mut cfg = FilterConfig::for_tokenizer(0.01, &t).unwrap();
        assert_eq!(language_filter(&all, &cfg, Some(&t)).unwrap(), all);
        cfg.allowed_blocks = AllowedBlocks::parse(&["Basic Latin"]).unwrap();
        let kept = language_filter(&all, &cfg, Some(&t)).unwrap();
        assert_eq!(kept, TokenSet::from_ids(5, [0u32, 1, 3, 4]).unwrap());
        let de = TokenSet::from_ids(5, [0u32, 1]).unwrap();
        assert_eq!(language_filter(&de, &cfg, Some(&t)).unwrap(), de);
    }

    #[test]
    fn byte_fragments_follow_config() {
        // byte-level vocabulary: "¸" spells the lone continuation byte 0xB8
        let t = Tokenizer::from_json(r#"{"vocab": {"a": 0, "¸": 1}, "byte_level": true}"#, "t")
            .unwrap();
        let c = TokenSet::from_ids(2, [0u32, 1]).unwrap();
        let mut cfg = FilterConfig::with_tau(0.0).unwrap();
        cfg.allowed_blocks = AllowedBlocks::parse(&["Basic Latin"]).unwrap();
        assert_eq!(language_filter(&c, &cfg, Some(&t)).unwrap(), c);
        cfg.keep_byte_fragments = false;
        assert_eq!(
            language_filter(&c, &cfg, Some(&t)).unwrap(),
            TokenSet::from_ids(2, [0u32]).unwrap()
        );
    }

    #[test]
    fn bad_tau_rejected() {
        assert!(FilterConfig::with_tau(1.5).is_err());
        assert!(FilterConfig::with_tau(f64::NAN).is_err());
    }

    #[test]
    fn json_round_trip_and_tamper() {
        let v = build_static(
            &fixture_profile(),
            &FilterConfig::with_tau(0.4).unwrap(),
            None,
        )
        .unwrap();
        let text = v.to_json();
        assert_eq!(StaticTaskVocab::from_json(&text).unwrap(), v);
        let bad = text.replace("\"pruned_df_sum\": 1", "\"pruned_df_sum\": 2");
        assert!(matches!(
            StaticTaskVocab::from_json(&bad),
            Err(Error::Integrity(_))
        ));
    }
}
