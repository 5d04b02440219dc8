//! Per-instance selection: the active set is the instance's distinct input
//! tokens plus the static task vocabulary, laid out as contiguous rows of a
//! reduced output head.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::{read_json, write_json};
use crate::error::{Error, Result};
use crate::static_vocab::{tolerance_budget, StaticTaskVocab};
use crate::token::{Document, TokenId, TokenSet};

/// Sorted active ids of one instance. Local row `k` of the reduced head holds
/// global token `active_ids[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub active_ids: Vec<TokenId>,
    pub n_static: usize,
    /// Input tokens not already in the static vocabulary.
    pub n_dynamic: usize,
    pub full_vocab_size: usize,
}

impl SelectionPlan {
    /// Plan covering the whole vocabulary.
    pub fn identity(full_vocab_size: usize) -> Self {
        Self {
            active_ids: (0..full_vocab_size as u32).map(TokenId).collect(),
            n_static: 0,
            n_dynamic: full_vocab_size,
            full_vocab_size,
        }
    }

    pub fn len(&self) -> usize {
        self.active_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active_ids.is_empty()
    }

    /// Local row holding `global`, if selected.
    pub fn local_index(&self, global: TokenId) -> Option<usize> {
        self.active_ids.binary_search(&global).ok()
    }

    pub fn local_to_global(&self) -> &[TokenId] {
        &self.active_ids
    }

    pub fn remap_out(&self, local: usize) -> Result<TokenId> {
        self.active_ids
            .get(local)
            .copied()
            .ok_or(Error::LocalOutOfRange {
                index: local,
                len: self.active_ids.len(),
            })
    }

    pub fn contains(&self, global: TokenId) -> bool {
        self.local_index(global).is_some()
    }

    /// Fraction of the full vocabulary that is active.
    pub fn active_fraction(&self) -> f64 {
        if self.full_vocab_size == 0 {
            return 0.0;
        }
        self.len() as f64 / self.full_vocab_size as f64
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.active_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Integrity(
                "active ids are not strictly increasing".into(),
            ));
        }
        if let Some(&last) = self.active_ids.last() {
            if last.index() >= self.full_vocab_size {
                return Err(Error::InvalidToken {
                    id: last.0,
                    size: self.full_vocab_size,
                    doc_index: None,
                });
            }
        }
        if self.n_static + self.n_dynamic != self.active_ids.len() {
            return Err(Error::Integrity(format!(
                "plan has {} rows but n_static + n_dynamic = {}",
                self.active_ids.len(),
                self.n_static + self.n_dynamic
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let plan: SelectionPlan = read_json(path)?;
        plan.check_invariants()?;
        Ok(plan)
    }
}

/// Builds the plan for one instance.
pub fn select(
    input_ids: &[TokenId],
    static_vocab: &StaticTaskVocab,
    full_size: usize,
) -> Result<SelectionPlan> {
    if static_vocab.vocab_size != full_size {
        return Err(Error::VocabMismatch {
            left: static_vocab.vocab_size,
            right: full_size,
        });
    }
    let input = TokenSet::from_ids(full_size, input_ids.iter().copied())?;
    let n_dynamic = input.difference(&static_vocab.members)?.len();
    let active = input.union(&static_vocab.members)?;
    Ok(SelectionPlan {
        active_ids: active.to_vec(),
        n_static: static_vocab.members.len(),
        n_dynamic,
        full_vocab_size: full_size,
    })
}

/// Union of the plans of one micro-batch; all plans must share the static set.
pub fn union_plans(plans: &[SelectionPlan]) -> Result<SelectionPlan> {
    let first = plans.first().ok_or(Error::Empty("no plans to merge"))?;
    let mut set = TokenSet::new(first.full_vocab_size);
    for p in plans {
        if p.full_vocab_size != first.full_vocab_size {
            return Err(Error::VocabMismatch {
                left: first.full_vocab_size,
                right: p.full_vocab_size,
            });
        }
        if p.n_static != first.n_static {
            return Err(Error::Integrity(
                "plans in a micro-batch were built from different static vocabularies".into(),
            ));
        }
        for &id in &p.active_ids {
            set.insert(id)?;
        }
    }
    Ok(SelectionPlan {
        n_static: first.n_static,
        n_dynamic: set.len() - first.n_static,
        active_ids: set.to_vec(),
        full_vocab_size: first.full_vocab_size,
    })
}

/// Aggregate over many plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub num_plans: usize,
    pub n_static: usize,
    pub mean_dynamic: f64,
    /// Mean dynamic count rounded half-up.
    pub rounded_dynamic: u64,
    pub mean_active: f64,
    pub full_vocab_size: usize,
    /// Mean active set size as a percentage of the full vocabulary.
    pub percent_of_full: f64,
    pub min_active: usize,
    pub max_active: usize,
    pub p50_active: usize,
    pub p90_active: usize,
    pub p99_active: usize,
}

impl BatchStats {
    /// `"<static> + [<dynamic>] (<percent>%)"`, or `"[<dynamic>] (<percent>%)"`
    /// when there is no static part.
    pub fn table_line(&self) -> String {
        format_table_line(self.n_static, self.rounded_dynamic, self.percent_of_full)
    }
}

/// Formats an integer with comma thousands separators.
pub fn group_thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub fn format_table_line(n_static: usize, dynamic: u64, percent: f64) -> String {
    let tail = format!("[{}] ({percent:.2}%)", group_thousands(dynamic));
    if n_static == 0 {
        tail
    } else {
        format!("{} + {tail}", group_thousands(n_static as u64))
    }
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[usize], pct: u32) -> usize {
    let rank = (pct as usize * sorted.len()).div_ceil(100).max(1);
    sorted[rank - 1]
}

pub fn batch_stats<'a, I>(plans: I) -> Result<BatchStats>
where
    I: IntoIterator<Item = &'a SelectionPlan>,
{
    let mut sizes = Vec::new();
    let mut dynamic_total = 0u64;
    let mut shape: Option<(usize, usize)> = None;
    for p in plans {
        match shape {
            None => shape = Some((p.n_static, p.full_vocab_size)),
            Some(s) if s != (p.n_static, p.full_vocab_size) => {
                return Err(Error::Integrity(
                    "plans disagree on static vocabulary or full vocabulary size".into(),
                ))
            }
            _ => {}
        }
        sizes.push(p.len());
        dynamic_total += p.n_dynamic as u64;
    }
    let (n_static, full) = shape.ok_or(Error::Empty("no plans to summarize"))?;
    let n = sizes.len() as u64;
    let active_total: u64 = sizes.iter().map(|&s| s as u64).sum();
    sizes.sort_unstable();
    let mean_active = active_total as f64 / n as f64;
    Ok(BatchStats {
        num_plans: sizes.len(),
        n_static,
        mean_dynamic: dynamic_total as f64 / n as f64,
        rounded_dynamic: (2 * dynamic_total + n) / (2 * n),
        mean_active,
        full_vocab_size: full,
        percent_of_full: if full == 0 {
            0.0
        } else {
            100.0 * mean_active / full as f64
        },
        min_active: sizes[0],
        max_active: *sizes.last().unwrap(),
        p50_active: percentile(&sizes, 50),
        p90_active: percentile(&sizes, 90),
        p99_active: percentile(&sizes, 99),
    })
}

/// Coverage of a corpus by the selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub num_docs: usize,
    pub tau: f64,
    /// Documents whose output contains a token pruned by tolerance filtering.
    pub impacted: usize,
    pub impacted_fraction: f64,
    /// Documents whose output is not contained in their active set, for any reason.
    pub uncovered: usize,
    pub uncovered_fraction: f64,
    pub uncovered_docs: Vec<usize>,
    /// `impacted <= floor(tau * num_docs)`.
    pub within_tolerance: bool,
}

pub fn evaluate_coverage<I>(static_vocab: &StaticTaskVocab, docs: I) -> Result<CoverageReport>
where
    I: IntoIterator<Item = Result<Document>>,
{
    let size = static_vocab.vocab_size;
    let pruned = static_vocab.pruned();
    let mut num_docs = 0;
    let mut impacted = 0;
    let mut uncovered_docs = Vec::new();
    for doc in docs {
        let doc = doc?;
        doc.validate(size)?;
        num_docs += 1;
        let plan =
            select(&doc.input_ids, static_vocab, size).map_err(|e| e.in_document(doc.doc_index))?;
        if doc.output_ids.iter().any(|&id| pruned.contains(id)) {
            impacted += 1;
        }
        if doc.output_ids.iter().any(|&id| !plan.contains(id)) {
            uncovered_docs.push(doc.doc_index);
        }
    }
    if num_docs == 0 {
        return Err(Error::Empty("empty corpus"));
    }
    let frac = |n: usize| n as f64 / num_docs as f64;
    Ok(CoverageReport {
        num_docs,
        tau: static_vocab.tau,
        impacted,
        impacted_fraction: frac(impacted),
        uncovered: uncovered_docs.len(),
        uncovered_fraction: frac(uncovered_docs.len()),
        uncovered_docs,
        within_tolerance: impacted as u64 <= tolerance_budget(static_vocab.tau, num_docs),
    })
}
