//! Corpus profiling: document frequencies, input/output unions and
//! input-output lexical overlap.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{read_json, write_json};
use crate::error::{Error, Result};
use crate::token::{Document, TokenId, TokenSet};

/// Per-document counts gathered while profiling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocStats {
    pub doc_index: usize,
    /// Distinct input tokens.
    pub input_size: usize,
    /// Output occurrences.
    pub output_len: usize,
    /// Output occurrences whose token appears in the input.
    pub copied: usize,
    /// Distinct output tokens.
    pub output_types: usize,
    /// Distinct output tokens that appear in the input.
    pub copied_types: usize,
}

impl DocStats {
    /// Occurrence-level overlap; `None` for an empty output.
    pub fn overlap(&self) -> Option<f64> {
        (self.output_len > 0).then(|| self.copied as f64 / self.output_len as f64)
    }

    /// Type-level overlap; `None` for an empty output.
    pub fn type_overlap(&self) -> Option<f64> {
        (self.output_types > 0).then(|| self.copied_types as f64 / self.output_types as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfiledCorpus {
    vocab_size: usize,
    num_docs: usize,
    df: Vec<u32>,
    input_union: TokenSet,
    output_union: TokenSet,
    novel_output_union: TokenSet,
    docs: Vec<DocStats>,
}

impl ProfiledCorpus {
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Number of documents, `M`.
    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    /// Number of documents whose output contains `id`.
    pub fn df(&self, id: TokenId) -> u32 {
        self.df.get(id.index()).copied().unwrap_or(0)
    }

    /// Dense document-frequency table indexed by token id.
    pub fn df_table(&self) -> &[u32] {
        &self.df
    }

    pub fn input_union(&self) -> &TokenSet {
        &self.input_union
    }

    pub fn output_union(&self) -> &TokenSet {
        &self.output_union
    }

    /// Union over documents of the output tokens missing from that document's own input.
    pub fn novel_output_union(&self) -> &TokenSet {
        &self.novel_output_union
    }

    /// Per-document statistics, ordered by `doc_index`.
    pub fn docs(&self) -> &[DocStats] {
        &self.docs
    }

    pub fn per_doc_input_sizes(&self) -> Vec<usize> {
        self.docs.iter().map(|d| d.input_size).collect()
    }

    pub fn per_doc_overlap(&self) -> Vec<Option<f64>> {
        self.docs.iter().map(DocStats::overlap).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, &self.to_file())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(read_json(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("profile serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text).map_err(|e| Error::json("profile", e))?)
    }

    fn to_file(&self) -> ProfileFile {
        let raw = |s: &TokenSet| s.iter().map(|t| t.0).collect();
        ProfileFile {
            m: self.num_docs,
            vocab_size: self.vocab_size,
            df: self
                .df
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(i, &c)| (i as u32, c))
                .collect(),
            input_union: raw(&self.input_union),
            output_union: raw(&self.output_union),
            novel_output_union: raw(&self.novel_output_union),
            docs: self.docs.clone(),
            stats: locality_report(self).ok(),
        }
    }

    fn from_file(file: ProfileFile) -> Result<Self> {
        let size = file.vocab_size;
        let set = |ids: Vec<u32>| TokenSet::from_ids(size, ids);
        let mut df = vec![0u32; size];
        for (id, count) in file.df {
            let slot = df.get_mut(id as usize).ok_or(Error::InvalidToken {
                id,
                size,
                doc_index: None,
            })?;
            *slot = count;
        }
        let corpus = ProfiledCorpus {
            vocab_size: size,
            num_docs: file.m,
            df,
            input_union: set(file.input_union)?,
            output_union: set(file.output_union)?,
            novel_output_union: set(file.novel_output_union)?,
            docs: file.docs,
        };
        corpus.check_invariants()?;
        Ok(corpus)
    }

    /// Verifies the df/union relations; used when loading persisted profiles.
    pub fn check_invariants(&self) -> Result<()> {
        for (i, &count) in self.df.iter().enumerate() {
            let id = TokenId(i as u32);
            let in_output = self.output_union.contains(id);
            if (count > 0) != in_output || count as usize > self.num_docs {
                return Err(Error::Integrity(format!(
                    "token {i}: df {count} inconsistent with M={} and output union membership {in_output}",
                    self.num_docs
                )));
            }
        }
        if !self.novel_output_union.is_subset(&self.output_union)? {
            return Err(Error::Integrity(
                "novel output union is not contained in the output union".into(),
            ));
        }
        if self.docs.len() != self.num_docs {
            return Err(Error::Integrity(format!(
                "{} per-document records for M={}",
                self.docs.len(),
                self.num_docs
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ProfileFile {
    #[serde(rename = "M")]
    m: usize,
    vocab_size: usize,
    df: BTreeMap<u32, u32>,
    input_union: Vec<u32>,
    output_union: Vec<u32>,
    novel_output_union: Vec<u32>,
    docs: Vec<DocStats>,
    #[serde(default, skip_deserializing)]
    stats: Option<OverlapStats>,
}

/// Streaming accumulator behind [`profile`]. Partial builders over disjoint
/// shards of a corpus can be merged in any order.
#[derive(Debug, Clone)]
pub struct ProfileBuilder {
    corpus: ProfiledCorpus,
    // scratch: last document that touched each token
    in_stamp: Vec<u32>,
    out_stamp: Vec<u32>,
    epoch: u32,
}

impl ProfileBuilder {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            corpus: ProfiledCorpus {
                vocab_size,
                num_docs: 0,
                df: vec![0; vocab_size],
                input_union: TokenSet::new(vocab_size),
                output_union: TokenSet::new(vocab_size),
                novel_output_union: TokenSet::new(vocab_size),
                docs: Vec::new(),
            },
            in_stamp: Vec::new(),
            out_stamp: Vec::new(),
            epoch: 0,
        }
    }

    fn next_epoch(&mut self) {
        if self.in_stamp.is_empty() {
            self.in_stamp = vec![0; self.corpus.vocab_size];
            self.out_stamp = vec![0; self.corpus.vocab_size];
        }
        if self.epoch == u32::MAX {
            self.in_stamp.fill(0);
            self.out_stamp.fill(0);
            self.epoch = 0;
        }
        self.epoch += 1;
    }

    pub fn push(&mut self, doc: &Document) -> Result<()> {
        doc.validate(self.corpus.vocab_size)?;
        self.next_epoch();
        let epoch = self.epoch;
        let c = &mut self.corpus;

        let mut stats = DocStats {
            doc_index: doc.doc_index,
            input_size: 0,
            output_len: doc.output_ids.len(),
            copied: 0,
            output_types: 0,
            copied_types: 0,
        };
        for &id in &doc.input_ids {
            let i = id.index();
            if self.in_stamp[i] != epoch {
                self.in_stamp[i] = epoch;
                stats.input_size += 1;
                c.input_union.insert(id)?;
            }
        }
        for &id in &doc.output_ids {
            let i = id.index();
            let copied = self.in_stamp[i] == epoch;
            stats.copied += copied as usize;
            if self.out_stamp[i] != epoch {
                self.out_stamp[i] = epoch;
                c.df[i] += 1;
                c.output_union.insert(id)?;
                stats.output_types += 1;
                if copied {
                    stats.copied_types += 1;
                } else {
                    c.novel_output_union.insert(id)?;
                }
            }
        }
        c.docs.push(stats);
        c.num_docs += 1;
        Ok(())
    }

    pub fn merge(mut self, other: ProfileBuilder) -> Result<ProfileBuilder> {
        let (a, b) = (&mut self.corpus, other.corpus);
        if a.vocab_size != b.vocab_size {
            return Err(Error::VocabMismatch {
                left: a.vocab_size,
                right: b.vocab_size,
            });
        }
        a.num_docs += b.num_docs;
        for (x, y) in a.df.iter_mut().zip(&b.df) {
            *x += y;
        }
        a.input_union.union_with(&b.input_union)?;
        a.output_union.union_with(&b.output_union)?;
        a.novel_output_union.union_with(&b.novel_output_union)?;
        a.docs.extend(b.docs);
        Ok(self)
    }

    pub fn finish(self) -> ProfiledCorpus {
        let mut corpus = self.corpus;
        corpus.docs.sort_by_key(|d| d.doc_index);
        corpus
    }
}

/// Profiles a stream of documents in a single pass.
pub fn profile<I>(docs: I, vocab_size: usize) -> Result<ProfiledCorpus>
where
    I: IntoIterator<Item = Result<Document>>,
{
    let mut builder = ProfileBuilder::new(vocab_size);
    for doc in docs {
        builder.push(&doc?)?;
    }
    Ok(builder.finish())
}

/// Profiles in-memory documents across `shards` parallel workers. The result
/// is identical to [`profile`] over the same documents.
pub fn profile_sharded(
    docs: &[Document],
    vocab_size: usize,
    shards: usize,
) -> Result<ProfiledCorpus> {
    let chunk = docs.len().div_ceil(shards.max(1)).max(1);
    let builder = docs
        .par_chunks(chunk)
        .map(|part| {
            let mut b = ProfileBuilder::new(vocab_size);
            for doc in part {
                b.push(doc)?;
            }
            Ok(b)
        })
        .try_reduce(|| ProfileBuilder::new(vocab_size), |a, b| a.merge(b))?;
    Ok(builder.finish())
}

/// Fraction of output occurrences whose token occurs in the document's input.
pub fn overlap_ratio(doc: &Document) -> Result<f64> {
    if doc.output_ids.is_empty() {
        return Err(Error::Empty(
            "overlap ratio is undefined for an empty output",
        ));
    }
    let input: HashSet<TokenId> = doc.input_ids.iter().copied().collect();
    let copied = doc
        .output_ids
        .iter()
        .filter(|id| input.contains(id))
        .count();
    Ok(copied as f64 / doc.output_ids.len() as f64)
}

/// Corpus-level locality statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapStats {
    pub num_docs: usize,
    /// Documents with a non-empty output (the ones that carry an overlap ratio).
    pub docs_with_output: usize,
    /// Mean occurrence-level overlap.
    pub mean_overlap: f64,
    /// Mean type-level overlap.
    pub mean_type_overlap: f64,
    /// Mean number of distinct input tokens per document.
    pub mean_input_size: f64,
    pub union_input_size: usize,
    pub union_output_size: usize,
    /// `union_input_size / mean_input_size`; 1 when every input is empty.
    pub locality_ratio: f64,
}

pub fn locality_report(p: &ProfiledCorpus) -> Result<OverlapStats> {
    if p.num_docs == 0 {
        return Err(Error::Empty("empty corpus"));
    }
    let overlaps: Vec<f64> = p.docs.iter().filter_map(DocStats::overlap).collect();
    let type_overlaps: Vec<f64> = p.docs.iter().filter_map(DocStats::type_overlap).collect();
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let input_total: usize = p.docs.iter().map(|d| d.input_size).sum();
    let mean_input_size = input_total as f64 / p.num_docs as f64;
    let union_input_size = p.input_union.len();
    let locality_ratio = if input_total == 0 {
        1.0
    } else {
        union_input_size as f64 / mean_input_size
    };
    Ok(OverlapStats {
        num_docs: p.num_docs,
        docs_with_output: overlaps.len(),
        mean_overlap: mean(&overlaps),
        mean_type_overlap: mean(&type_overlaps),
        mean_input_size,
        union_input_size,
        union_output_size: p.output_union.len(),
        locality_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token::ids;
    use proptest::prelude::*;

    // a=0 b=1 c=2 d=3 e=4
    fn fixture() -> Vec<Document> {
        vec![
            Document::new(0, ids(&[0, 1]), ids(&[1, 2])),
            Document::new(1, ids(&[0, 2]), ids(&[2, 3])),
            Document::new(2, ids(&[1]), ids(&[2, 4])),
        ]
    }

    fn run(docs: &[Document], size: usize) -> ProfiledCorpus {
        profile(docs.iter().cloned().map(Ok), size).unwrap()
    }

    #[test]
    fn fixture_profile() {
        let p = run(&fixture(), 8);
        assert_eq!(p.num_docs(), 3);
        let df: Vec<(u32, u32)> = (0..8)
            .filter(|&i| p.df(TokenId(i)) > 0)
            .map(|i| (i, p.df(TokenId(i))))
            .collect();
        assert_eq!(df, vec![(1, 1), (2, 3), (3, 1), (4, 1)]);
        assert_eq!(p.input_union().to_vec(), ids(&[0, 1, 2]));
        assert_eq!(p.output_union().to_vec(), ids(&[1, 2, 3, 4]));
        assert_eq!(p.novel_output_union().to_vec(), ids(&[2, 3, 4]));
        assert_eq!(p.per_doc_input_sizes(), vec![2, 2, 1]);
        assert_eq!(p.per_doc_overlap(), vec![Some(0.5), Some(0.5), Some(0.0)]);
    }

    #[test]
    fn empty_stream() {
        let p = run(&[], 8);
        assert_eq!(p.num_docs(), 0);
        assert!(p.output_union().is_empty() && p.input_union().is_empty());
        assert!(p.df_table().iter().all(|&c| c == 0));
        assert!(matches!(locality_report(&p), Err(Error::Empty(_))));
    }

    #[test]
    fn df_counts_documents_not_occurrences() {
        let p = run(&[Document::new(0, vec![], ids(&[2, 2, 2]))], 8);
        assert_eq!(p.df(TokenId(2)), 1);
        assert_eq!(p.docs()[0].output_len, 3);
    }

    #[test]
    fn out_of_range_names_document() {
        let docs = vec![
            Document::new(0, ids(&[1]), ids(&[1])),
            Document::new(7, ids(&[9]), vec![]),
        ];
        let err = profile(docs.into_iter().map(Ok), 8).unwrap_err();
        assert!(matches!(
            err,
            Error::InvalidToken {
                id: 9,
                doc_index: Some(7),
                ..
            }
        ));
        assert!(err.to_string().contains("document 7"));
    }

    #[test]
    fn overlap_examples() {
        let d = fixture();
        assert_eq!(overlap_ratio(&d[0]).unwrap(), 0.5);
        assert_eq!(
            overlap_ratio(&Document::new(0, ids(&[1, 2, 3]), ids(&[3, 1, 1]))).unwrap(),
            1.0
        );
        assert_eq!(
            overlap_ratio(&Document::new(0, ids(&[1]), ids(&[2, 3]))).unwrap(),
            0.0
        );
        assert!(overlap_ratio(&Document::new(0, ids(&[1]), vec![])).is_err());
    }

    #[test]
    fn locality_examples() {
        let s = locality_report(&run(&fixture(), 8)).unwrap();
        assert!((s.mean_input_size - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.union_input_size, 3);
        assert!((s.locality_ratio - 1.8).abs() < 1e-12);

        let one = locality_report(&run(&fixture()[..1], 8)).unwrap();
        assert_eq!(one.locality_ratio, 1.0);

        let same: Vec<_> = (0..4)
            .map(|i| Document::new(i, ids(&[0, 1, 5]), ids(&[1])))
            .collect();
        assert_eq!(locality_report(&run(&same, 8)).unwrap().locality_ratio, 1.0);
    }

    #[test]
    fn json_round_trip() {
        let p = run(&fixture(), 8);
        let text = p.to_json();
        assert!(text.contains("\"M\": 3"));
        assert_eq!(ProfiledCorpus::from_json(&text).unwrap(), p);
    }

    #[test]
    fn tampered_profile_is_rejected() {
        let p = run(&fixture(), 8);
        let text = p.to_json().replace("\"2\": 3", "\"2\": 4");
        assert!(matches!(
            ProfiledCorpus::from_json(&text),
            Err(Error::Integrity(_))
        ));
    }

    fn arb_corpus() -> impl Strategy<Value = Vec<Document>> {
        let doc = (
            prop::collection::vec(0u32..40, 0..12),
            prop::collection::vec(0u32..40, 0..12),
        );
        prop::collection::vec(doc, 0..200).prop_map(|docs| {
            docs.into_iter()
                .enumerate()
                .map(|(i, (a, b))| Document::new(i, ids(&a), ids(&b)))
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn df_matches_brute_force(docs in arb_corpus()) {
            let p = run(&docs, 40);
            for v in 0..40u32 {
                let brute = docs.iter().filter(|d| d.output_ids.contains(&TokenId(v))).count();
                prop_assert_eq!(p.df(TokenId(v)) as usize, brute);
            }
            let mut union = TokenSet::new(40);
            for d in &docs {
                union.union_with(&TokenSet::from_ids(40, d.input_ids.iter().copied()).unwrap()).unwrap();
            }
            prop_assert_eq!(p.input_union(), &union);
            for (d, s) in docs.iter().zip(p.docs()) {
                prop_assert!(s.input_size <= d.input_ids.len());
                if let Some(o) = s.overlap() {
                    prop_assert_eq!(o, overlap_ratio(d).unwrap());
                }
            }
            if let Ok(s) = locality_report(&p) {
                prop_assert!(s.locality_ratio >= 1.0);
            }
        }

        #[test]
        fn sharding_and_permutation_do_not_change_result(
            (docs, shuffled) in arb_corpus().prop_flat_map(|d| (Just(d.clone()), Just(d).prop_shuffle())),
            shards in 1usize..6,
        ) {
            let serial = run(&docs, 40);
            prop_assert_eq!(&profile_sharded(&docs, 40, shards).unwrap(), &serial);
            prop_assert_eq!(&run(&shuffled, 40), &serial);
        }
    }
}
