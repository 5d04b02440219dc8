//! Random corpora and brute-force reference implementations shared by the
//! integration tests. Nothing here calls into the code paths it checks.
#![allow(dead_code)]

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::FromPrimitive;
use rand::Rng;
use vocabslice::{Document, TokenId};

pub const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

pub fn fixture(name: &str) -> String {
    format!("{FIXTURES}/{name}")
}

/// Random corpus with up to `max_docs` documents over `vocab` tokens. Outputs
/// are biased towards copying from the input so all filter stages see work.
pub fn random_corpus(rng: &mut impl Rng, max_docs: usize, vocab: u32) -> Vec<Document> {
    let m = rng.gen_range(1..=max_docs);
    (0..m)
        .map(|i| {
            let input: Vec<TokenId> = (0..rng.gen_range(0..12))
                .map(|_| TokenId(rng.gen_range(0..vocab)))
                .collect();
            let output: Vec<TokenId> = (0..rng.gen_range(0..10))
                .map(|_| {
                    if !input.is_empty() && rng.gen_bool(0.4) {
                        input[rng.gen_range(0..input.len())]
                    } else {
                        // skewed so document frequencies vary
                        let hi = rng.gen_range(1..=vocab);
                        TokenId(rng.gen_range(0..hi))
                    }
                })
                .collect();
            Document::new(i, input, output)
        })
        .collect()
}

/// Picks tau from a mix of round values and arbitrary draws.
pub fn random_tau(rng: &mut impl Rng) -> f64 {
    const ROUND: [f64; 8] = [0.0, 0.01, 0.02, 0.05, 0.1, 0.29, 0.5, 1.0];
    if rng.gen_bool(0.3) {
        ROUND[rng.gen_range(0..ROUND.len())]
    } else {
        rng.gen_range(0.0..=1.0)
    }
}

pub fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

pub fn int(n: u64) -> BigRational {
    BigRational::from_integer(BigInt::from_u64(n).unwrap())
}

/// Brute-force document frequency: documents whose output contains `v`.
pub fn brute_df(docs: &[Document], v: TokenId) -> u64 {
    docs.iter().filter(|d| d.output_ids.contains(&v)).count() as u64
}

/// Reference tolerance filter: orders candidates by (df, id), enumerates every
/// prefix length, and prunes the longest prefix whose df sum is at most
/// `tau * m` in exact rational arithmetic. Returns (kept, pruned, pruned sum).
pub fn oracle_tolerance(
    candidates: &BTreeSet<u32>,
    df: impl Fn(u32) -> u64,
    m: usize,
    tau: f64,
) -> (BTreeSet<u32>, BTreeSet<u32>, u64) {
    let mut order: Vec<(u64, u32)> = candidates.iter().map(|&v| (df(v), v)).collect();
    order.sort();
    let limit = exact(tau) * int(m as u64);
    let mut best = 0;
    for j in 0..=order.len() {
        let sum: u64 = order[..j].iter().map(|&(f, _)| f).sum();
        if int(sum) <= limit {
            best = j;
        }
    }
    let pruned: BTreeSet<u32> = order[..best].iter().map(|&(_, v)| v).collect();
    let kept = candidates.difference(&pruned).copied().collect();
    let sum = order[..best].iter().map(|&(f, _)| f).sum();
    (kept, pruned, sum)
}

/// Documents whose output contains at least one pruned token.
pub fn impacted_docs(docs: &[Document], pruned: &BTreeSet<u32>) -> usize {
    docs.iter()
        .filter(|d| d.output_ids.iter().any(|t| pruned.contains(&t.0)))
        .count()
}
