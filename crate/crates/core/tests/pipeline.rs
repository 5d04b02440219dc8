mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use vocabslice::corpus::CorpusReader;
use vocabslice::head::{argmax, gather, greedy_step, logits, Dtype, HeadMatrix};
use vocabslice::profile::{profile, profile_sharded, ProfiledCorpus};
use vocabslice::script::AllowedBlocks;
use vocabslice::select::{evaluate_coverage, select, SelectionPlan};
use vocabslice::static_vocab::{
    build_static, tolerance_budget, FilterConfig, InputFilter, Provenance,
};
use vocabslice::{Document, ErrorKind, TokenId, Tokenizer};

fn prof(docs: &[Document], vocab: u32) -> ProfiledCorpus {
    profile(docs.iter().cloned().map(Ok), vocab as usize).unwrap()
}

#[test]
fn fixture_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let tok = Tokenizer::load(fixture("toy_tokenizer.json")).unwrap();
    let p = profile(
        CorpusReader::open(fixture("fixture_corpus.jsonl"), Some(&tok)).unwrap(),
        tok.size(),
    )
    .unwrap();

    let path = dir.path().join("profile.json");
    p.save(&path).unwrap();
    let back = ProfiledCorpus::load(&path).unwrap();
    assert_eq!(back.to_json(), p.to_json());
    back.check_invariants().unwrap();

    let t = build_static(
        &p,
        &FilterConfig::for_tokenizer(0.01, &tok).unwrap(),
        Some(&tok),
    )
    .unwrap();
    let path = dir.path().join("static_vocab.json");
    t.save(&path).unwrap();
    let t2 = vocabslice::static_vocab::StaticTaskVocab::load(&path).unwrap();
    assert_eq!(t, t2);

    let plan = select(&tok.encode("aca").unwrap(), &t2, tok.size()).unwrap();
    let path = dir.path().join("plan.json");
    plan.save(&path).unwrap();
    assert_eq!(SelectionPlan::load(&path).unwrap(), plan);
}

#[test]
fn language_filter_on_byte_level_vocabulary() {
    let tok = Tokenizer::load(fixture("byte_level_tokenizer.json")).unwrap();
    let id = |s: &str| tok.token_id(s).unwrap_or_else(|| panic!("no token {s:?}"));
    let cjk = id("ä¸Ńæĸĩ");
    let fragment = id("ä¸");
    let latin1 = id("Ã§Ã£o");
    let the = id("Ġthe");
    let eot = id("<|endoftext|>");
    assert_eq!(tok.decode(&[cjk]).unwrap(), "中文");

    let docs = vec![
        Document::new(0, tok.encode("x").unwrap(), vec![the, cjk, latin1]),
        Document::new(1, tok.encode("y").unwrap(), vec![the, fragment]),
    ];
    let p = prof(&docs, tok.size() as u32);
    let mut cfg = FilterConfig::for_tokenizer(0.0, &tok).unwrap();
    cfg.allowed_blocks = AllowedBlocks::parse(&["Basic Latin", "latin-1 supplement"]).unwrap();
    let t = build_static(&p, &cfg, Some(&tok)).unwrap();
    let members: BTreeSet<TokenId> = t.members.iter().collect();
    assert_eq!(members, BTreeSet::from([the, latin1, fragment, eot]));
    assert_eq!(t.provenance[&cjk], Provenance::RemovedLanguage);
    assert_eq!(t.provenance[&eot], Provenance::AlwaysKeep);

    cfg.keep_byte_fragments = false;
    let t = build_static(&p, &cfg, Some(&tok)).unwrap();
    assert!(!t.members.contains(fragment));
    assert_eq!(t.provenance[&fragment], Provenance::RemovedLanguage);

    // the CJK block alone keeps the ideographs and drops Latin words
    cfg.allowed_blocks = AllowedBlocks::parse(&["CJK Unified Ideographs"]).unwrap();
    let t = build_static(&p, &cfg, Some(&tok)).unwrap();
    assert!(t.members.contains(cjk) && !t.members.contains(the));
}

#[test]
fn unknown_block_is_a_config_error() {
    let err = AllowedBlocks::parse(&["Klingon"]).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Config);
    assert!(err.to_string().contains("Basic Latin"));
}

#[test]
fn malformed_tokenizer_is_an_integrity_error() {
    let err = Tokenizer::from_json(r#"{"vocab": {"a": 0, "b": 1}, "merges": ["a b"]}"#, "bad")
        .unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Integrity);
}

#[test]
fn sharded_profiles_build_identical_artifacts() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let docs = random_corpus(&mut rng, 50, 40);
        let serial = prof(&docs, 40);
        let cfg = FilterConfig::with_tau(0.05).unwrap();
        let want = build_static(&serial, &cfg, None).unwrap().to_json();
        for shards in [1, 2, 3, 8] {
            let sharded = profile_sharded(&docs, 40, shards).unwrap();
            assert_eq!(sharded.to_json(), serial.to_json());
            assert_eq!(build_static(&sharded, &cfg, None).unwrap().to_json(), want);
        }
    }
}

fn corpus_strategy() -> impl Strategy<Value = (Vec<Document>, u32, f64)> {
    (any::<u64>(), 2u32..48, 0.0f64..=1.0).prop_map(|(seed, vocab, tau)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (random_corpus(&mut rng, 30, vocab), vocab, tau)
    })
}

proptest! {
    #[test]
    fn per_example_mode_covers_every_unimpacted_document((docs, vocab, tau) in corpus_strategy()) {
        let p = prof(&docs, vocab);
        let mut cfg = FilterConfig::with_tau(tau).unwrap();
        cfg.input_filter = InputFilter::PerExample;
        let t = build_static(&p, &cfg, None).unwrap();
        let report = evaluate_coverage(&t, docs.iter().cloned().map(Ok)).unwrap();
        let pruned: BTreeSet<u32> = t.pruned().iter().map(|x| x.0).collect();
        for &i in &report.uncovered_docs {
            prop_assert!(docs[i].output_ids.iter().any(|o| pruned.contains(&o.0)));
        }
        prop_assert!(report.uncovered <= report.impacted);
        if tau == 0.0 {
            prop_assert_eq!(report.uncovered, 0);
        }
    }

    #[test]
    fn impacted_documents_within_union_bound((docs, vocab, tau) in corpus_strategy()) {
        let p = prof(&docs, vocab);
        for mode in [InputFilter::CorpusUnion, InputFilter::PerExample] {
            let mut cfg = FilterConfig::with_tau(tau).unwrap();
            cfg.input_filter = mode;
            let t = build_static(&p, &cfg, None).unwrap();
            let pruned: BTreeSet<u32> = t.pruned().iter().map(|x| x.0).collect();
            let impacted = impacted_docs(&docs, &pruned) as u64;
            prop_assert!(impacted <= t.pruned_df_sum);
            prop_assert!(t.pruned_df_sum <= tolerance_budget(tau, docs.len()));
            prop_assert!(int(t.pruned_df_sum) <= exact(tau) * int(docs.len() as u64));
        }
    }

    #[test]
    fn selection_contains_inputs_and_static((docs, vocab, tau) in corpus_strategy()) {
        let p = prof(&docs, vocab);
        let t = build_static(&p, &FilterConfig::with_tau(tau).unwrap(), None).unwrap();
        for d in &docs {
            let plan = select(&d.input_ids, &t, vocab as usize).unwrap();
            plan.check_invariants().unwrap();
            prop_assert!(d.input_ids.iter().all(|&i| plan.contains(i)));
            prop_assert!(t.members.iter().all(|s| plan.contains(s)));
            let inputs: BTreeSet<_> = d.input_ids.iter().copied().collect();
            prop_assert_eq!(plan.len(), inputs.union(&t.members.iter().collect()).count());
        }
    }

    #[test]
    fn greedy_step_preserves_in_plan_argmax(
        seed in any::<u64>(),
        rows in 1usize..80,
        dim in 1usize..24,
        mask in proptest::collection::vec(any::<bool>(), 80),
        hidden in proptest::collection::vec(-3.0f32..3.0, 24),
    ) {
        let head = HeadMatrix::random(rows, dim, Dtype::F16, seed);
        let active: Vec<TokenId> = (0..rows as u32).filter(|&i| mask[i as usize]).map(TokenId).collect();
        prop_assume!(!active.is_empty());
        let plan = SelectionPlan { n_static: 0, n_dynamic: active.len(), active_ids: active, full_vocab_size: rows };
        let hidden = &hidden[..dim];
        let full = logits(&head, hidden).unwrap();
        let best = TokenId(argmax(&full).unwrap() as u32);
        let picked = greedy_step(&gather(&head, &plan).unwrap(), hidden, &plan).unwrap();
        prop_assert!(plan.contains(picked));
        if plan.contains(best) {
            prop_assert_eq!(picked, best);
        }
    }
}
