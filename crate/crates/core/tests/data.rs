mod common;

use std::collections::BTreeMap;

use common::words;
use muse_core::data::{
    align_edit_distance, alignment_cost, augment_with_nbest, class_stats, filter_min_length, gen_synthetic,
    read_corpus, read_nbest, restore_punctuation, write_corpus, write_nbest, AlignOp, AugmentOptions,
    ClassDistribution, CueProfile, NBestList, SynthConfig, Utterance,
};
use muse_core::label::PunctuationLabel::{self, *};
use proptest::prelude::*;

fn utt(text: &str) -> Utterance {
    let (w, l) = muse_core::label::parse_punctuated(text);
    Utterance::text_only("u", w, l).unwrap()
}

/// Minimum cost over every alignment path, enumerated without memoisation.
fn brute_force_cost(a: &[&str], b: &[&str]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let diag = brute_force_cost(ra, rb) + usize::from(x != y);
            let del = brute_force_cost(ra, b) + 1;
            let ins = brute_force_cost(a, rb) + 1;
            diag.min(del).min(ins)
        }
    }
}

/// The ops must consume both sequences in order and label equal pairs as
/// matches.
fn assert_valid_alignment(a: &[&str], b: &[&str], ops: &[AlignOp]) {
    let (mut i, mut j) = (0, 0);
    for op in ops {
        match *op {
            AlignOp::Match { r, h } => {
                assert_eq!((r, h), (i, j));
                assert_eq!(a[r], b[h]);
                i += 1;
                j += 1;
            }
            AlignOp::Sub { r, h } => {
                assert_eq!((r, h), (i, j));
                assert_ne!(a[r], b[h]);
                i += 1;
                j += 1;
            }
            AlignOp::Del { r } => {
                assert_eq!(r, i);
                i += 1;
            }
            AlignOp::Ins { h } => {
                assert_eq!(h, j);
                j += 1;
            }
        }
    }
    assert_eq!((i, j), (a.len(), b.len()));
}

#[test]
fn alignment_cost_matches_brute_force_on_random_pairs() {
    use rand::Rng;
    let mut r = common::rng(31);
    let sym = ["a", "b", "c"];
    for _ in 0..2000 {
        let a: Vec<&str> = (0..r.gen_range(0..=6)).map(|_| sym[r.gen_range(0..3)]).collect();
        let b: Vec<&str> = (0..r.gen_range(0..=6)).map(|_| sym[r.gen_range(0..3)]).collect();
        let ops = align_edit_distance(&a, &b);
        assert_valid_alignment(&a, &b, &ops);
        assert_eq!(alignment_cost(&ops), brute_force_cost(&a, &b), "{a:?} vs {b:?}");
    }
}

#[test]
fn deletion_in_the_middle() {
    let ops = align_edit_distance(&words("a b c"), &words("a c"));
    assert_eq!(ops, vec![AlignOp::Match { r: 0, h: 0 }, AlignOp::Del { r: 1 }, AlignOp::Match { r: 2, h: 1 }]);
}

#[test]
fn restoration_examples() {
    let r = restore_punctuation(&utt("hello world."), &words("hello"));
    assert_eq!(r.utterance.labels, vec![FullStop]);

    let r = restore_punctuation(&utt("ok, so. yes?"), &words("ok yes"));
    assert_eq!(r.utterance.labels, vec![FullStop, Question]);
    assert_eq!(r.dropped, 0);

    let r = restore_punctuation(&utt("stop. go now"), &words("go now"));
    assert_eq!(r.utterance.labels, vec![NoPunct, NoPunct]);
    assert_eq!(r.dropped, 1);

    let r = restore_punctuation(&utt("a b."), &Vec::<String>::new());
    assert!(r.utterance.is_empty());
    assert!(r.warning.is_some());
}

#[test]
fn augmentation_counting() {
    let a = utt("one two. three?");
    let mut b = utt("four, five.");
    b.id = "v".into();
    let corpus = vec![a.clone(), b.clone()];
    let mut nbest = BTreeMap::new();
    for u in &corpus {
        let hyps = vec![u.words.clone(), u.words[1..].to_vec(), vec!["zzz".to_string()]];
        nbest.insert(u.id.clone(), NBestList { id: u.id.clone(), hyps });
    }
    let (out, rep) = augment_with_nbest(&corpus, &nbest, AugmentOptions { n: 3, ..Default::default() }).unwrap();
    assert_eq!(out.len(), 8);
    assert_eq!(rep.added, 6);
    let (out, _) = augment_with_nbest(&corpus, &nbest, AugmentOptions { n: 10, ..Default::default() }).unwrap();
    assert_eq!(out.len(), 8);
    let (out, _) = augment_with_nbest(&corpus, &nbest, AugmentOptions::default()).unwrap();
    assert_eq!(out.len(), 4);
    assert_eq!(out[2].words, a.words);
    assert_eq!(out[2].labels, a.labels);
    assert_eq!(out[2].id, "u#h1");
    nbest.remove("v");
    let (_, rep) = augment_with_nbest(&corpus, &nbest, AugmentOptions::default()).unwrap();
    assert_eq!(rep.missing, 1);
}

#[test]
fn generator_tally_matches_counted_stats() {
    for profile in [CueProfile::Balanced, CueProfile::AcousticOnlyQuestion, CueProfile::LexicalOnly] {
        let c = gen_synthetic(5, &SynthConfig { count: 80, profile, ..Default::default() }).unwrap();
        assert_eq!(class_stats(&c.utterances), c.tally);
        let pct: f64 = c.tally.percentages().iter().sum();
        assert!((pct - 100.0).abs() < 0.01);
    }
    assert_eq!(class_stats(&[]).percentages(), [0.0; 4]);
}

#[test]
fn corpus_files_round_trip_byte_for_byte() {
    let dir = std::env::temp_dir().join(format!("muse-data-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let c = gen_synthetic(8, &SynthConfig { count: 12, ..Default::default() }).unwrap();
    write_corpus(&dir.join("a.jsonl"), &c.utterances).unwrap();
    let back = read_corpus(&dir.join("a.jsonl")).unwrap();
    assert_eq!(back, c.utterances);
    write_corpus(&dir.join("b.jsonl"), &back).unwrap();
    assert_eq!(std::fs::read(dir.join("a.jsonl")).unwrap(), std::fs::read(dir.join("b.jsonl")).unwrap());
    write_nbest(&dir.join("n.jsonl"), &c.nbest).unwrap();
    assert_eq!(read_nbest(&dir.join("n.jsonl")).unwrap(), c.nbest_map());
    std::fs::write(dir.join("bad.jsonl"), "{\"id\":\"x\",\"words\":[\"a\"],\"labels\":[\"NP\"]}\nnot json\n").unwrap();
    assert!(matches!(read_corpus(&dir.join("bad.jsonl")), Err(muse_core::Error::Parse { line: 2, .. })));
    std::fs::remove_dir_all(&dir).unwrap();
}

fn label() -> impl Strategy<Value = PunctuationLabel> {
    (0usize..4).prop_map(|i| PunctuationLabel::from_id(i).unwrap())
}

fn utterance() -> impl Strategy<Value = Utterance> {
    prop::collection::vec(("[a-d]{1,3}", label()), 1..12).prop_map(|pairs| {
        let (w, l) = pairs.into_iter().unzip();
        Utterance::text_only("p", w, l).unwrap()
    })
}

proptest! {
    #[test]
    fn restoring_the_reference_is_identity(u in utterance()) {
        let r = restore_punctuation(&u, &u.words);
        prop_assert_eq!(r.utterance.labels, u.labels);
        prop_assert_eq!(r.dropped, 0);
    }

    #[test]
    fn pure_deletions_conserve_labels(u in utterance(), keep in prop::collection::vec(any::<bool>(), 12)) {
        let hyp: Vec<String> = u.words.iter().zip(&keep).filter(|(_, &k)| k).map(|(w, _)| w.clone()).collect();
        let r = restore_punctuation(&u, &hyp);
        let emitted = r.utterance.labels.iter().filter(|l| l.is_punct()).count();
        let reference = u.labels.iter().filter(|l| l.is_punct()).count();
        prop_assert!(emitted <= reference);
        prop_assert!(emitted + r.dropped <= reference);
        // Every emitted mark exists somewhere in the reference.
        for l in r.utterance.labels.iter().filter(|l| l.is_punct()) {
            prop_assert!(u.labels.contains(l));
        }
    }

    #[test]
    fn filter_and_stats_commute(corpus in prop::collection::vec(utterance(), 0..10), min in 1usize..8) {
        let kept = filter_min_length(corpus, min);
        prop_assert!(kept.iter().all(|u| u.len() >= min));
        let mut sum = ClassDistribution::default();
        for u in &kept {
            sum += class_stats(std::slice::from_ref(u));
        }
        prop_assert_eq!(class_stats(&kept), sum);
        prop_assert_eq!(sum.total(), kept.iter().map(|u| u.len()).sum::<usize>());
    }
}
