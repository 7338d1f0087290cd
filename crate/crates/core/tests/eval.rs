mod common;

use common::tiny_model;
use muse_core::data::{gen_synthetic, restore_punctuation, SynthConfig, Utterance};
use muse_core::eval::{evaluate, evaluate_on_asr, f1_per_class, ConfusionMatrix, Punctuator};
use muse_core::label::{parse_punctuated, render_punctuated, PunctuationLabel};
use muse_core::Result;
use proptest::prelude::*;

struct AlwaysNp;

impl Punctuator for AlwaysNp {
    fn predict_words(&self, u: &Utterance) -> Result<Vec<PunctuationLabel>> {
        Ok(vec![PunctuationLabel::NoPunct; u.len()])
    }
}

/// Labels each word by a hash of its text, so predictions depend on words.
struct WordHash;

impl Punctuator for WordHash {
    fn predict_words(&self, u: &Utterance) -> Result<Vec<PunctuationLabel>> {
        Ok(u.words.iter().map(|w| PunctuationLabel::from_id(w.bytes().map(usize::from).sum::<usize>() % 4).unwrap()).collect())
    }
}

fn label() -> impl Strategy<Value = PunctuationLabel> {
    (0usize..4).prop_map(|i| PunctuationLabel::from_id(i).unwrap())
}

#[test]
fn always_np_has_zero_punctuation_recall() {
    let c = gen_synthetic(3, &SynthConfig { count: 20, ..Default::default() }).unwrap();
    let r = evaluate(&AlwaysNp, &c.utterances).unwrap();
    for l in PunctuationLabel::PUNCT {
        assert_eq!(r.class(l).recall, 0.0);
    }
    assert_eq!(r.macro_f1(), 0.0);
}

#[test]
fn identical_hypotheses_reproduce_reference_evaluation() {
    let (model, corpus) = tiny_model("muse", "fa", 4);
    let nbest = corpus
        .iter()
        .map(|u| (u.id.clone(), muse_core::data::NBestList { id: u.id.clone(), hyps: vec![u.words.clone()] }))
        .collect();
    assert_eq!(evaluate_on_asr(&model, &corpus, &nbest).unwrap(), evaluate(&model, &corpus).unwrap());
}

#[test]
fn asr_side_report_equals_step_by_step_composition() {
    let c = gen_synthetic(12, &SynthConfig { count: 40, sub_rate: 0.2, del_rate: 0.0, ..Default::default() }).unwrap();
    let nbest = c.nbest_map();
    let (model, _) = tiny_model("muse", "fa", 12);
    let got = evaluate_on_asr(&model, &c.utterances, &nbest).unwrap();

    let mut counts = [[0usize; 4]; 4];
    for u in &c.utterances {
        let hyp = &nbest[&u.id].hyps[0];
        let mut target = restore_punctuation(u, hyp).utterance;
        // Substitutions only, so every hypothesis keeps the reference spans.
        assert_eq!(target.len(), u.len());
        target.frames = u.frames.clone();
        target.boundaries = u.boundaries.clone();
        let probs = model.forward(&target).unwrap();
        let tok = model.tokenize(&target.words).unwrap();
        for (w, &p) in tok.word_final_positions().iter().enumerate() {
            let row = probs.row(p);
            let pred = (0..4).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            counts[target.labels[w].id()][pred] += 1;
        }
    }
    assert_eq!(got.confusion.counts, counts);
    assert_eq!(got.skipped, 0);
}

#[test]
fn missing_hypotheses_are_skipped_and_counted() {
    let c = gen_synthetic(2, &SynthConfig { count: 10, ..Default::default() }).unwrap();
    let mut nbest = c.nbest_map();
    let first = c.utterances[0].id.clone();
    nbest.remove(&first);
    let r = evaluate_on_asr(&WordHash, &c.utterances, &nbest).unwrap();
    assert_eq!(r.skipped, 1);
}

#[test]
fn rendered_predictions_score_perfectly_against_themselves() {
    let c = gen_synthetic(6, &SynthConfig { count: 15, ..Default::default() }).unwrap();
    for u in &c.utterances {
        let preds = WordHash.predict_words(u).unwrap();
        let (w, l) = parse_punctuated(&render_punctuated(&u.words, &preds));
        assert_eq!(w, u.words);
        let r = f1_per_class(&l, &preds).unwrap();
        for s in &r.classes {
            if s.support > 0 {
                assert_eq!(s.f1, 1.0);
            }
        }
    }
}

proptest! {
    #[test]
    fn report_matches_hand_tallied_confusion(pairs in prop::collection::vec((label(), label()), 1..200)) {
        let (preds, refs): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let r = f1_per_class(&preds, &refs).unwrap();
        for c in PunctuationLabel::ALL {
            let tp = pairs.iter().filter(|(p, g)| *p == c && *g == c).count() as f64;
            let fp = pairs.iter().filter(|(p, g)| *p == c && *g != c).count() as f64;
            let fn_ = pairs.iter().filter(|(p, g)| *p != c && *g == c).count() as f64;
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rec = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            let f1 = if p + rec > 0.0 { 2.0 * p * rec / (p + rec) } else { 0.0 };
            let s = r.class(c);
            prop_assert_eq!(s.precision, p);
            prop_assert_eq!(s.recall, rec);
            prop_assert!((s.f1 - f1).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&s.f1));
            prop_assert_eq!(s.support, (tp + fn_) as usize);
        }
        let correct = pairs.iter().filter(|(p, g)| p == g).count();
        let tp_sum: usize = PunctuationLabel::ALL.iter().map(|&c| r.confusion.counts[c.id()][c.id()]).sum();
        prop_assert_eq!(tp_sum, correct);
        prop_assert_eq!(r.confusion.accuracy(), correct as f64 / pairs.len() as f64);
    }

    #[test]
    fn corpus_report_is_sum_of_utterance_matrices(seed in 0u64..200) {
        let c = gen_synthetic(seed, &SynthConfig { count: 8, ..Default::default() }).unwrap();
        let mut merged = ConfusionMatrix::default();
        for u in &c.utterances {
            merged += ConfusionMatrix::from_labels(&WordHash.predict_words(u).unwrap(), &u.labels).unwrap();
        }
        let r = evaluate(&WordHash, &c.utterances).unwrap();
        prop_assert_eq!(r.confusion, merged);
        prop_assert_eq!(r.words, c.tally.total());
    }
}
