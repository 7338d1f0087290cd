//! Word-level per-class precision, recall, and F1.

use std::fmt;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::data::{restore_punctuation, NBestMap, Utterance};
use crate::error::{Error, Result};
use crate::label::{PunctuationLabel, NUM_CLASSES};

/// Anything that assigns a label to every word of an utterance.
pub trait Punctuator {
    fn predict_words(&self, utt: &Utterance) -> Result<Vec<PunctuationLabel>>;
}

/// `counts[reference][prediction]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_labels(preds: &[PunctuationLabel], refs: &[PunctuationLabel]) -> Result<Self> {
        if preds.len() != refs.len() {
            return Err(Error::Data(format!("{} predictions for {} references", preds.len(), refs.len())));
        }
        let mut m = Self::default();
        for (p, r) in preds.iter().zip(refs) {
            m.counts[r.id()][p.id()] += 1;
        }
        Ok(m)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    pub fn report(&self) -> EvalReport {
        let classes = PunctuationLabel::ALL.map(|label| {
            let c = label.id();
            let tp = self.counts[c][c];
            let predicted: usize = (0..NUM_CLASSES).map(|r| self.counts[r][c]).sum();
            let support: usize = self.counts[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            ClassScore { label, precision, recall, f1, support, predicted }
        });
        EvalReport { classes, words: self.total(), confusion: *self, skipped: 0 }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.counts.iter_mut().flatten().zip(rhs.counts.iter().flatten()) {
            *a += b;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: PunctuationLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Reference occurrences.
    pub support: usize,
    pub predicted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: [ClassScore; NUM_CLASSES],
    pub words: usize,
    pub confusion: ConfusionMatrix,
    /// Utterances left out, e.g. for lack of a hypothesis.
    pub skipped: usize,
}

impl EvalReport {
    pub fn class(&self, label: PunctuationLabel) -> &ClassScore {
        &self.classes[label.id()]
    }

    pub fn f1(&self, label: PunctuationLabel) -> f64 {
        self.class(label).f1
    }

    /// Mean F1 over the punctuation classes with reference support. No
    /// punctuation is left out.
    pub fn macro_f1(&self) -> f64 {
        let present: Vec<f64> =
            PunctuationLabel::PUNCT.iter().map(|&l| self.class(l)).filter(|c| c.support > 0).map(|c| c.f1).collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }

    /// One JSON object per class, then a summary line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for c in &self.classes {
            out.push_str(&serde_json::to_string(c)?);
            out.push('\n');
        }
        let summary = serde_json::json!({
            "words": self.words,
            "accuracy": self.confusion.accuracy(),
            "macro_f1": self.macro_f1(),
            "skipped": self.skipped,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        Ok(out)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support")?;
        for c in &self.classes {
            writeln!(
                f,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                c.label.as_str(),
                c.precision,
                c.recall,
                c.f1,
                c.support
            )?;
        }
        write!(f, "words {}  accuracy {:.4}  macro-F1 (COMMA/FULLSTOP/QUESTION) {:.4}", self.words, self.confusion.accuracy(), self.macro_f1())?;
        if self.skipped > 0 {
            write!(f, "  skipped {}", self.skipped)?;
        }
        Ok(())
    }
}

pub fn f1_per_class(preds: &[PunctuationLabel], refs: &[PunctuationLabel]) -> Result<EvalReport> {
    Ok(ConfusionMatrix::from_labels(preds, refs)?.report())
}

/// Reference-side evaluation: predictions on each utterance scored against
/// its own labels, summed over the corpus.
pub fn evaluate(model: &dyn Punctuator, corpus: &[Utterance]) -> Result<EvalReport> {
    let mut m = ConfusionMatrix::default();
    for u in corpus {
        m += ConfusionMatrix::from_labels(&model.predict_words(u)?, &u.labels)?;
    }
    Ok(m.report())
}

/// ASR-side evaluation against the 1-best hypothesis of each utterance, with
/// targets restored from the reference. A hypothesis with as many words as
/// its reference keeps the reference frames and spans; others are scored
/// text-only. Utterances without a non-empty hypothesis are skipped.
pub fn evaluate_on_asr(model: &dyn Punctuator, corpus: &[Utterance], nbest: &NBestMap) -> Result<EvalReport> {
    let mut m = ConfusionMatrix::default();
    let mut skipped = 0;
    for u in corpus {
        let Some(hyp) = nbest.get(&u.id).and_then(|l| l.hyps.first()) else {
            skipped += 1;
            continue;
        };
        let mut target = restore_punctuation(u, hyp).utterance;
        if target.is_empty() {
            skipped += 1;
            continue;
        }
        if target.len() == u.len() {
            target.frames = u.frames.clone();
            target.boundaries = u.boundaries.clone();
        }
        m += ConfusionMatrix::from_labels(&model.predict_words(&target)?, &target.labels)?;
    }
    let mut report = m.report();
    report.skipped = skipped;
    Ok(report)
}
