//! Levenshtein alignment and transfer of reference punctuation onto
//! hypothesis word sequences.

use serde::{Deserialize, Serialize};

use super::{NBestMap, Utterance};
use crate::error::{Error, Result};
use crate::label::PunctuationLabel;

/// One step of an alignment, with indices into the reference and hypothesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignOp {
    Match { r: usize, h: usize },
    Sub { r: usize, h: usize },
    Del { r: usize },
    Ins { h: usize },
}

impl AlignOp {
    pub fn cost(self) -> usize {
        match self {
            AlignOp::Match { .. } => 0,
            _ => 1,
        }
    }
}

pub fn alignment_cost(ops: &[AlignOp]) -> usize {
    ops.iter().map(|op| op.cost()).sum()
}

/// Minimum-cost alignment with unit costs. Ties in the backtrace prefer the
/// diagonal, then deletion, then insertion.
pub fn align_edit_distance<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hyp: &[T]) -> Vec<AlignOp> {
    let (m, n) = (reference.len(), hyp.len());
    let same = |i: usize, j: usize| reference[i].as_ref() == hyp[j].as_ref();
    let w = n + 1;
    let mut d = vec![0usize; (m + 1) * w];
    for i in 0..=m {
        d[i * w] = i;
    }
    for j in 0..=n {
        d[j] = j;
    }
    for i in 1..=m {
        for j in 1..=n {
            let diag = d[(i - 1) * w + j - 1] + usize::from(!same(i - 1, j - 1));
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = diag.min(del).min(ins);
        }
    }
    let mut ops = Vec::with_capacity(m.max(n));
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 && here == d[(i - 1) * w + j - 1] + usize::from(!same(i - 1, j - 1)) {
            i -= 1;
            j -= 1;
            ops.push(if same(i, j) { AlignOp::Match { r: i, h: j } } else { AlignOp::Sub { r: i, h: j } });
        } else if i > 0 && here == d[(i - 1) * w + j] + 1 {
            i -= 1;
            ops.push(AlignOp::Del { r: i });
        } else {
            j -= 1;
            ops.push(AlignOp::Ins { h: j });
        }
    }
    ops.reverse();
    ops
}

/// A hypothesis carrying restored labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Restored {
    pub utterance: Utterance,
    /// Punctuation of deleted reference words that had no earlier hypothesis
    /// word to land on.
    pub dropped: usize,
    pub warning: Option<String>,
}

/// Transfers reference labels onto `hyp`: aligned words copy their label,
/// inserted words get no punctuation, and a deleted punctuated word moves its
/// label onto the most recent hypothesis word, replacing what was there.
pub fn restore_punctuation<S: AsRef<str>>(reference: &Utterance, hyp: &[S]) -> Restored {
    let words: Vec<String> = hyp.iter().map(|w| w.as_ref().to_string()).collect();
    if words.is_empty() {
        return Restored {
            utterance: Utterance { id: reference.id.clone(), words, labels: vec![], frames: None, boundaries: None },
            dropped: reference.labels.iter().filter(|l| l.is_punct()).count(),
            warning: Some(format!("utterance {}: empty hypothesis", reference.id)),
        };
    }
    let mut labels: Vec<PunctuationLabel> = Vec::with_capacity(words.len());
    let mut dropped = 0;
    for op in align_edit_distance(&reference.words, &words) {
        match op {
            AlignOp::Match { r, .. } | AlignOp::Sub { r, .. } => labels.push(reference.labels[r]),
            AlignOp::Ins { .. } => labels.push(PunctuationLabel::NoPunct),
            AlignOp::Del { r } => {
                let label = reference.labels[r];
                if label.is_punct() {
                    match labels.last_mut() {
                        Some(last) => *last = label,
                        None => dropped += 1,
                    }
                }
            }
        }
    }
    Restored {
        utterance: Utterance { id: reference.id.clone(), words, labels, frames: None, boundaries: None },
        dropped,
        warning: None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentOptions {
    /// Hypotheses taken per utterance, best first.
    pub n: usize,
    /// Let a hypothesis keep the reference frames and word spans when it has
    /// the same number of words.
    pub reuse_boundaries: bool,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        Self { n: 1, reuse_boundaries: false }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub added: usize,
    pub missing: usize,
    pub empty: usize,
}

/// The original corpus followed by the restored top-`n` hypotheses of every
/// utterance, in corpus order.
pub fn augment_with_nbest(
    corpus: &[Utterance],
    nbest: &NBestMap,
    opts: AugmentOptions,
) -> Result<(Vec<Utterance>, AugmentReport)> {
    if opts.n == 0 {
        return Err(Error::Config("n-best count must be >= 1".into()));
    }
    let mut out = corpus.to_vec();
    let mut report = AugmentReport::default();
    for u in corpus {
        let Some(list) = nbest.get(&u.id) else {
            report.missing += 1;
            continue;
        };
        for (rank, hyp) in list.hyps.iter().take(opts.n).enumerate() {
            let mut restored = restore_punctuation(u, hyp).utterance;
            if restored.is_empty() {
                report.empty += 1;
                continue;
            }
            restored.id = format!("{}#h{}", u.id, rank + 1);
            if opts.reuse_boundaries && restored.len() == u.len() {
                restored.frames = u.frames.clone();
                restored.boundaries = u.boundaries.clone();
            }
            out.push(restored);
            report.added += 1;
        }
    }
    Ok((out, report))
}
