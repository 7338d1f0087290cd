//! Corpus types, JSON Lines IO, class statistics, and filtering.

mod align;
mod synth;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::ops::AddAssign;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acoustic::FrameFeatures;
use crate::error::{Error, Result};
use crate::fusion::WordBoundaries;
use crate::label::{PunctuationLabel, NUM_CLASSES};

pub use align::{
    align_edit_distance, alignment_cost, augment_with_nbest, restore_punctuation, AlignOp, AugmentOptions,
    AugmentReport, Restored,
};
pub use synth::{gen_synthetic, CueProfile, SynthConfig, SyntheticCorpus, Template};

/// One labeled utterance, optionally with frame features and word spans.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub words: Vec<String>,
    pub labels: Vec<PunctuationLabel>,
    pub frames: Option<FrameFeatures>,
    pub boundaries: Option<WordBoundaries>,
}

impl Utterance {
    pub fn text_only(id: impl Into<String>, words: Vec<String>, labels: Vec<PunctuationLabel>) -> Result<Self> {
        let u = Self { id: id.into(), words, labels, frames: None, boundaries: None };
        u.validate()?;
        Ok(u)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn has_acoustics(&self) -> bool {
        self.frames.is_some() && self.boundaries.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.words.len() {
            return Err(Error::Data(format!(
                "utterance {}: {} words but {} labels",
                self.id,
                self.words.len(),
                self.labels.len()
            )));
        }
        match (&self.frames, &self.boundaries) {
            (Some(f), Some(b)) => {
                if b.len() != self.words.len() {
                    return Err(Error::Data(format!(
                        "utterance {}: {} boundaries for {} words",
                        self.id,
                        b.len(),
                        self.words.len()
                    )));
                }
                b.validate(f.num_frames())
            }
            (None, None) => Ok(()),
            _ => Err(Error::Data(format!("utterance {}: frames and boundaries must come together", self.id))),
        }
    }

    /// The first `words` words, their labels, and the frames they span.
    pub fn prefix(&self, words: usize) -> Result<Utterance> {
        let words = words.min(self.len());
        let (frames, boundaries) = match (&self.frames, &self.boundaries) {
            (Some(f), Some(b)) if words > 0 => {
                let b = b.prefix(words);
                (Some(f.prefix(b.0[words - 1].1)?), Some(b))
            }
            _ => (None, None),
        };
        Ok(Utterance {
            id: self.id.clone(),
            words: self.words[..words].to_vec(),
            labels: self.labels[..words].to_vec(),
            frames,
            boundaries,
        })
    }
}

/// Ranked ASR hypotheses for one utterance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NBestList {
    pub id: String,
    pub hyps: Vec<Vec<String>>,
}

pub type NBestMap = BTreeMap<String, NBestList>;

#[derive(Serialize, Deserialize)]
struct UtteranceRecord {
    id: String,
    words: Vec<String>,
    labels: Vec<PunctuationLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feat_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boundaries: Option<WordBoundaries>,
}

fn file_stem_for(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Writes a JSON Lines corpus. Frame features go to `feats/<id>.feat` next
/// to the corpus file and are referenced by relative path.
pub fn write_corpus(path: &Path, corpus: &[Utterance]) -> Result<()> {
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut out = Vec::new();
    for u in corpus {
        let feat_path = match &u.frames {
            Some(f) => {
                let rel = format!("feats/{}.feat", file_stem_for(&u.id));
                let full = dir.join(&rel);
                std::fs::create_dir_all(full.parent().unwrap_or(&dir))?;
                f.save(&full)?;
                Some(rel)
            }
            None => None,
        };
        let rec = UtteranceRecord {
            id: u.id.clone(),
            words: u.words.clone(),
            labels: u.labels.clone(),
            feat_path,
            boundaries: u.boundaries.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

fn resolve(dir: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

pub fn read_corpus(path: &Path) -> Result<Vec<Utterance>> {
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut corpus = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UtteranceRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        let frames = match &rec.feat_path {
            Some(p) => Some(FrameFeatures::load(&resolve(&dir, p))?),
            None => None,
        };
        let u = Utterance { id: rec.id, words: rec.words, labels: rec.labels, frames, boundaries: rec.boundaries };
        u.validate().map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        corpus.push(u);
    }
    Ok(corpus)
}

pub fn write_nbest(path: &Path, lists: &[NBestList]) -> Result<()> {
    let mut out = Vec::new();
    for l in lists {
        serde_json::to_writer(&mut out, l)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn read_nbest(path: &Path) -> Result<NBestMap> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut map = NBestMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let list: NBestList =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        if list.hyps.is_empty() {
            return Err(Error::Parse { line: i + 1, msg: format!("n-best list {} has no hypotheses", list.id) });
        }
        map.insert(list.id.clone(), list);
    }
    Ok(map)
}

/// Label counts over word positions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub counts: [usize; NUM_CLASSES],
}

impl ClassDistribution {
    pub fn add(&mut self, label: PunctuationLabel) {
        self.counts[label.id()] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn count(&self, label: PunctuationLabel) -> usize {
        self.counts[label.id()]
    }

    /// Percentages per class; all zero for an empty distribution.
    pub fn percentages(&self) -> [f64; NUM_CLASSES] {
        let total = self.total();
        let mut p = [0.0; NUM_CLASSES];
        if total > 0 {
            for (p, &c) in p.iter_mut().zip(&self.counts) {
                *p = 100.0 * c as f64 / total as f64;
            }
        }
        p
    }
}

impl AddAssign for ClassDistribution {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.counts.iter_mut().zip(rhs.counts) {
            *a += b;
        }
    }
}

pub fn class_stats(corpus: &[Utterance]) -> ClassDistribution {
    let mut dist = ClassDistribution::default();
    for u in corpus {
        for &l in &u.labels {
            dist.add(l);
        }
    }
    dist
}

pub const DEFAULT_MIN_WORDS: usize = 6;

pub fn filter_min_length(corpus: Vec<Utterance>, min_words: usize) -> Vec<Utterance> {
    corpus.into_iter().filter(|u| u.len() >= min_words).collect()
}
