//! Deterministic synthetic corpus with controllable punctuation cues.
//!
//! Sentences come from a small template grammar. Frames follow a 10 ms
//! convention with four base channels: pitch, energy, delta pitch, and a
//! noisy pitch copy. Pitch rises over the last word of a question and falls
//! over the last word of a statement; sentence ends and commas are followed
//! by pauses that sit inside the preceding word's span, so boundaries always
//! partition the frame axis. Higher-dimensional feature kinds are fixed
//! random projections of the base channels.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ClassDistribution, NBestList, NBestMap, Utterance};
use crate::acoustic::{FeatureKind, FrameFeatures, DEFAULT_FRAME_SHIFT_MS};
use crate::error::{Error, Result};
use crate::fusion::WordBoundaries;
use crate::label::PunctuationLabel;
use crate::numeric::Tensor;

const SUBJECTS: &[&str] = &["i", "you", "we", "they", "he", "she", "people", "everybody"];
const AUX: &[&str] = &["do", "did", "can", "would", "will", "could"];
const VERBS: &[&str] = &["like", "want", "need", "see", "know", "watch", "enjoy", "remember", "play", "visit"];
const DETS: &[&str] = &["the", "some", "that", "my", "your"];
const NOUNS: &[&str] = &[
    "pizza", "music", "movies", "games", "coffee", "books", "football", "dogs", "weather", "kids", "school", "work",
    "city", "garden",
];
const ADVERBS: &[&str] = &["today", "again", "lately", "often", "tomorrow", "there"];
const OPENERS: &[&str] = &["well", "yeah", "okay", "um", "actually"];
const CONJUNCTIONS: &[&str] = &["but", "and", "because"];

const BASE_DIM: usize = 4;
const PROJECTION_SEED: u64 = 0x6d75_7365;
const SENTENCE_PAUSE: usize = 6;
const COMMA_PAUSE: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CueProfile {
    /// Questions open with an auxiliary and carry a pitch rise.
    Balanced,
    /// Questions and statements share one template; only pitch tells them apart.
    AcousticOnlyQuestion,
    /// Lexical cues only: flat pitch and uninformative pauses.
    LexicalOnly,
}

impl CueProfile {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Balanced => "balanced",
            Self::AcousticOnlyQuestion => "acoustic-only-question",
            Self::LexicalOnly => "lexical-only",
        }
    }

    fn prosodic(self) -> bool {
        self != Self::LexicalOnly
    }
}

impl std::str::FromStr for CueProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(Self::Balanced),
            "acoustic-only-question" => Ok(Self::AcousticOnlyQuestion),
            "lexical-only" => Ok(Self::LexicalOnly),
            other => Err(Error::Config(format!(
                "unknown cue profile {other:?} (expected balanced, acoustic-only-question, lexical-only)"
            ))),
        }
    }
}

/// A clause template: one word drawn per slot, optional slots skipped at random.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pub slots: Vec<(&'static [&'static str], bool)>,
}

impl Template {
    pub fn statement() -> Self {
        Self { slots: vec![(SUBJECTS, false), (VERBS, false), (DETS, true), (NOUNS, false), (ADVERBS, true)] }
    }

    pub fn question(profile: CueProfile) -> Self {
        match profile {
            CueProfile::AcousticOnlyQuestion => Self::statement(),
            _ => {
                let mut t = Self::statement();
                t.slots.insert(0, (AUX, false));
                t
            }
        }
    }

    /// Every word the template can emit, with multiplicity across slots.
    pub fn vocabulary(&self) -> Vec<&'static str> {
        let mut v: Vec<&'static str> = self.slots.iter().flat_map(|(w, _)| w.iter().copied()).collect();
        v.sort_unstable();
        v
    }

    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut Vec<String>) {
        for (words, optional) in &self.slots {
            let use_slot = !optional || rng.gen_bool(0.4);
            if use_slot {
                out.push(words.choose(rng).expect("non-empty slot").to_string());
            }
        }
    }
}

/// Every word the generator can produce.
pub fn lexicon() -> Vec<&'static str> {
    let mut v: Vec<&'static str> =
        [SUBJECTS, AUX, VERBS, DETS, NOUNS, ADVERBS, OPENERS, CONJUNCTIONS].concat();
    v.sort_unstable();
    v.dedup();
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub profile: CueProfile,
    pub features: FeatureKind,
    /// Width of `FeatureKind::Synthetic` frames.
    pub synthetic_dim: usize,
    pub question_rate: f64,
    pub max_sentences: usize,
    pub nbest: usize,
    pub sub_rate: f64,
    pub del_rate: f64,
    pub ins_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 100,
            profile: CueProfile::Balanced,
            features: FeatureKind::Pitch,
            synthetic_dim: 16,
            question_rate: 0.35,
            max_sentences: 3,
            nbest: 5,
            sub_rate: 0.2,
            del_rate: 0.1,
            ins_rate: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn feature_dim(&self) -> usize {
        self.features.dim().unwrap_or(self.synthetic_dim)
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("synthetic count must be >= 1".into()));
        }
        if self.max_sentences == 0 || self.feature_dim() == 0 {
            return Err(Error::Config("max_sentences and feature dim must be >= 1".into()));
        }
        for (name, r) in [
            ("question_rate", self.question_rate),
            ("sub_rate", self.sub_rate),
            ("del_rate", self.del_rate),
            ("ins_rate", self.ins_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} {r} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub utterances: Vec<Utterance>,
    pub nbest: Vec<NBestList>,
    /// Label counts kept while generating, independent of later counting.
    pub tally: ClassDistribution,
}

impl SyntheticCorpus {
    pub fn nbest_map(&self) -> NBestMap {
        self.nbest.iter().map(|l| (l.id.clone(), l.clone())).collect()
    }
}

struct Word {
    text: String,
    label: PunctuationLabel,
    contour: Contour,
}

#[derive(Clone, Copy, PartialEq)]
enum Contour {
    Flat,
    Rise,
    Fall,
}

fn sentence(profile: CueProfile, question_rate: f64, rng: &mut ChaCha8Rng) -> Vec<Word> {
    let question = rng.gen_bool(question_rate);
    let mut words = Vec::new();
    let push = |text: String, label, contour, words: &mut Vec<Word>| words.push(Word { text, label, contour });
    if rng.gen_bool(0.25) {
        push(OPENERS.choose(rng).unwrap().to_string(), PunctuationLabel::Comma, Contour::Flat, &mut words);
    }
    let mut clause = Vec::new();
    let first = if question { Template::question(profile) } else { Template::statement() };
    first.sample(rng, &mut clause);
    if rng.gen_bool(0.3) {
        let last = clause.len() - 1;
        for (i, w) in clause.drain(..).enumerate() {
            let label = if i == last { PunctuationLabel::Comma } else { PunctuationLabel::NoPunct };
            push(w, label, Contour::Flat, &mut words);
        }
        clause.push(CONJUNCTIONS.choose(rng).unwrap().to_string());
        Template::statement().sample(rng, &mut clause);
    }
    let last = clause.len() - 1;
    let (end_label, end_contour) =
        if question { (PunctuationLabel::Question, Contour::Rise) } else { (PunctuationLabel::FullStop, Contour::Fall) };
    for (i, w) in clause.into_iter().enumerate() {
        if i == last {
            push(w, end_label, end_contour, &mut words);
        } else {
            push(w, PunctuationLabel::NoPunct, Contour::Flat, &mut words);
        }
    }
    words
}

fn projection(d: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED ^ d as u64);
    let normal = Normal::new(0.0, 0.5).expect("valid normal");
    Tensor::new(vec![BASE_DIM, d], (0..BASE_DIM * d).map(|_| normal.sample(&mut rng)).collect())
        .expect("projection shape")
}

/// Base prosody channels and word spans for one utterance.
fn prosody(words: &[Word], profile: CueProfile, rng: &mut ChaCha8Rng) -> (Vec<[f64; BASE_DIM]>, WordBoundaries) {
    let jitter = Normal::new(0.0, 0.1).unwrap();
    let fine = Normal::new(0.0, 0.03).unwrap();
    let noisy = Normal::new(0.0, 0.3).unwrap();
    let base = rng.gen_range(-0.3..0.3);
    let mut frames: Vec<[f64; BASE_DIM]> = Vec::new();
    let mut spans = Vec::with_capacity(words.len());
    let mut prev_pitch = base;
    for w in words {
        let start = frames.len();
        let voiced = 3 + w.text.len() / 3 + rng.gen_range(0..=2);
        let level = base + jitter.sample(rng);
        let contour = if profile.prosodic() { w.contour } else { Contour::Flat };
        let slope = match contour {
            Contour::Flat => 0.0,
            Contour::Rise => 0.2,
            Contour::Fall => -0.15,
        };
        let mut pitch = level;
        for k in 0..voiced {
            pitch = level + slope * k as f64 + fine.sample(rng);
            let energy = 1.0 + fine.sample(rng);
            frames.push([pitch, energy, pitch - prev_pitch, pitch + noisy.sample(rng)]);
            prev_pitch = pitch;
        }
        let pause = if profile.prosodic() {
            match w.label {
                PunctuationLabel::FullStop | PunctuationLabel::Question => SENTENCE_PAUSE,
                PunctuationLabel::Comma => COMMA_PAUSE,
                PunctuationLabel::NoPunct => rng.gen_range(0..=1),
            }
        } else {
            rng.gen_range(0..=2)
        };
        for _ in 0..pause {
            let energy = fine.sample(rng).abs();
            frames.push([pitch, energy, 0.0, pitch + noisy.sample(rng)]);
            prev_pitch = pitch;
        }
        spans.push((start, frames.len()));
    }
    (frames, WordBoundaries(spans))
}

fn corrupt(words: &[String], sub: f64, del: f64, ins: f64, lexicon: &[&str], rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut out = Vec::with_capacity(words.len());
    for w in words {
        let u: f64 = rng.gen();
        if u < del {
            // deleted
        } else if u < del + sub {
            let replacement = loop {
                let c = *lexicon.choose(rng).unwrap();
                if c != w {
                    break c;
                }
            };
            out.push(replacement.to_string());
        } else {
            out.push(w.clone());
        }
        if ins > 0.0 && rng.gen_bool(ins) {
            out.push(lexicon.choose(rng).unwrap().to_string());
        }
    }
    if out.is_empty() {
        out.push(words[0].clone());
    }
    out
}

/// Generates `cfg.count` utterances and their corrupted hypotheses.
/// Hypothesis rank r uses error rates scaled by `1 + r / 2`.
pub fn gen_synthetic(seed: u64, cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hyp_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let proj = match cfg.features {
        FeatureKind::Pitch => None,
        _ => Some(projection(cfg.feature_dim())),
    };
    let feature_noise = Normal::new(0.0, 0.05).unwrap();
    let lexicon = lexicon();
    let mut tally = ClassDistribution::default();
    let mut utterances = Vec::with_capacity(cfg.count);
    let mut nbest = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let sentences = rng.gen_range(1..=cfg.max_sentences);
        let words: Vec<Word> =
            (0..sentences).flat_map(|_| sentence(cfg.profile, cfg.question_rate, &mut rng)).collect();
        for w in &words {
            tally.add(w.label);
        }
        let (base, boundaries) = prosody(&words, cfg.profile, &mut rng);
        let t = base.len();
        let flat: Vec<f64> = base.iter().flatten().copied().collect();
        let base = Tensor::new(vec![t, BASE_DIM], flat)?;
        let frames = match &proj {
            None => base,
            Some(p) => {
                let mut f = base.matmul(p)?;
                for v in f.data_mut() {
                    *v += feature_noise.sample(&mut rng);
                }
                f
            }
        };
        let id = format!("s{seed}-{i:05}");
        let utt = Utterance {
            id: id.clone(),
            words: words.iter().map(|w| w.text.clone()).collect(),
            labels: words.iter().map(|w| w.label).collect(),
            frames: Some(FrameFeatures::new(cfg.features, frames, DEFAULT_FRAME_SHIFT_MS)?),
            boundaries: Some(boundaries),
        };
        let hyps = (0..cfg.nbest)
            .map(|r| {
                let f = 1.0 + r as f64 / 2.0;
                let clamp = |x: f64| (x * f).min(0.9);
                corrupt(&utt.words, clamp(cfg.sub_rate), clamp(cfg.del_rate), clamp(cfg.ins_rate), &lexicon, &mut hyp_rng)
            })
            .collect();
        if cfg.nbest > 0 {
            nbest.push(NBestList { id, hyps });
        }
        utterances.push(utt);
    }
    Ok(SyntheticCorpus { utterances, nbest, tally })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::class_stats;

    #[test]
    fn deterministic_and_tallied() {
        let cfg = SynthConfig { count: 20, ..Default::default() };
        let a = gen_synthetic(5, &cfg).unwrap();
        assert_eq!(a, gen_synthetic(5, &cfg).unwrap());
        assert_ne!(a.utterances, gen_synthetic(6, &cfg).unwrap().utterances);
        assert_eq!(class_stats(&a.utterances), a.tally);
    }

    #[test]
    fn boundaries_partition_frames() {
        for profile in [CueProfile::Balanced, CueProfile::AcousticOnlyQuestion, CueProfile::LexicalOnly] {
            let cfg = SynthConfig { count: 10, profile, ..Default::default() };
            for u in gen_synthetic(1, &cfg).unwrap().utterances {
                let b = u.boundaries.as_ref().unwrap();
                assert_eq!(b.0[0].0, 0);
                assert!(b.0.windows(2).all(|p| p[0].1 == p[1].0));
                assert_eq!(b.0.last().unwrap().1, u.frames.as_ref().unwrap().num_frames());
            }
        }
    }

    #[test]
    fn acoustic_only_templates_match() {
        let p = CueProfile::AcousticOnlyQuestion;
        assert_eq!(Template::question(p).vocabulary(), Template::statement().vocabulary());
        assert_ne!(Template::question(CueProfile::Balanced).vocabulary(), Template::statement().vocabulary());
    }

    #[test]
    fn feature_kinds_have_their_width() {
        for (kind, d) in [(FeatureKind::Pitch, 4), (FeatureKind::Melspec, 80), (FeatureKind::Synthetic, 16)] {
            let cfg = SynthConfig { count: 2, features: kind, ..Default::default() };
            let c = gen_synthetic(3, &cfg).unwrap();
            assert_eq!(c.utterances[0].frames.as_ref().unwrap().dim(), d);
        }
    }

    #[test]
    fn unknown_profile_is_config_error() {
        assert!(matches!("prosody".parse::<CueProfile>(), Err(Error::Config(_))));
    }

    #[test]
    fn hypotheses_keep_a_word() {
        let cfg = SynthConfig { count: 30, del_rate: 0.9, sub_rate: 0.0, ..Default::default() };
        let c = gen_synthetic(2, &cfg).unwrap();
        assert!(c.nbest.iter().all(|l| l.hyps.len() == 5 && l.hyps.iter().all(|h| !h.is_empty())));
    }
}
