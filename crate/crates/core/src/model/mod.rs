//! The punctuation model: per-subword lexical features concatenated with
//! aligned acoustic features, followed by a linear layer and softmax.
//!
//! Variants share the head. `lex` drops the acoustic path, `blstm` swaps the
//! transformer for a bidirectional LSTM over subwords, and `stream` is the
//! multimodal model with causal attention, causal convolution padding, and
//! forced-alignment fusion, so each prediction depends only on the past.

mod blstm;
mod train;

use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use blstm::Blstm;
pub use train::{batch_loss, loss, pretrain_mlm, train, TrainConfig, TrainReport};

use crate::acoustic::{AcousticConfig, AcousticEncoder, FeatureKind};
use crate::config::Config;
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::eval::Punctuator;
use crate::fusion::{forced_alignment_fuse_var, AttentionFusionParams, FusionMode};
use crate::label::{PunctuationLabel, NUM_CLASSES};
use crate::lexical::{LexicalConfig, LexicalEncoder};
use crate::numeric::{Checkpoint, Ctx, Linear, Padding, ParamStore, Tensor, Var};
use crate::tokenizer::{collapse_predictions, tokenize, TokenizedUtterance, WordpieceVocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Muse,
    Lex,
    Blstm,
    Stream,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Muse => "muse",
            Self::Lex => "lex",
            Self::Blstm => "blstm",
            Self::Stream => "stream",
        }
    }

    pub fn is_multimodal(self) -> bool {
        matches!(self, Self::Muse | Self::Stream)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "muse" => Ok(Self::Muse),
            "lex" | "bert_like_lexical" => Ok(Self::Lex),
            "blstm" => Ok(Self::Blstm),
            "stream" | "lstm_stream" => Ok(Self::Stream),
            other => Err(Error::Config(format!("unknown variant {other:?} (expected muse, lex, blstm, stream)"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub lexical: LexicalConfig,
    pub features: FeatureKind,
    pub acoustic: AcousticConfig,
    pub fusion: FusionMode,
    pub d_k: usize,
    pub blstm_layers: usize,
    pub blstm_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Muse,
            lexical: LexicalConfig::default(),
            features: FeatureKind::Pitch,
            acoustic: AcousticConfig::default(),
            fusion: FusionMode::ForcedAlignment,
            d_k: AcousticConfig::default().lstm_hidden,
            blstm_layers: 2,
            blstm_hidden: 32,
        }
    }
}

impl ModelConfig {
    /// Builds a configuration from `model.*`, `lexical.*`, `acoustic.*` and
    /// `fusion.*` keys. Stride defaults to 1 for forced alignment and 2 for
    /// attention; the streaming variant always uses causal padding.
    pub fn from_config(c: &Config) -> Result<Self> {
        let d = Self::default();
        let variant: Variant = c.get("model.variant", d.variant)?;
        let lexical = LexicalConfig {
            layers: c.get("lexical.layers", d.lexical.layers)?,
            hidden: c.get("lexical.hidden", d.lexical.hidden)?,
            heads: c.get("lexical.heads", d.lexical.heads)?,
            ff_mult: c.get("lexical.ff_mult", d.lexical.ff_mult)?,
            dropout: c.get("lexical.dropout", d.lexical.dropout)?,
            max_len: c.get("lexical.max_len", d.lexical.max_len)?,
        };
        let features: FeatureKind = c.get("acoustic.features", d.features)?;
        let synthetic_dim = c.get("acoustic.synthetic_dim", 16usize)?;
        let fusion: FusionMode = c.get("fusion.mode", d.fusion)?;
        let default_stride = match fusion {
            FusionMode::ForcedAlignment => 1,
            FusionMode::Attention => 2,
        };
        let acoustic = AcousticConfig {
            input_dim: features.dim().unwrap_or(synthetic_dim),
            conv_kernel: c.get("acoustic.conv_kernel", d.acoustic.conv_kernel)?,
            conv_out: c.get("acoustic.conv_out", d.acoustic.conv_out)?,
            stride: c.get("acoustic.stride", default_stride)?,
            lstm_hidden: c.get("acoustic.lstm_hidden", d.acoustic.lstm_hidden)?,
            padding: if variant == Variant::Stream { Padding::Causal } else { Padding::Same },
        };
        let cfg = Self {
            variant,
            lexical,
            features,
            d_k: c.get("fusion.d_k", acoustic.lstm_hidden)?,
            acoustic,
            fusion,
            blstm_layers: c.get("model.blstm_layers", d.blstm_layers)?,
            blstm_hidden: c.get("model.blstm_hidden", d.blstm_hidden)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The configuration as config keys; inverse of [`Self::from_config`].
    pub fn to_config(&self) -> Config {
        let mut c = Config::default();
        c.set("model.variant", self.variant);
        c.set("model.blstm_layers", self.blstm_layers);
        c.set("model.blstm_hidden", self.blstm_hidden);
        c.set("lexical.layers", self.lexical.layers);
        c.set("lexical.hidden", self.lexical.hidden);
        c.set("lexical.heads", self.lexical.heads);
        c.set("lexical.ff_mult", self.lexical.ff_mult);
        c.set("lexical.dropout", self.lexical.dropout);
        c.set("lexical.max_len", self.lexical.max_len);
        c.set("acoustic.features", self.features);
        c.set("acoustic.synthetic_dim", self.acoustic.input_dim);
        c.set("acoustic.conv_kernel", self.acoustic.conv_kernel);
        c.set("acoustic.conv_out", self.acoustic.conv_out);
        c.set("acoustic.stride", self.acoustic.stride);
        c.set("acoustic.lstm_hidden", self.acoustic.lstm_hidden);
        c.set("fusion.mode", self.fusion);
        c.set("fusion.d_k", self.d_k);
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.lexical.validate()?;
        self.acoustic.validate()?;
        if let Some(d) = self.features.dim() {
            if d != self.acoustic.input_dim {
                return Err(Error::Config(format!(
                    "{} features have {} dims but the acoustic encoder expects {}",
                    self.features, d, self.acoustic.input_dim
                )));
            }
        }
        if self.variant == Variant::Stream {
            if self.fusion != FusionMode::ForcedAlignment || self.acoustic.stride != 1 {
                return Err(Error::Mode("streaming needs forced-alignment fusion with stride 1".into()));
            }
            if self.acoustic.padding != Padding::Causal {
                return Err(Error::Mode("streaming needs causal convolution padding".into()));
            }
        }
        if self.variant == Variant::Blstm && (self.blstm_layers == 0 || self.blstm_hidden == 0) {
            return Err(Error::Config("model.blstm_layers and model.blstm_hidden must be >= 1".into()));
        }
        Ok(())
    }

    pub fn causal(&self) -> bool {
        self.variant == Variant::Stream
    }

    /// Width of the aligned acoustic rows.
    pub fn fused_dim(&self) -> usize {
        if self.variant.is_multimodal() {
            self.acoustic.lstm_hidden
        } else {
            0
        }
    }

    pub fn lexical_dim(&self) -> usize {
        match self.variant {
            Variant::Blstm => 2 * self.blstm_hidden,
            _ => self.lexical.hidden,
        }
    }
}

const VOCAB_META_KEY: &str = "vocab.tokens";

#[derive(Clone, Debug)]
pub struct MuseModel {
    pub cfg: ModelConfig,
    pub vocab: WordpieceVocab,
    pub store: ParamStore,
    pub lexical: Option<LexicalEncoder>,
    pub blstm: Option<Blstm>,
    pub acoustic: Option<AcousticEncoder>,
    pub attention: Option<AttentionFusionParams>,
    /// `W^k`, `b^k`: (lexical + fused) -> 4 classes.
    pub head: Linear,
}

impl MuseModel {
    pub fn new(cfg: ModelConfig, vocab: WordpieceVocab, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (lexical, blstm) = match cfg.variant {
            Variant::Blstm => {
                (None, Some(Blstm::new(&mut store, "blstm", vocab.len(), cfg.blstm_hidden, cfg.blstm_layers, &mut rng)?))
            }
            _ => (Some(LexicalEncoder::new(&mut store, "lexical", cfg.lexical.clone(), vocab.len(), &mut rng)?), None),
        };
        let (acoustic, attention) = if cfg.variant.is_multimodal() {
            let enc = AcousticEncoder::new(&mut store, "acoustic", cfg.acoustic.clone(), &mut rng)?;
            let att = match cfg.fusion {
                FusionMode::Attention => Some(AttentionFusionParams::new(
                    &mut store,
                    "fusion",
                    cfg.lexical.hidden,
                    cfg.acoustic.lstm_hidden,
                    cfg.d_k,
                    &mut rng,
                )?),
                FusionMode::ForcedAlignment => None,
            };
            (Some(enc), att)
        } else {
            (None, None)
        };
        let head = Linear::new(&mut store, "head", cfg.lexical_dim() + cfg.fused_dim(), NUM_CLASSES, true, &mut rng)?;
        Ok(Self { cfg, vocab, store, lexical, blstm, acoustic, attention, head })
    }

    pub fn tokenize(&self, words: &[String]) -> Result<TokenizedUtterance> {
        tokenize(words, &self.vocab)
    }

    /// Per-subword lexical features `[n, lexical_dim]`.
    pub fn lexical_features(&self, ctx: &mut Ctx, tok: &TokenizedUtterance) -> Result<Var> {
        match (&self.lexical, &self.blstm) {
            (Some(enc), _) => enc.encode(ctx, tok, self.cfg.causal()),
            (None, Some(b)) => b.forward(ctx, &tok.subword_ids),
            (None, None) => Err(Error::Graph("model has no lexical encoder".into())),
        }
    }

    /// Subword-aligned acoustic rows `[n, lstm_hidden]`.
    pub fn fused_acoustics(&self, ctx: &mut Ctx, utt: &Utterance, tok: &TokenizedUtterance, h_l: Var) -> Result<Var> {
        let enc = self.acoustic.as_ref().ok_or_else(|| Error::Mode("variant has no acoustic path".into()))?;
        let (Some(frames), Some(bounds)) = (&utt.frames, &utt.boundaries) else {
            return Err(Error::Data(format!("utterance {} has no frames for the multimodal model", utt.id)));
        };
        let states = enc.encode(ctx, frames)?;
        match (&self.attention, self.cfg.fusion) {
            (Some(att), FusionMode::Attention) => Ok(att.fuse(ctx, h_l, states)?.0),
            _ => forced_alignment_fuse_var(&mut ctx.tape, states, bounds, tok, frames.num_frames(), enc.cfg.stride),
        }
    }

    /// Records the full graph and returns the `[n, 4]` class distributions.
    /// With `acoustics` false a multimodal model sees zero acoustic rows.
    pub fn graph(&self, ctx: &mut Ctx, utt: &Utterance, tok: &TokenizedUtterance, acoustics: bool) -> Result<Var> {
        let h_l = self.lexical_features(ctx, tok)?;
        let features = if self.cfg.variant.is_multimodal() {
            let h_a = if acoustics {
                self.fused_acoustics(ctx, utt, tok, h_l)?
            } else {
                ctx.tape.constant(Tensor::zeros(&[tok.len(), self.cfg.fused_dim()]))
            };
            ctx.tape.concat_cols(&[h_l, h_a])?
        } else {
            h_l
        };
        let features = ctx.dropout(features)?;
        let logits = self.head.forward(ctx, features)?;
        ctx.tape.softmax_rows(logits, None)
    }

    fn run(&self, utt: &Utterance, acoustics: bool) -> Result<Tensor> {
        let tok = self.tokenize(&utt.words)?;
        let mut ctx = Ctx::eval(&self.store);
        let probs = self.graph(&mut ctx, utt, &tok, acoustics)?;
        Ok(ctx.tape.value(probs).clone())
    }

    /// `[n, 4]` class distributions. A multimodal model requires frames and
    /// word boundaries.
    pub fn forward(&self, utt: &Utterance) -> Result<Tensor> {
        if self.cfg.variant.is_multimodal() && !utt.has_acoustics() {
            return Err(Error::Data(format!("utterance {} has no frames for the multimodal model", utt.id)));
        }
        self.run(utt, true)
    }

    /// Forward pass with the acoustic rows zeroed, for text-only input.
    pub fn forward_lexical_path(&self, utt: &Utterance) -> Result<Tensor> {
        self.run(utt, false)
    }

    /// Uses the acoustic path when the utterance has frames.
    pub fn forward_auto(&self, utt: &Utterance) -> Result<Tensor> {
        self.run(utt, utt.has_acoustics())
    }

    /// Streaming prediction over the whole utterance; row i depends only on
    /// subwords up to i and frames before the end of its word.
    pub fn predict_streaming(&self, utt: &Utterance) -> Result<Tensor> {
        if !self.cfg.causal() {
            return Err(Error::Mode(format!("variant {} is not causal", self.cfg.variant)));
        }
        self.forward(utt)
    }

    /// Word-by-word replay: word k's rows come from a pass over the first
    /// k words and their frames only.
    pub fn predict_streaming_incremental(&self, utt: &Utterance) -> Result<Tensor> {
        if !self.cfg.causal() {
            return Err(Error::Mode(format!("variant {} is not causal", self.cfg.variant)));
        }
        let mut rows = Vec::new();
        for k in 1..=utt.len() {
            let prefix = utt.prefix(k)?;
            let probs = self.forward(&prefix)?;
            let tok = self.tokenize(&prefix.words)?;
            for (i, &w) in tok.word_index.iter().enumerate() {
                if w == k - 1 {
                    rows.push(probs.row(i).to_vec());
                }
            }
        }
        Tensor::from_rows(&rows)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta: std::collections::BTreeMap<String, String> =
            self.cfg.to_config().iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        meta.insert(VOCAB_META_KEY.into(), self.vocab.tokens().join(" "));
        Checkpoint { meta, params: self.store.snapshot() }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut c = Config::default();
        for (k, v) in ckpt.meta.iter().filter(|(k, _)| k.as_str() != VOCAB_META_KEY) {
            c.set(k, v);
        }
        let tokens = ckpt
            .meta
            .get(VOCAB_META_KEY)
            .ok_or_else(|| Error::Data("checkpoint has no vocabulary".into()))?
            .split(' ')
            .map(String::from)
            .collect();
        let vocab = WordpieceVocab::from_tokens(tokens)?;
        let mut model = Self::new(ModelConfig::from_config(&c)?, vocab, 0)?;
        model.store.load_values(&ckpt.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Index of the largest entry of each row; ties go to the lower class id.
pub fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    (0..probs.rows())
        .map(|i| {
            probs.row(i).iter().enumerate().fold(0, |best, (j, &v)| if v > probs.row(i)[best] { j } else { best })
        })
        .collect()
}

pub fn word_predictions(probs: &Tensor, tok: &TokenizedUtterance) -> Result<Vec<PunctuationLabel>> {
    let labels: Vec<PunctuationLabel> =
        argmax_rows(probs).into_iter().map(|c| PunctuationLabel::from_id(c).expect("class id < 4")).collect();
    collapse_predictions(&labels, tok)
}

impl Punctuator for MuseModel {
    fn predict_words(&self, utt: &Utterance) -> Result<Vec<PunctuationLabel>> {
        let probs = self.forward_auto(utt)?;
        word_predictions(&probs, &self.tokenize(&utt.words)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SynthConfig};
    use crate::tokenizer::build_vocab;

    pub(crate) fn tiny(variant: Variant, fusion: FusionMode) -> (MuseModel, Vec<Utterance>) {
        let corpus = gen_synthetic(11, &SynthConfig { count: 4, ..Default::default() }).unwrap().utterances;
        let words: Vec<&String> = corpus.iter().flat_map(|u| &u.words).collect();
        let vocab = build_vocab(&words, 60).unwrap();
        let mut c = Config::default();
        c.set("model.variant", variant);
        c.set("fusion.mode", fusion);
        c.set("lexical.hidden", 8);
        c.set("lexical.heads", 2);
        c.set("lexical.layers", 1);
        c.set("acoustic.conv_out", 6);
        c.set("acoustic.lstm_hidden", 5);
        c.set("model.blstm_hidden", 4);
        let model = MuseModel::new(ModelConfig::from_config(&c).unwrap(), vocab, 3).unwrap();
        (model, corpus)
    }

    #[test]
    fn zero_head_is_uniform() {
        let (mut model, corpus) = tiny(Variant::Muse, FusionMode::ForcedAlignment);
        model.store.get_mut(model.head.weight).value = Tensor::zeros(&[13, 4]);
        model.store.get_mut(model.head.bias.unwrap()).value = Tensor::zeros(&[4]);
        let p = model.forward(&corpus[0]).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn multimodal_needs_frames() {
        let (model, corpus) = tiny(Variant::Muse, FusionMode::Attention);
        let mut u = corpus[0].clone();
        u.frames = None;
        u.boundaries = None;
        assert!(matches!(model.forward(&u), Err(Error::Data(_))));
        assert_eq!(model.forward_lexical_path(&u).unwrap().rows(), model.tokenize(&u.words).unwrap().len());
    }

    #[test]
    fn streaming_requires_causal_variant() {
        let (model, corpus) = tiny(Variant::Muse, FusionMode::ForcedAlignment);
        assert!(matches!(model.predict_streaming(&corpus[0]), Err(Error::Mode(_))));
        let mut c = model.cfg.to_config();
        c.set("model.variant", "stream");
        c.set("fusion.mode", "att");
        assert!(matches!(ModelConfig::from_config(&c), Err(Error::Mode(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        for variant in [Variant::Muse, Variant::Lex, Variant::Blstm, Variant::Stream] {
            let (model, corpus) = tiny(variant, FusionMode::ForcedAlignment);
            let bytes = model.to_checkpoint().to_bytes().unwrap();
            let back = MuseModel::from_checkpoint(&Checkpoint::read_from(&bytes[..]).unwrap()).unwrap();
            assert_eq!(back.to_checkpoint().to_bytes().unwrap(), bytes);
            assert_eq!(back.forward(&corpus[1]).unwrap(), model.forward(&corpus[1]).unwrap());
        }
    }
}
