//! Aligning frame-rate acoustic states to the subword sequence.
//!
//! Two mechanisms: gathering the state at each word's last frame using
//! forced-alignment boundaries, or single-head scaled dot-product attention
//! with subword features as queries and acoustic states as keys and values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Ctx, ParamId, ParamStore, Tape, Tensor, Var};
use crate::tokenizer::TokenizedUtterance;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionMode {
    #[serde(rename = "fa")]
    ForcedAlignment,
    #[serde(rename = "att")]
    Attention,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ForcedAlignment => "fa",
            Self::Attention => "att",
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fa" => Ok(Self::ForcedAlignment),
            "att" => Ok(Self::Attention),
            other => Err(Error::Config(format!("unknown fusion mode {other:?} (expected fa or att)"))),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-word frame spans `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WordBoundaries(pub Vec<(usize, usize)>);

impl WordBoundaries {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks that spans are non-empty, ordered, non-overlapping, and end
    /// within `frames`.
    pub fn validate(&self, frames: usize) -> Result<()> {
        let mut prev_end = 0;
        for (w, &(start, end)) in self.0.iter().enumerate() {
            if start >= end {
                return Err(Error::Alignment(format!("word {w} has empty span [{start}, {end})")));
            }
            if start < prev_end {
                return Err(Error::Alignment(format!("word {w} span [{start}, {end}) overlaps the previous word")));
            }
            if end > frames {
                return Err(Error::Alignment(format!("word {w} ends at frame {end} but only {frames} frames exist")));
            }
            prev_end = end;
        }
        Ok(())
    }

    /// Spans of the first `words` words.
    pub fn prefix(&self, words: usize) -> WordBoundaries {
        WordBoundaries(self.0[..words.min(self.0.len())].to_vec())
    }
}

/// Acoustic rows aligned one-to-one with subwords.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionOutput {
    pub h_a: Tensor,
    pub mode: FusionMode,
}

/// State row selected for every subword: the last frame of its word,
/// divided by the encoder stride.
pub fn forced_alignment_rows(
    bounds: &WordBoundaries,
    tok: &TokenizedUtterance,
    frames: usize,
    stride: usize,
) -> Result<Vec<usize>> {
    if bounds.len() != tok.num_words {
        return Err(Error::Data(format!(
            "{} word boundaries for an utterance of {} words",
            bounds.len(),
            tok.num_words
        )));
    }
    bounds.validate(frames)?;
    Ok(tok.word_index.iter().map(|&w| (bounds.0[w].1 - 1) / stride).collect())
}

/// Forced-alignment fusion on the tape. `frames` is the frame count before
/// striding.
pub fn forced_alignment_fuse_var(
    tape: &mut Tape,
    states: Var,
    bounds: &WordBoundaries,
    tok: &TokenizedUtterance,
    frames: usize,
    stride: usize,
) -> Result<Var> {
    let rows = forced_alignment_rows(bounds, tok, frames, stride)?;
    tape.gather_rows(states, &rows)
}

/// Forced-alignment fusion over stride-1 states `[T, d]`.
pub fn forced_alignment_fuse(states: &Tensor, bounds: &WordBoundaries, tok: &TokenizedUtterance) -> Result<FusionOutput> {
    let mut tape = Tape::new();
    let s = tape.constant(states.clone());
    let out = forced_alignment_fuse_var(&mut tape, s, bounds, tok, states.rows(), 1)?;
    Ok(FusionOutput { h_a: tape.value(out).clone(), mode: FusionMode::ForcedAlignment })
}

/// `softmax(Q K^T / sqrt(d)) V`, returning the output and the weights.
pub fn scaled_dot_attention_var(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let d = tape.value(k).cols();
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, kt)?;
    let logits = tape.scale(logits, 1.0 / (d as f64).sqrt())?;
    let weights = tape.softmax_rows(logits, None)?;
    Ok((tape.matmul(weights, v)?, weights))
}

pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (q, k, v) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let (out, _) = scaled_dot_attention_var(&mut tape, q, k, v)?;
    Ok(tape.value(out).clone())
}

/// Key projection `W^κ` and, when the lexical width differs from `d_k`, a
/// bias-free query projection.
#[derive(Clone, Debug)]
pub struct AttentionFusionParams {
    pub w_kappa: ParamId,
    pub w_query: Option<ParamId>,
    pub d_k: usize,
}

impl AttentionFusionParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        lexical_hidden: usize,
        lstm_hidden: usize,
        d_k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if d_k == 0 {
            return Err(Error::Config("fusion.d_k must be >= 1".into()));
        }
        let w_kappa = store.add_uniform(format!("{name}.w_kappa"), &[lstm_hidden, d_k], lstm_hidden, rng)?;
        let w_query = if lexical_hidden != d_k {
            Some(store.add_uniform(format!("{name}.w_query"), &[lexical_hidden, d_k], lexical_hidden, rng)?)
        } else {
            None
        };
        Ok(Self { w_kappa, w_query, d_k })
    }

    /// Returns the fused rows `[n, lstm_hidden]` and the attention weights.
    pub fn fuse(&self, ctx: &mut Ctx, h_l: Var, states: Var) -> Result<(Var, Var)> {
        let wk = ctx.param(self.w_kappa);
        let keys = ctx.tape.matmul(states, wk)?;
        let query = match self.w_query {
            Some(id) => {
                let wq = ctx.param(id);
                ctx.tape.matmul(h_l, wq)?
            }
            None => h_l,
        };
        scaled_dot_attention_var(&mut ctx.tape, query, keys, states)
    }
}

/// Attention fusion over plain tensors.
pub fn attention_fuse(h_l: &Tensor, states: &Tensor, store: &ParamStore, params: &AttentionFusionParams) -> Result<FusionOutput> {
    let mut ctx = Ctx::eval(store);
    let h = ctx.tape.constant(h_l.clone());
    let s = ctx.tape.constant(states.clone());
    let (out, _) = params.fuse(&mut ctx, h, s)?;
    Ok(FusionOutput { h_a: ctx.tape.value(out).clone(), mode: FusionMode::Attention })
}
