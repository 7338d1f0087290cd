//! Transformer encoder over subword ids producing contextual features.
//!
//! Pre-norm blocks: `x + attn(ln(x))` then `x + ff(ln(x))`, with fixed
//! sinusoidal positions and a final layer norm. With `causal` set, position
//! i attends only to positions `<= i`, so every output row depends on its
//! prefix alone.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{Ctx, LayerNorm, Linear, ParamId, ParamStore, Tensor, Var};
use crate::tokenizer::TokenizedUtterance;

#[derive(Clone, Debug, PartialEq)]
pub struct LexicalConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub dropout: f64,
    pub max_len: usize,
}

impl Default for LexicalConfig {
    fn default() -> Self {
        Self { layers: 2, hidden: 64, heads: 4, ff_mult: 4, dropout: 0.1, max_len: 128 }
    }
}

impl LexicalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("lexical.layers must be >= 1".into()));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "lexical.hidden {} must be divisible by lexical.heads {}",
                self.hidden, self.heads
            )));
        }
        if self.ff_mult == 0 || self.max_len == 0 {
            return Err(Error::Config("lexical.ff_mult and lexical.max_len must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} must lie in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Additive attention mask: 0 where attention is allowed, -inf above the
/// diagonal when causal.
pub fn attention_mask(n: usize, causal: bool) -> Tensor {
    let mut m = Tensor::zeros(&[n, n]);
    if causal {
        for i in 0..n {
            for j in i + 1..n {
                m.data_mut()[i * n + j] = f64::NEG_INFINITY;
            }
        }
    }
    m
}

pub fn sinusoidal_positions(n: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n, dim]);
    for pos in 0..n {
        for i in 0..dim {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 / rate;
            t.data_mut()[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

/// Multi-head self-attention without input biases.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub out: Linear,
    pub heads: usize,
    pub hidden: usize,
}

impl SelfAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, hidden: usize, heads: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w_q: store.add_uniform(format!("{name}.w_q"), &[hidden, hidden], hidden, rng)?,
            w_k: store.add_uniform(format!("{name}.w_k"), &[hidden, hidden], hidden, rng)?,
            w_v: store.add_uniform(format!("{name}.w_v"), &[hidden, hidden], hidden, rng)?,
            out: Linear::new(store, &format!("{name}.out"), hidden, hidden, true, rng)?,
            heads,
            hidden,
        })
    }

    /// Returns the projected attention output and each head's weight matrix.
    pub fn forward(&self, ctx: &mut Ctx, x: Var, mask: &Tensor) -> Result<(Var, Vec<Var>)> {
        let d_head = self.hidden / self.heads;
        let (wq, wk, wv) = (ctx.param(self.w_q), ctx.param(self.w_k), ctx.param(self.w_v));
        let q = ctx.tape.matmul(x, wq)?;
        let k = ctx.tape.matmul(x, wk)?;
        let v = ctx.tape.matmul(x, wv)?;
        let scale = 1.0 / (d_head as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = ctx.tape.slice_cols(q, h * d_head, d_head)?;
            let kh = ctx.tape.slice_cols(k, h * d_head, d_head)?;
            let vh = ctx.tape.slice_cols(v, h * d_head, d_head)?;
            let kt = ctx.tape.transpose(kh)?;
            let logits = ctx.tape.matmul(qh, kt)?;
            let logits = ctx.tape.scale(logits, scale)?;
            let a = ctx.tape.softmax_rows(logits, Some(mask))?;
            weights.push(a);
            outs.push(ctx.tape.matmul(a, vh)?);
        }
        let cat = ctx.tape.concat_cols(&outs)?;
        Ok((self.out.forward(ctx, cat)?, weights))
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attn: SelfAttention,
    pub norm2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl EncoderLayer {
    fn forward(&self, ctx: &mut Ctx, x: Var, mask: &Tensor) -> Result<Var> {
        let h = self.norm1.forward(ctx, x)?;
        let (a, _) = self.attn.forward(ctx, h, mask)?;
        let a = ctx.dropout(a)?;
        let x = ctx.tape.add(x, a)?;
        let h = self.norm2.forward(ctx, x)?;
        let h = self.ff1.forward(ctx, h)?;
        let h = ctx.tape.relu(h)?;
        let h = self.ff2.forward(ctx, h)?;
        let h = ctx.dropout(h)?;
        ctx.tape.add(x, h)
    }
}

#[derive(Clone, Debug)]
pub struct LexicalEncoder {
    pub cfg: LexicalConfig,
    pub embed: ParamId,
    pub layers: Vec<EncoderLayer>,
    pub final_norm: LayerNorm,
}

impl LexicalEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cfg: LexicalConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let embed = store.add_uniform(format!("{name}.embed"), &[vocab_size, h], 1, rng)?;
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = format!("{name}.layer{l}");
                Ok(EncoderLayer {
                    norm1: LayerNorm::new(store, &format!("{p}.norm1"), h)?,
                    attn: SelfAttention::new(store, &format!("{p}.attn"), h, cfg.heads, rng)?,
                    norm2: LayerNorm::new(store, &format!("{p}.norm2"), h)?,
                    ff1: Linear::new(store, &format!("{p}.ff1"), h, h * cfg.ff_mult, true, rng)?,
                    ff2: Linear::new(store, &format!("{p}.ff2"), h * cfg.ff_mult, h, true, rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let final_norm = LayerNorm::new(store, &format!("{name}.final_norm"), h)?;
        Ok(Self { cfg, embed, layers, final_norm })
    }

    /// `[n, hidden]` subword features.
    pub fn encode(&self, ctx: &mut Ctx, tok: &TokenizedUtterance, causal: bool) -> Result<Var> {
        self.encode_ids(ctx, &tok.subword_ids, causal)
    }

    pub fn encode_ids(&self, ctx: &mut Ctx, ids: &[usize], causal: bool) -> Result<Var> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::Data("cannot encode an empty subword sequence".into()));
        }
        if n > self.cfg.max_len {
            return Err(Error::Length { len: n, max: self.cfg.max_len });
        }
        let table = ctx.param(self.embed);
        let x = ctx.tape.gather_rows(table, ids)?;
        let x = ctx.tape.add_const(x, &sinusoidal_positions(n, self.cfg.hidden))?;
        let mut x = ctx.dropout(x)?;
        let mask = attention_mask(n, causal);
        for layer in &self.layers {
            x = layer.forward(ctx, x, &mask)?;
        }
        self.final_norm.forward(ctx, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(seed: u64) -> (ParamStore, LexicalEncoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = LexicalConfig { hidden: 8, heads: 2, max_len: 16, ..Default::default() };
        let enc = LexicalEncoder::new(&mut store, "lex", cfg, 20, &mut rng).unwrap();
        (store, enc)
    }

    #[test]
    fn single_token_causal_equals_bidirectional() {
        let (store, enc) = encoder(1);
        let mut ctx = Ctx::eval(&store);
        let a = enc.encode_ids(&mut ctx, &[5], true).unwrap();
        let b = enc.encode_ids(&mut ctx, &[5], false).unwrap();
        assert_eq!(ctx.tape.value(a).shape(), &[1, 8]);
        assert_eq!(ctx.tape.value(a), ctx.tape.value(b));
    }

    #[test]
    fn causal_first_position_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let attn = SelfAttention::new(&mut store, "a", 4, 1, &mut rng).unwrap();
        let mut ctx = Ctx::eval(&store);
        let x = ctx.tape.constant(Tensor::new(vec![3, 4], (0..12).map(|v| v as f64 * 0.1).collect()).unwrap());
        let (_, w) = attn.forward(&mut ctx, x, &attention_mask(3, true)).unwrap();
        assert_eq!(ctx.tape.value(w[0]).row(0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn length_limits() {
        let (store, enc) = encoder(2);
        let mut ctx = Ctx::eval(&store);
        assert!(matches!(enc.encode_ids(&mut ctx, &[1; 17], false), Err(Error::Length { len: 17, max: 16 })));
        assert!(matches!(enc.encode_ids(&mut ctx, &[], false), Err(Error::Data(_))));
    }

    #[test]
    fn config_validation() {
        let bad = LexicalConfig { hidden: 10, heads: 4, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(LexicalConfig { layers: 0, ..Default::default() }.validate().is_err());
    }
}
