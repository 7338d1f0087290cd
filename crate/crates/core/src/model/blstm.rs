use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::layers::reverse_rows;
use crate::numeric::{Ctx, LstmWeights, ParamId, ParamStore, Var};

/// Stacked bidirectional LSTM over subword embeddings learned from scratch.
#[derive(Clone, Debug)]
pub struct Blstm {
    pub embed: ParamId,
    /// Forward and backward cell per layer.
    pub layers: Vec<(LstmWeights, LstmWeights)>,
    pub hidden: usize,
}

impl Blstm {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let embed = store.add_uniform(format!("{name}.embed"), &[vocab_size, hidden], 1, rng)?;
        let layers = (0..layers)
            .map(|l| {
                let d_in = if l == 0 { hidden } else { 2 * hidden };
                Ok((
                    LstmWeights::new(store, &format!("{name}.layer{l}.fwd"), d_in, hidden, rng)?,
                    LstmWeights::new(store, &format!("{name}.layer{l}.bwd"), d_in, hidden, rng)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { embed, layers, hidden })
    }

    /// `[n, 2 * hidden]`: forward states then re-reversed backward states.
    pub fn forward(&self, ctx: &mut Ctx, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Data("cannot encode an empty subword sequence".into()));
        }
        let table = ctx.param(self.embed);
        let mut x = ctx.tape.gather_rows(table, ids)?;
        for (i, (fwd, bwd)) in self.layers.iter().enumerate() {
            if i > 0 {
                x = ctx.dropout(x)?;
            }
            let f = fwd.run(ctx, x)?;
            let rev = reverse_rows(&mut ctx.tape, x)?;
            let b = bwd.run(ctx, rev)?;
            let b = reverse_rows(&mut ctx.tape, b)?;
            x = ctx.tape.concat_cols(&[f, b])?;
        }
        Ok(x)
    }
}
