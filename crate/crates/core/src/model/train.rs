//! Training loop, batch loss, and the masked-token warm-start.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MuseModel;
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::label::NUM_CLASSES;
use crate::numeric::{Adam, Ctx, Var};
use crate::tokenizer::{project_labels_to_subwords, TokenizedUtterance, PAD_ID};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Weight each class by inverse training frequency.
    pub class_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 2e-3, epochs: 20, batch_size: 8, seed: 0, class_weights: false }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train.epochs and train.batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-subword training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Dev macro-F1 after each epoch, when a dev set was given.
    pub dev_macro_f1: Vec<f64>,
    /// Epoch (0-based) whose weights were kept.
    pub best_epoch: Option<usize>,
    pub steps: usize,
}

struct Example<'a> {
    utt: &'a Utterance,
    tok: TokenizedUtterance,
    targets: Vec<usize>,
}

fn prepare<'a>(model: &MuseModel, corpus: &'a [Utterance]) -> Result<Vec<Example<'a>>> {
    corpus
        .iter()
        .map(|utt| {
            utt.validate()?;
            let tok = model.tokenize(&utt.words)?;
            let targets = project_labels_to_subwords(&utt.labels, &tok)?.into_iter().map(|l| l.id()).collect();
            Ok(Example { utt, tok, targets })
        })
        .collect()
}

fn class_weight_table(examples: &[Example]) -> [f64; NUM_CLASSES] {
    let mut counts = [0usize; NUM_CLASSES];
    for ex in examples {
        for &t in &ex.targets {
            counts[t] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    counts.map(|c| if c == 0 { 0.0 } else { total as f64 / (NUM_CLASSES * c) as f64 })
}

/// Records the batch on `ctx` and returns the loss node, the mean
/// cross-entropy over all subword positions, and the position count.
fn record_batch(
    model: &MuseModel,
    ctx: &mut Ctx,
    batch: &[&Example],
    weights: Option<&[f64; NUM_CLASSES]>,
) -> Result<(Var, usize)> {
    let n_total: usize = batch.iter().map(|ex| ex.targets.len()).sum();
    let norm_total: f64 = match weights {
        Some(w) => batch.iter().flat_map(|ex| &ex.targets).map(|&t| w[t]).sum(),
        None => n_total as f64,
    };
    let mut total: Option<Var> = None;
    for ex in batch {
        let probs = model.graph(ctx, ex.utt, &ex.tok, ex.utt.has_acoustics())?;
        let pos_weights: Option<Vec<f64>> = weights.map(|w| ex.targets.iter().map(|&t| w[t]).collect());
        let norm: f64 = pos_weights.as_ref().map_or(ex.targets.len() as f64, |w| w.iter().sum());
        if norm <= 0.0 {
            continue;
        }
        let ce = ctx.tape.cross_entropy(probs, &ex.targets, pos_weights.as_deref())?;
        let part = ctx.tape.scale(ce, norm / norm_total)?;
        total = Some(match total {
            Some(t) => ctx.tape.add(t, part)?,
            None => part,
        });
    }
    let total = total.ok_or_else(|| Error::Data("batch has no weighted positions".into()))?;
    Ok((total, n_total))
}

/// Mean cross-entropy over every subword position of `batch`, recorded on
/// `ctx`. Utterances with frames use the acoustic path.
pub fn batch_loss(model: &MuseModel, ctx: &mut Ctx, batch: &[Utterance]) -> Result<Var> {
    let examples = prepare(model, batch)?;
    let refs: Vec<&Example> = examples.iter().collect();
    Ok(record_batch(model, ctx, &refs, None)?.0)
}

/// Evaluation-mode value of [`batch_loss`].
pub fn loss(model: &MuseModel, batch: &[Utterance]) -> Result<f64> {
    let mut ctx = Ctx::eval(&model.store);
    let l = batch_loss(model, &mut ctx, batch)?;
    Ok(ctx.tape.value(l).item())
}

/// Adam training with shuffled mini-batches. With a dev set the weights of
/// the epoch with the best dev macro-F1 are kept.
pub fn train(model: &mut MuseModel, corpus: &[Utterance], dev: Option<&[Utterance]>, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    let examples = prepare(model, corpus)?;
    let weights = cfg.class_weights.then(|| class_weight_table(&examples));
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = Adam::new(cfg.lr);
    let mut report = TrainReport::default();
    let mut best: Option<(f64, std::collections::BTreeMap<String, crate::numeric::Tensor>)> = None;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let p = model.cfg.lexical.dropout;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            model.store.zero_grad();
            let mut ctx = Ctx::train(&model.store, p, &mut dropout_rng);
            let step = report.steps;
            let (l, n) = record_batch(model, &mut ctx, &batch, weights.as_ref()).map_err(|e| match e {
                Error::Numeric(msg) => Error::Training { step, msg },
                e => e,
            })?;
            let tape = ctx.into_tape();
            let value = tape.value(l).item();
            if !value.is_finite() {
                return Err(Error::Training { step, msg: format!("loss is {value}") });
            }
            tape.backward(l, Some(&mut model.store))?;
            adam.step(&mut model.store);
            report.steps += 1;
            sum += value * n as f64;
            count += n;
        }
        report.epoch_losses.push(sum / count as f64);
        if let Some(dev) = dev {
            let f1 = evaluate(model, dev)?.macro_f1();
            report.dev_macro_f1.push(f1);
            if best.as_ref().map_or(true, |(b, _)| f1 > *b) {
                best = Some((f1, model.store.snapshot()));
                report.best_epoch = Some(epoch);
            }
        }
    }
    match best {
        Some((_, snapshot)) => model.store.load_values(&snapshot)?,
        None => report.best_epoch = Some(cfg.epochs - 1),
    }
    Ok(report)
}

/// Masked-token warm-start of the transformer encoder on unlabeled text.
/// About 15% of subwords (at least one) are replaced by `[PAD]` and predicted
/// through the transposed embedding table. Returns per-epoch mean loss.
pub fn pretrain_mlm(model: &mut MuseModel, texts: &[Vec<String>], epochs: usize, lr: f64, seed: u64) -> Result<Vec<f64>> {
    let Some(encoder) = model.lexical.clone() else {
        return Err(Error::Mode("masked-token warm-start needs the transformer encoder".into()));
    };
    let toks: Vec<TokenizedUtterance> = texts.iter().map(|w| model.tokenize(w)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(lr);
    let mut losses = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..toks.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for &i in &order {
            let tok = &toks[i];
            let mut masked: Vec<usize> = (0..tok.len()).filter(|_| rng.gen_bool(0.15)).collect();
            if masked.is_empty() {
                masked.push(rng.gen_range(0..tok.len()));
            }
            let mut ids = tok.subword_ids.clone();
            for &m in &masked {
                ids[m] = PAD_ID;
            }
            let targets: Vec<usize> = masked.iter().map(|&m| tok.subword_ids[m]).collect();
            model.store.zero_grad();
            let mut ctx = Ctx::eval(&model.store);
            let h = encoder.encode_ids(&mut ctx, &ids, model.cfg.causal())?;
            let h = ctx.tape.gather_rows(h, &masked)?;
            let table = ctx.param(encoder.embed);
            let table_t = ctx.tape.transpose(table)?;
            let logits = ctx.tape.matmul(h, table_t)?;
            let probs = ctx.tape.softmax_rows(logits, None)?;
            let l = ctx.tape.cross_entropy(probs, &targets, None)?;
            let tape = ctx.into_tape();
            let value = tape.value(l).item();
            if !value.is_finite() {
                return Err(Error::Training { step: epoch * toks.len(), msg: format!("warm-start loss is {value}") });
            }
            tape.backward(l, Some(&mut model.store))?;
            adam.step(&mut model.store);
            sum += value;
        }
        losses.push(sum / toks.len().max(1) as f64);
    }
    Ok(losses)
}
