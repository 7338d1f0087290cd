#![allow(dead_code)]

use muse_core::config::Config;
use muse_core::data::{gen_synthetic, SynthConfig, Utterance};
use muse_core::fusion::WordBoundaries;
use muse_core::model::{ModelConfig, MuseModel};
use muse_core::numeric::Tensor;
use muse_core::tokenizer::{build_vocab, TokenizedUtterance};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

pub fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len(), "row count");
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len(), "column count");
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

pub fn matmul_ref(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn softmax_ref(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|&v| if v.is_finite() { (v - m).exp() } else { 0.0 }).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Nested-loop `softmax(q k^T / sqrt(d)) v` with an optional allowed-pair
/// predicate.
pub fn attention_ref(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    allowed: &dyn Fn(usize, usize) -> bool,
) -> Vec<Vec<f64>> {
    let d = k[0].len() as f64;
    let mut out = Vec::with_capacity(q.len());
    for (i, qi) in q.iter().enumerate() {
        let mut logits = Vec::with_capacity(k.len());
        for (j, kj) in k.iter().enumerate() {
            if allowed(i, j) {
                let dot: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                logits.push(dot / d.sqrt());
            } else {
                logits.push(f64::NEG_INFINITY);
            }
        }
        let w = softmax_ref(&logits);
        let mut row = vec![0.0; v[0].len()];
        for (j, wj) in w.iter().enumerate() {
            for (c, r) in row.iter_mut().enumerate() {
                *r += wj * v[j][c];
            }
        }
        out.push(row);
    }
    out
}

pub fn tiny_config(variant: &str, fusion: &str) -> Config {
    let mut c = Config::default();
    c.set("model.variant", variant);
    c.set("fusion.mode", fusion);
    c.set("lexical.hidden", 8);
    c.set("lexical.heads", 2);
    c.set("lexical.layers", 1);
    c.set("acoustic.conv_out", 6);
    c.set("acoustic.lstm_hidden", 5);
    c.set("model.blstm_hidden", 4);
    c.set("model.blstm_layers", 1);
    c
}

/// A small model with a vocabulary built from a few synthetic utterances.
pub fn tiny_model(variant: &str, fusion: &str, seed: u64) -> (MuseModel, Vec<Utterance>) {
    let corpus = gen_synthetic(seed, &SynthConfig { count: 6, ..Default::default() }).unwrap().utterances;
    let all: Vec<&String> = corpus.iter().flat_map(|u| &u.words).collect();
    let vocab = build_vocab(&all, 60).unwrap();
    let cfg = ModelConfig::from_config(&tiny_config(variant, fusion)).unwrap();
    (MuseModel::new(cfg, vocab, seed).unwrap(), corpus)
}

/// Keeps the first `k` words of `u` with their frames up to the end of word
/// `k - 1`, then appends fresh random words and frames.
pub fn replace_suffix(u: &Utterance, k: usize, rng: &mut impl Rng) -> Utterance {
    use muse_core::acoustic::FrameFeatures;
    use muse_core::label::PunctuationLabel;

    let pool = ["hello", "wonder", "zebra", "quietly", "ok", "tomorrow", "x"];
    let bounds = u.boundaries.as_ref().unwrap();
    let frames = u.frames.as_ref().unwrap();
    let cut = bounds.0[k - 1].1;
    let d = frames.dim();
    let mut words = u.words[..k].to_vec();
    let mut labels = u.labels[..k].to_vec();
    let mut spans = bounds.0[..k].to_vec();
    let mut data = frames.frames.data()[..cut * d].to_vec();
    let mut t = cut;
    for _ in 0..rng.gen_range(0..5) {
        words.push(pool[rng.gen_range(0..pool.len())].to_string());
        labels.push(PunctuationLabel::from_id(rng.gen_range(0..4)).unwrap());
        let len = rng.gen_range(1..6);
        spans.push((t, t + len));
        t += len;
    }
    t += rng.gen_range(0..4);
    while data.len() < t * d {
        data.push(rng.gen_range(-3.0..3.0));
    }
    let frames = FrameFeatures::new(frames.kind, Tensor::new(vec![t, d], data).unwrap(), frames.frame_shift_ms).unwrap();
    Utterance { id: u.id.clone(), words, labels, frames: Some(frames), boundaries: Some(WordBoundaries(spans)) }
}

pub fn tok_from_pieces(pieces: &[usize]) -> TokenizedUtterance {
    let mut t = TokenizedUtterance { subword_ids: vec![], word_index: vec![], is_word_final: vec![], num_words: pieces.len() };
    for (w, &p) in pieces.iter().enumerate() {
        for i in 0..p {
            t.subword_ids.push(2 + i);
            t.word_index.push(w);
            t.is_word_final.push(i + 1 == p);
        }
    }
    t
}

/// Random word spans over at most `t_max` frames with gaps allowed.
pub fn random_instance(r: &mut impl Rng, t_max: usize, m_max: usize) -> (usize, WordBoundaries, Vec<usize>) {
    let m = r.gen_range(1..=m_max);
    let t = r.gen_range(m..=t_max.max(m));
    let mut cuts: Vec<usize> = (1..t).collect();
    cuts.shuffle(r);
    let mut ends: Vec<usize> = cuts[..m - 1].to_vec();
    ends.sort();
    ends.push(t);
    let mut spans = Vec::with_capacity(m);
    let mut start = 0;
    for &end in &ends {
        let s = r.gen_range(start..end);
        spans.push((s, end));
        start = end;
    }
    let pieces = (0..m).map(|_| r.gen_range(1..=3)).collect();
    (t, WordBoundaries(spans), pieces)
}

/// Loop over words, take state `end - 1`, repeat it for each piece.
pub fn fa_oracle(states: &Tensor, bounds: &WordBoundaries, pieces: &[usize]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for (w, &(_, end)) in bounds.0.iter().enumerate() {
        for _ in 0..pieces[w] {
            out.push(states.row(end - 1).to_vec());
        }
    }
    out
}
