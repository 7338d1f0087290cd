mod common;

use common::{attention_ref, matmul_ref, max_diff, rng, rows, softmax_ref, tiny_model};
use muse_core::data::Utterance;
use muse_core::fusion::FusionMode;
use muse_core::model::{train, MuseModel, TrainConfig};
use muse_core::numeric::layers::reverse_rows;
use muse_core::numeric::{Ctx, Tensor};
use muse_core::Error;
use proptest::prelude::*;

/// Encode, fuse, concatenate, and apply the head one step at a time.
fn composed(model: &MuseModel, u: &Utterance) -> Vec<Vec<f64>> {
    let tok = model.tokenize(&u.words).unwrap();
    let mut ctx = Ctx::eval(&model.store);
    let h_l = model.lexical_features(&mut ctx, &tok).unwrap();
    let h_l = rows(ctx.tape.value(h_l));
    let features: Vec<Vec<f64>> = match &model.acoustic {
        None => h_l,
        Some(enc) => {
            let s = enc.encode(&mut ctx, u.frames.as_ref().unwrap()).unwrap();
            let s = rows(ctx.tape.value(s));
            let h_a = match (&model.attention, model.cfg.fusion) {
                (Some(att), FusionMode::Attention) => {
                    let store = &model.store;
                    let keys = matmul_ref(&s, &rows(store.value(att.w_kappa)));
                    let q = match att.w_query {
                        Some(id) => matmul_ref(&h_l, &rows(store.value(id))),
                        None => h_l.clone(),
                    };
                    attention_ref(&q, &keys, &s, &|_, _| true)
                }
                _ => {
                    let bounds = &u.boundaries.as_ref().unwrap().0;
                    let stride = enc.cfg.stride;
                    tok.word_index.iter().map(|&w| s[(bounds[w].1 - 1) / stride].clone()).collect()
                }
            };
            h_l.iter().zip(h_a).map(|(a, b)| a.iter().copied().chain(b).collect()).collect()
        }
    };
    let w = rows(model.store.value(model.head.weight));
    let b = model.store.value(model.head.bias.unwrap()).data().to_vec();
    matmul_ref(&features, &w)
        .into_iter()
        .map(|r| softmax_ref(&r.iter().zip(&b).map(|(x, y)| x + y).collect::<Vec<_>>()))
        .collect()
}

#[test]
fn forward_equals_hand_composed_pipeline() {
    for (variant, fusion) in [("muse", "fa"), ("muse", "att"), ("lex", "fa"), ("blstm", "fa"), ("stream", "fa")] {
        for seed in 0..3 {
            let (model, corpus) = tiny_model(variant, fusion, seed);
            for u in &corpus {
                let got = rows(&model.forward(u).unwrap());
                assert!(max_diff(&got, &composed(&model, u)) < 1e-12, "{variant}/{fusion} seed {seed}");
            }
        }
    }
}

#[test]
fn blstm_streams_match_two_single_direction_passes() {
    let (model, corpus) = tiny_model("blstm", "fa", 2);
    let b = model.blstm.as_ref().unwrap();
    assert_eq!(b.layers.len(), 1);
    let (fwd, bwd) = &b.layers[0];
    for u in &corpus {
        let tok = model.tokenize(&u.words).unwrap();
        let mut ctx = Ctx::eval(&model.store);
        let both = b.forward(&mut ctx, &tok.subword_ids).unwrap();
        let table = ctx.param(b.embed);
        let x = ctx.tape.gather_rows(table, &tok.subword_ids).unwrap();
        let f = fwd.run(&mut ctx, x).unwrap();
        let rx = reverse_rows(&mut ctx.tape, x).unwrap();
        let r = bwd.run(&mut ctx, rx).unwrap();
        let r = rows(ctx.tape.value(r));
        let both = rows(ctx.tape.value(both));
        let h = b.hidden;
        let n = both.len();
        for i in 0..n {
            assert_eq!(&both[i][..h], ctx.tape.value(f).row(i));
            assert_eq!(&both[i][h..], &r[n - 1 - i][..]);
        }
    }
}

#[test]
fn zero_head_gives_uniform_rows() {
    for variant in ["muse", "lex", "blstm"] {
        let (mut model, corpus) = tiny_model(variant, "fa", 1);
        let shape = model.store.value(model.head.weight).shape().to_vec();
        model.store.get_mut(model.head.weight).value = Tensor::zeros(&shape);
        model.store.get_mut(model.head.bias.unwrap()).value = Tensor::zeros(&[4]);
        let p = model.forward(&corpus[0]).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.25));
    }
}

#[test]
fn lexical_variant_ignores_frames() {
    let (model, corpus) = tiny_model("lex", "fa", 3);
    let mut u = corpus[0].clone();
    let a = model.forward(&u).unwrap();
    let f = u.frames.as_mut().unwrap();
    f.frames = f.frames.map(|v| v * -7.0 + 1.0);
    assert_eq!(model.forward(&u).unwrap(), a);
    u.frames = None;
    u.boundaries = None;
    assert_eq!(model.forward(&u).unwrap(), a);
}

#[test]
fn head_width_is_lexical_plus_acoustic() {
    for (variant, fusion) in [("muse", "fa"), ("muse", "att"), ("lex", "fa"), ("blstm", "fa")] {
        let (model, _) = tiny_model(variant, fusion, 0);
        let d_in = model.store.value(model.head.weight).shape()[0];
        assert_eq!(d_in, model.cfg.lexical_dim() + model.cfg.fused_dim());
    }
}

#[test]
fn one_step_moves_every_trainable_block() {
    let (mut model, corpus) = tiny_model("muse", "att", 5);
    let before = model.store.snapshot();
    let frames_before: Vec<_> = corpus.iter().map(|u| u.frames.clone()).collect();
    let cfg = TrainConfig { lr: 1e-2, epochs: 1, batch_size: corpus.len(), ..Default::default() };
    let report = train(&mut model, &corpus, None, &cfg).unwrap();
    assert_eq!(report.steps, 1);
    let after = model.store.snapshot();
    for block in ["lexical.", "acoustic.", "fusion.", "head."] {
        let moved = before.iter().filter(|(k, _)| k.starts_with(block)).any(|(k, v)| after[k] != *v);
        assert!(moved, "no parameter under {block} changed");
    }
    let frames_after: Vec<_> = corpus.iter().map(|u| u.frames.clone()).collect();
    assert_eq!(frames_before, frames_after);
}

#[test]
fn streaming_replay_equals_full_pass() {
    for seed in 0..4 {
        let (model, corpus) = tiny_model("stream", "fa", seed);
        for u in &corpus {
            let full = model.predict_streaming(u).unwrap();
            let replay = model.predict_streaming_incremental(u).unwrap();
            assert_eq!(full, replay);
        }
    }
}

#[test]
fn single_word_stream_equals_forward() {
    let (model, corpus) = tiny_model("stream", "fa", 1);
    let u = corpus[0].prefix(1).unwrap();
    assert_eq!(model.predict_streaming(&u).unwrap(), model.forward(&u).unwrap());
}

#[test]
fn streaming_rows_ignore_suffix_replacement() {
    let mut r = rng(77);
    for seed in 0..3 {
        let (model, corpus) = tiny_model("stream", "fa", seed);
        for u in &corpus {
            let full = model.predict_streaming(u).unwrap();
            let tok = model.tokenize(&u.words).unwrap();
            for k in 1..=u.len() {
                let v = common::replace_suffix(u, k, &mut r);
                let other = model.predict_streaming(&v).unwrap();
                for (i, &w) in tok.word_index.iter().enumerate() {
                    if w < k {
                        assert_eq!(full.row(i), other.row(i), "seed {seed} k {k} row {i}");
                    }
                }
            }
        }
    }
}

#[test]
fn non_causal_variants_refuse_streaming() {
    for (variant, fusion) in [("muse", "fa"), ("muse", "att"), ("lex", "fa"), ("blstm", "fa")] {
        let (model, corpus) = tiny_model(variant, fusion, 0);
        assert!(matches!(model.predict_streaming(&corpus[0]), Err(Error::Mode(_))));
    }
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let run = || {
        let (mut model, corpus) = tiny_model("muse", "fa", 9);
        let cfg = TrainConfig { epochs: 2, batch_size: 2, seed: 4, ..Default::default() };
        train(&mut model, &corpus, None, &cfg).unwrap();
        model.to_checkpoint().to_bytes().unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn saved_checkpoint_predicts_identically() {
    let (model, corpus) = tiny_model("muse", "att", 2);
    let dir = std::env::temp_dir().join(format!("muse-model-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("m.ckpt");
    model.save(&path).unwrap();
    let back = MuseModel::load(&path).unwrap();
    for u in &corpus {
        assert_eq!(back.forward(u).unwrap(), model.forward(u).unwrap());
    }
    std::fs::remove_dir_all(&dir).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn output_rows_are_distributions(seed in 0u64..500, variant in prop::sample::select(vec!["muse", "lex", "blstm", "stream"])) {
        let (model, corpus) = tiny_model(variant, "fa", seed);
        for u in &corpus {
            let p = model.forward(u).unwrap();
            for i in 0..p.rows() {
                prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(p.row(i).iter().all(|&v| v >= 0.0));
            }
        }
    }
}
