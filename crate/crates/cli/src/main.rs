mod args;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use sha2::{Digest, Sha256};

use muse_core::config::Config;
use muse_core::data::{
    augment_with_nbest, class_stats, filter_min_length, gen_synthetic, read_corpus, read_nbest, write_corpus,
    write_nbest, AugmentOptions, CueProfile, SynthConfig, Utterance,
};
use muse_core::eval::{evaluate, evaluate_on_asr, EvalReport};
use muse_core::label::{normalize_word, render_punctuated, PunctuationLabel};
use muse_core::model::{pretrain_mlm, train, word_predictions, ModelConfig, MuseModel, TrainConfig};
use muse_core::numeric::gradcheck::{run_registry, REL_TOL};
use muse_core::tokenizer::build_vocab;

use args::{Cli, Command, Common};

const GRADCHECK_SEEDS: usize = 10;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Synth(a) => synth(&a),
        Command::Stats(a) => stats(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a, false),
        Command::EvalAsr(a) => eval_cmd(&a, true),
        Command::Augment(a) => augment(&a),
        Command::Predict(a) => predict(&a),
        Command::Gradcheck(a) => gradcheck(&a),
    }
}

/// Config file, then `--set` overrides, then dedicated flags.
fn effective_config(a: &Common, seed_key: &str) -> Result<Config> {
    let mut c = match &a.config {
        Some(p) => Config::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => Config::default(),
    };
    for pair in &a.set {
        c.set_pair(pair)?;
    }
    if let Some(s) = a.seed {
        c.set(seed_key, s);
    }
    if let Some(v) = &a.variant {
        c.set("model.variant", v);
    }
    if let Some(f) = &a.fusion {
        c.set("fusion.mode", f);
    }
    if let Some(f) = &a.features {
        c.set("acoustic.features", f);
    }
    if let Some(n) = a.n_best {
        c.set("augment.n", n);
    }
    if let Some(e) = a.epochs {
        c.set("train.epochs", e);
    }
    c.check_known()?;
    Ok(c)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).with_context(|| format!("reading {}", path.display()))?))
}

/// Seed, config hash, and versions of a run; no timestamps so reruns match.
fn write_manifest(command: &str, seed: u64, cfg: &Config, inputs: &[&Path], dest: Option<&Path>) -> Result<()> {
    let inputs: serde_json::Map<String, serde_json::Value> = inputs
        .iter()
        .map(|p| Ok((p.display().to_string(), serde_json::Value::String(file_hash(p)?))))
        .collect::<Result<_>>()?;
    let manifest = serde_json::json!({
        "command": command,
        "seed": seed,
        "config_sha256": sha256_hex(cfg.to_text().as_bytes()),
        "config": cfg.to_text(),
        "inputs_sha256": inputs,
        "versions": { "muse": env!("CARGO_PKG_VERSION") },
    });
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    match dest {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => eprint!("{text}"),
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    match p {
        Some(p) => Ok(p),
        None => bail!("--{flag} is required"),
    }
}

fn load_corpus(path: &Path) -> Result<Vec<Utterance>> {
    read_corpus(path).with_context(|| format!("reading corpus {}", path.display()))
}

fn synth(a: &Common) -> Result<ExitCode> {
    let c = effective_config(a, "synth.seed")?;
    let out = require(&a.out, "out")?;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        count: c.get("synth.count", d.count)?,
        profile: c.get::<CueProfile>("synth.profile", d.profile)?,
        features: c.get("acoustic.features", d.features)?,
        synthetic_dim: c.get("acoustic.synthetic_dim", d.synthetic_dim)?,
        question_rate: c.get("synth.question_rate", d.question_rate)?,
        max_sentences: c.get("synth.max_sentences", d.max_sentences)?,
        nbest: c.get("synth.nbest", d.nbest)?,
        sub_rate: c.get("synth.sub_rate", d.sub_rate)?,
        del_rate: c.get("synth.del_rate", d.del_rate)?,
        ins_rate: c.get("synth.ins_rate", d.ins_rate)?,
    };
    let seed = c.get("synth.seed", 0u64)?;
    let corpus = gen_synthetic(seed, &cfg)?;
    std::fs::create_dir_all(out)?;
    write_corpus(&out.join("corpus.jsonl"), &corpus.utterances)?;
    write_nbest(&out.join("nbest.jsonl"), &corpus.nbest)?;
    std::fs::write(out.join("tally.json"), serde_json::to_string(&corpus.tally)? + "\n")?;
    write_manifest("synth", seed, &c, &[], Some(&out.join("manifest.json")))?;
    println!(
        "wrote {} utterances ({} words, profile {}) to {}",
        corpus.utterances.len(),
        corpus.tally.total(),
        cfg.profile.as_str(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn stats(a: &Common) -> Result<ExitCode> {
    let c = effective_config(a, "train.seed")?;
    let path = require(&a.corpus, "corpus")?;
    let corpus = filter_min_length(load_corpus(path)?, c.get("data.min_words", 1usize)?);
    let dist = class_stats(&corpus);
    let pct = dist.percentages();
    let mut text = format!("{:<10} {:>8} {:>8}\n", "class", "count", "percent");
    let mut jsonl = String::new();
    for l in PunctuationLabel::ALL {
        text.push_str(&format!("{:<10} {:>8} {:>8.2}\n", l.as_str(), dist.count(l), pct[l.id()]));
        jsonl.push_str(&serde_json::json!({"class": l, "count": dist.count(l), "percent": pct[l.id()]}).to_string());
        jsonl.push('\n');
    }
    text.push_str(&format!("{:<10} {:>8}\n", "total", dist.total()));
    print!("{text}{jsonl}");
    if let Some(out) = &a.out {
        std::fs::write(out, &jsonl)?;
    }
    write_manifest("stats", 0, &c, &[path], a.out.as_deref().map(|o| sibling(o, ".manifest.json")).as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(a: &Common) -> Result<ExitCode> {
    let c = effective_config(a, "train.seed")?;
    let corpus_path = require(&a.corpus, "corpus")?;
    let out = require(&a.out, "out")?;
    let mut corpus = filter_min_length(load_corpus(corpus_path)?, c.get("data.min_words", 1usize)?);
    if corpus.is_empty() {
        bail!("no utterances left to train on");
    }
    let dev_fraction: f64 = c.get("eval.dev_fraction", 0.0)?;
    if !(0.0..1.0).contains(&dev_fraction) {
        bail!("eval.dev_fraction must lie in [0, 1)");
    }
    let dev_len = (corpus.len() as f64 * dev_fraction).round() as usize;
    let dev = corpus.split_off(corpus.len() - dev_len.min(corpus.len() - 1));
    let mut inputs = vec![corpus_path];
    if let Some(nb) = &a.nbest {
        let opts = AugmentOptions {
            n: c.get("augment.n", 1usize)?,
            reuse_boundaries: c.get("augment.reuse_boundaries", false)?,
        };
        let (aug, report) = augment_with_nbest(&corpus, &read_nbest(nb)?, opts)?;
        eprintln!("augmented: +{} hypotheses, {} utterances without n-best", report.added, report.missing);
        corpus = aug;
        inputs.push(nb);
    }
    let words: Vec<&String> = corpus.iter().flat_map(|u| &u.words).collect();
    let vocab = build_vocab(&words, c.get("vocab.size", 200usize)?)?;
    let seed = c.get("train.seed", 0u64)?;
    let d = TrainConfig::default();
    let tcfg = TrainConfig {
        lr: c.get("train.lr", d.lr)?,
        epochs: c.get("train.epochs", d.epochs)?,
        batch_size: c.get("train.batch_size", d.batch_size)?,
        seed,
        class_weights: c.get("train.class_weights", d.class_weights)?,
    };
    let mut model = MuseModel::new(ModelConfig::from_config(&c)?, vocab, seed)?;
    let mlm_epochs = c.get("train.mlm_epochs", 0usize)?;
    if mlm_epochs > 0 {
        let texts: Vec<Vec<String>> = corpus.iter().map(|u| u.words.clone()).collect();
        let losses = pretrain_mlm(&mut model, &texts, mlm_epochs, tcfg.lr, seed)?;
        eprintln!("warm-start loss {:.4} -> {:.4}", losses[0], losses[losses.len() - 1]);
    }
    let report = train(&mut model, &corpus, (!dev.is_empty()).then_some(&dev[..]), &tcfg)?;
    model.save(out)?;
    model.vocab.save(&sibling(out, ".vocab"))?;
    let mut log = String::new();
    for (e, l) in report.epoch_losses.iter().enumerate() {
        let dev_f1 = report.dev_macro_f1.get(e);
        log.push_str(&serde_json::json!({"epoch": e + 1, "loss": l, "dev_macro_f1": dev_f1}).to_string());
        log.push('\n');
    }
    std::fs::write(sibling(out, ".log.jsonl"), &log)?;
    write_manifest("train", seed, &c, &inputs, Some(&sibling(out, ".manifest.json")))?;
    println!(
        "trained {} on {} utterances: loss {:.4} -> {:.4}, kept epoch {}; checkpoint {}",
        model.cfg.variant,
        corpus.len(),
        report.epoch_losses[0],
        report.epoch_losses[report.epoch_losses.len() - 1],
        report.best_epoch.map_or(0, |e| e + 1),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_model(a: &Common) -> Result<(MuseModel, &Path)> {
    let p = require(&a.checkpoint, "checkpoint")?;
    Ok((MuseModel::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?, p))
}

fn emit_report(report: &EvalReport, out: Option<&Path>) -> Result<()> {
    let jsonl = report.to_jsonl()?;
    println!("{report}");
    print!("{jsonl}");
    if let Some(out) = out {
        std::fs::write(out, &jsonl)?;
    }
    Ok(())
}

fn eval_cmd(a: &Common, asr: bool) -> Result<ExitCode> {
    let c = effective_config(a, "train.seed")?;
    let (model, ckpt) = load_model(a)?;
    let corpus_path = require(&a.corpus, "corpus")?;
    let corpus = filter_min_length(load_corpus(corpus_path)?, c.get("data.min_words", 1usize)?);
    let mut inputs = vec![ckpt, corpus_path];
    let report = if asr {
        let nb = require(&a.nbest, "nbest")?;
        inputs.push(nb);
        evaluate_on_asr(&model, &corpus, &read_nbest(nb)?)?
    } else {
        evaluate(&model, &corpus)?
    };
    emit_report(&report, a.out.as_deref())?;
    let name = if asr { "eval-asr" } else { "eval" };
    let seed = c.get("train.seed", 0u64)?;
    write_manifest(name, seed, &c, &inputs, a.out.as_deref().map(|o| sibling(o, ".manifest.json")).as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn augment(a: &Common) -> Result<ExitCode> {
    let c = effective_config(a, "train.seed")?;
    let corpus_path = require(&a.corpus, "corpus")?;
    let nb = require(&a.nbest, "nbest")?;
    let out = require(&a.out, "out")?;
    let opts = AugmentOptions {
        n: c.get("augment.n", 1usize)?,
        reuse_boundaries: c.get("augment.reuse_boundaries", false)?,
    };
    let corpus = load_corpus(corpus_path)?;
    let (aug, report) = augment_with_nbest(&corpus, &read_nbest(nb)?, opts)?;
    write_corpus(out, &aug)?;
    write_manifest("augment", 0, &c, &[corpus_path, nb], Some(&sibling(out, ".manifest.json")))?;
    println!(
        "{} utterances -> {} (added {}, missing n-best {}, empty {})",
        corpus.len(),
        aug.len(),
        report.added,
        report.missing,
        report.empty
    );
    Ok(ExitCode::SUCCESS)
}

fn predict(a: &Common) -> Result<ExitCode> {
    let c = effective_config(a, "train.seed")?;
    let (model, ckpt) = load_model(a)?;
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let words: Vec<String> =
            line?.split_whitespace().map(normalize_word).filter(|w| !w.is_empty()).collect();
        if words.is_empty() {
            writeln!(stdout)?;
            continue;
        }
        let utt = Utterance::text_only("stdin", words.clone(), vec![PunctuationLabel::NoPunct; words.len()])?;
        let probs = model.forward_lexical_path(&utt)?;
        let labels = word_predictions(&probs, &model.tokenize(&words)?)?;
        writeln!(stdout, "{}", render_punctuated(&words, &labels))?;
    }
    write_manifest("predict", c.get("train.seed", 0u64)?, &c, &[ckpt], None)?;
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: &Common) -> Result<ExitCode> {
    let c = effective_config(a, "train.seed")?;
    let base = a.seed.unwrap_or(1000);
    let reports = run_registry(base, GRADCHECK_SEEDS)?;
    let mut jsonl = String::new();
    for r in &reports {
        println!("{:<24} worst rel err {:.3e}  {}", r.name, r.worst_rel_err, if r.passed { "ok" } else { "FAIL" });
        jsonl.push_str(
            &serde_json::json!({"op": r.name, "worst_rel_err": r.worst_rel_err, "passed": r.passed}).to_string(),
        );
        jsonl.push('\n');
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!(
        "{} ops, {} seeds each, tolerance {:e}: {}",
        reports.len(),
        GRADCHECK_SEEDS,
        REL_TOL,
        if failed == 0 { "all passed".to_string() } else { format!("{failed} failed") }
    );
    if let Some(out) = &a.out {
        std::fs::write(out, &jsonl)?;
    }
    write_manifest("gradcheck", base, &c, &[], a.out.as_deref().map(|o| sibling(o, ".manifest.json")).as_deref())?;
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
