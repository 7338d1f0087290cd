//! Flat `section.key = value` experiment configuration.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Every key the toolkit reads.
pub const KNOWN_KEYS: &[&str] = &[
    "acoustic.conv_kernel",
    "acoustic.conv_out",
    "acoustic.features",
    "acoustic.lstm_hidden",
    "acoustic.stride",
    "acoustic.synthetic_dim",
    "augment.n",
    "augment.reuse_boundaries",
    "data.min_words",
    "eval.dev_fraction",
    "fusion.d_k",
    "fusion.mode",
    "lexical.dropout",
    "lexical.ff_mult",
    "lexical.heads",
    "lexical.hidden",
    "lexical.layers",
    "lexical.max_len",
    "model.blstm_hidden",
    "model.blstm_layers",
    "model.variant",
    "synth.count",
    "synth.del_rate",
    "synth.ins_rate",
    "synth.max_sentences",
    "synth.nbest",
    "synth.profile",
    "synth.question_rate",
    "synth.seed",
    "synth.sub_rate",
    "train.batch_size",
    "train.class_weights",
    "train.epochs",
    "train.lr",
    "train.mlm_epochs",
    "train.seed",
    "vocab.size",
];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    /// Parses `key = value` lines. `#` starts a comment; blank lines are
    /// skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected key = value, got {line:?}") })?;
            let (k, v) = (k.trim(), v.trim());
            if !k.contains('.') || k.contains(char::is_whitespace) {
                return Err(Error::Parse { line: i + 1, msg: format!("key {k:?} must look like section.key") });
            }
            cfg.values.insert(k.to_string(), v.to_string());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) =
            pair.split_once('=').ok_or_else(|| Error::Config(format!("override {pair:?} must be key=value")))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Parsed value of `key`, or `default` when absent.
    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| Error::Config(format!("{key} = {v:?}: {e}"))),
        }
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| v.parse().map_err(|e| Error::Config(format!("{key} = {v:?}: {e}"))))
            .transpose()
    }

    pub fn check_known(&self) -> Result<()> {
        match self.values.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown config key {k:?}"))),
            None => Ok(()),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Canonical text: sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
