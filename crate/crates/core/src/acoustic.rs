//! Frame-level acoustic encoder: 1-D convolution, ReLU, and a
//! left-to-right LSTM over precomputed frame features.
//!
//! The features themselves are inputs, never parameters, so training cannot
//! modify them.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::numeric::{conv_out_len, Ctx, LstmWeights, Padding, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    Pitch,
    Melspec,
    Wav2vec,
    Synthetic,
}

impl FeatureKind {
    /// Fixed dimensionality, or `None` when configurable.
    pub fn dim(self) -> Option<usize> {
        match self {
            FeatureKind::Pitch => Some(4),
            FeatureKind::Melspec => Some(80),
            FeatureKind::Wav2vec => Some(512),
            FeatureKind::Synthetic => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Pitch => "pitch",
            FeatureKind::Melspec => "melspec",
            FeatureKind::Wav2vec => "wav2vec",
            FeatureKind::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pitch" => Ok(Self::Pitch),
            "melspec" => Ok(Self::Melspec),
            "wav2vec" => Ok(Self::Wav2vec),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(Error::Config(format!("unknown feature kind {other:?}"))),
        }
    }
}

pub const DEFAULT_FRAME_SHIFT_MS: f64 = 10.0;

/// A `[T, d]` matrix of per-frame features.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatures {
    pub kind: FeatureKind,
    pub frames: Tensor,
    pub frame_shift_ms: f64,
}

impl FrameFeatures {
    pub fn new(kind: FeatureKind, frames: Tensor, frame_shift_ms: f64) -> Result<Self> {
        let (_, d) = frames.dims2()?;
        if let Some(expected) = kind.dim() {
            if d != expected {
                return Err(shape_err!("{kind} features have {expected} dims, got {d}"));
            }
        }
        if !frames.all_finite() {
            return Err(Error::Numeric("frame features contain non-finite values".into()));
        }
        Ok(Self { kind, frames, frame_shift_ms })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    /// First `t` frames.
    pub fn prefix(&self, t: usize) -> Result<Self> {
        let d = self.dim();
        let t = t.min(self.num_frames());
        let frames = Tensor::new(vec![t, d], self.frames.data()[..t * d].to_vec())?;
        Ok(Self { kind: self.kind, frames, frame_shift_ms: self.frame_shift_ms })
    }

    /// `#feat <kind> <T> <d> <frame_shift_ms>` then T rows of d decimals.
    pub fn to_text(&self) -> String {
        let (t, d) = (self.num_frames(), self.dim());
        let mut s = format!("#feat {} {} {} {}\n", self.kind, t, d, self.frame_shift_ms);
        for r in 0..t {
            let row: Vec<String> = self.frames.row(r).iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |line: usize, msg: String| Error::Parse { line, msg };
        let header = lines.next().ok_or_else(|| bad(1, "missing #feat header".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "#feat" {
            return Err(bad(1, format!("malformed header {header:?}")));
        }
        let kind: FeatureKind = fields[1].parse().map_err(|e: Error| bad(1, e.to_string()))?;
        let t: usize = fields[2].parse().map_err(|_| bad(1, format!("bad frame count {:?}", fields[2])))?;
        let d: usize = fields[3].parse().map_err(|_| bad(1, format!("bad dimension {:?}", fields[3])))?;
        let shift: f64 = fields[4].parse().map_err(|_| bad(1, format!("bad frame shift {:?}", fields[4])))?;
        if t == 0 {
            return Err(Error::EmptyInput("feature file declares zero frames".into()));
        }
        if let Some(expected) = kind.dim() {
            if d != expected {
                return Err(bad(1, format!("{kind} features must have {expected} dims, header says {d}")));
            }
        }
        let mut data = Vec::with_capacity(t * d);
        for r in 0..t {
            let line_no = r + 2;
            let row = lines.next().ok_or_else(|| bad(line_no, format!("expected {t} frames, found {r}")))?;
            let vals = row
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|_| bad(line_no, format!("frame {r}: bad value {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != d {
                return Err(bad(line_no, format!("frame {r}: {} values, expected {d}", vals.len())));
            }
            if let Some(v) = vals.iter().find(|v| !v.is_finite()) {
                return Err(bad(line_no, format!("frame {r}: non-finite value {v}")));
            }
            data.extend(vals);
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(bad(t + 2, format!("more than the declared {t} frames")));
        }
        Self::new(kind, Tensor::new(vec![t, d], data)?, shift)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AcousticConfig {
    pub input_dim: usize,
    pub conv_kernel: usize,
    pub conv_out: usize,
    pub stride: usize,
    pub lstm_hidden: usize,
    pub padding: Padding,
}

impl Default for AcousticConfig {
    fn default() -> Self {
        Self { input_dim: 4, conv_kernel: 5, conv_out: 32, stride: 1, lstm_hidden: 32, padding: Padding::Same }
    }
}

impl AcousticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Config(format!("conv_kernel {} must be odd", self.conv_kernel)));
        }
        if !(self.stride == 1 || self.stride == 2) {
            return Err(Error::Config(format!("stride {} must be 1 or 2", self.stride)));
        }
        if self.input_dim == 0 || self.conv_out == 0 || self.lstm_hidden == 0 {
            return Err(Error::Config("acoustic dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn output_len(&self, frames: usize) -> usize {
        conv_out_len(frames, self.stride)
    }
}

#[derive(Clone, Debug)]
pub struct AcousticEncoder {
    pub cfg: AcousticConfig,
    pub kernel: ParamId,
    pub conv_bias: ParamId,
    pub lstm: LstmWeights,
}

impl AcousticEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: AcousticConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let fan_in = cfg.conv_kernel * cfg.input_dim;
        let kernel =
            store.add_uniform(format!("{name}.conv.kernel"), &[cfg.conv_kernel, cfg.input_dim, cfg.conv_out], fan_in, rng)?;
        let conv_bias = store.add_uniform(format!("{name}.conv.bias"), &[cfg.conv_out], fan_in, rng)?;
        let lstm = LstmWeights::new(store, &format!("{name}.lstm"), cfg.conv_out, cfg.lstm_hidden, rng)?;
        Ok(Self { cfg, kernel, conv_bias, lstm })
    }

    /// Task-specific frame states `[ceil(T / stride), lstm_hidden]`.
    pub fn encode(&self, ctx: &mut Ctx, features: &FrameFeatures) -> Result<Var> {
        let (t, d) = features.frames.dims2()?;
        if t == 0 {
            return Err(Error::EmptyInput("no frames".into()));
        }
        if d != self.cfg.input_dim {
            return Err(shape_err!("acoustic encoder expects {} feature dims, got {}", self.cfg.input_dim, d));
        }
        let x = ctx.tape.constant(features.frames.clone());
        let k = ctx.param(self.kernel);
        let b = ctx.param(self.conv_bias);
        let h = ctx.tape.conv1d(x, k, self.cfg.stride, self.cfg.padding)?;
        let h = ctx.tape.add_row(h, b)?;
        let h = ctx.tape.relu(h)?;
        self.lstm.run(ctx, h)
    }
}
