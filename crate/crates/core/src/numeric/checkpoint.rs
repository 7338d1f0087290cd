//! Text checkpoint container.
//!
//! ```text
//! MUSE-CKPT-1
//! meta <key> <value...>
//! param <name> <ndim> <d1> .. <dk>
//! <v1> <v2> ... <vn>
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so save/load is
//! exact. Parameters are written in name order.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &str = "MUSE-CKPT-1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{MAGIC}")?;
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::Data(format!("meta entry {k:?} cannot be serialized")));
            }
            writeln!(w, "meta {k} {v}")?;
        }
        for (name, t) in &self.params {
            if name.contains(char::is_whitespace) {
                return Err(Error::Data(format!("parameter name {name:?} contains whitespace")));
            }
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            writeln!(w, "param {name} {} {}", dims.len(), dims.join(" "))?;
            let vals: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", vals.join(" "))?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let bad = |line: usize, msg: &str| Error::Parse { line: line + 1, msg: msg.to_string() };
        let header = match lines.next() {
            Some((_, l)) => l?,
            None => String::new(),
        };
        if header != MAGIC {
            return Err(bad(0, "missing MUSE-CKPT-1 header"));
        }
        let mut ckpt = Checkpoint::default();
        while let Some((no, line)) = lines.next() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("param ") {
                let mut it = rest.split_whitespace();
                let name = it.next().ok_or_else(|| bad(no, "param without name"))?;
                let ndim: usize =
                    it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(no, "bad dimension count"))?;
                let shape = it
                    .map(|s| s.parse::<usize>().map_err(|_| bad(no, "bad dimension")))
                    .collect::<Result<Vec<_>>>()?;
                if shape.len() != ndim {
                    return Err(bad(no, "dimension count does not match"));
                }
                let (vno, vals) = lines.next().ok_or_else(|| bad(no, "missing values line"))?;
                let data = vals?
                    .split_whitespace()
                    .map(|s| s.parse::<f64>().map_err(|_| bad(vno, "bad value")))
                    .collect::<Result<Vec<_>>>()?;
                let t = Tensor::new(shape, data).map_err(|e| bad(vno, &e.to_string()))?;
                ckpt.params.insert(name.to_string(), t);
            } else {
                return Err(bad(no, "unrecognized line"));
            }
        }
        Ok(ckpt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut c = Checkpoint::default();
        c.meta.insert("variant".into(), "muse".into());
        c.params.insert(
            "a.w".into(),
            Tensor::new(vec![2, 2], vec![0.1, -1.0 / 3.0, 1e-300, 12345.678]).unwrap(),
        );
        c.params.insert("b".into(), Tensor::scalar(std::f64::consts::PI));
        let bytes = c.to_bytes().unwrap();
        assert!(bytes.starts_with(b"MUSE-CKPT-1\n"));
        let back = Checkpoint::read_from(&bytes[..]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_header_and_shapes() {
        assert!(Checkpoint::read_from(&b"NOPE\n"[..]).is_err());
        let text = "MUSE-CKPT-1\nparam w 2 2 2\n1 2 3\n";
        assert!(matches!(Checkpoint::read_from(text.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }
}
