//! `ALM-CKPT v1` checkpoints and tensor digests.
//!
//! Layout, one record per line:
//!
//! ```text
//! ALM-CKPT v1
//! provenance <json>
//! tokenizer <n>
//! <n token lines>
//! lm <json config>
//! <tensor name> <dims...>\t<hex floats>      (one line per tensor)
//! projection none | projection <json spec>
//! <tensor name> <dims...>\t<hex floats>      (one line per layer tensor)
//! end
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::ArrayViewD;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::train::{TrainLog, TrainPlan};
use crate::error::{Error, Result};
use crate::hexfloat;
use crate::lm::{LmConfig, LmParams, Tokenizer};
use crate::metrics::MetricScores;
use crate::projection::{ProjectionParams, ProjectionSpec};

pub const CHECKPOINT_MAGIC: &str = "ALM-CKPT v1";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// System message every prompt of this model starts with.
    pub system: String,
    /// Training plans applied so far, oldest first, with their logs.
    pub plans: Vec<TrainPlan>,
    pub logs: Vec<TrainLog>,
    pub metrics: Option<MetricScores>,
    /// Content hashes of the artifacts this checkpoint was built from.
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tokenizer: Tokenizer,
    pub lm: LmParams,
    pub projection: Option<(ProjectionSpec, ProjectionParams)>,
    pub provenance: Provenance,
}

/// Shape-only view of an [`LmConfig`]; the seed is irrelevant once weights
/// exist.
#[derive(Serialize, Deserialize)]
struct Shape {
    vocab_size: usize,
    model_dim: usize,
    layers: usize,
    heads: usize,
    context_len: usize,
}

fn tensor_line(name: &str, t: &ArrayViewD<'_, f64>) -> String {
    let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
    format!("{name} {}\t{}", dims.join(" "), hexfloat::format_row(t.iter().copied()))
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn projection_tensors(p: &ProjectionParams) -> Vec<(String, ArrayViewD<'_, f64>)> {
    let mut out = Vec::new();
    for (i, l) in p.layers.iter().enumerate() {
        out.push((format!("layers.{i}.weight"), l.weight.view().into_dyn()));
        out.push((format!("layers.{i}.bias"), l.bias.view().into_dyn()));
    }
    out
}

fn projection_tensors_mut(p: &mut ProjectionParams) -> Vec<(String, ndarray::ArrayViewMutD<'_, f64>)> {
    let mut out = Vec::new();
    for (i, l) in p.layers.iter_mut().enumerate() {
        out.push((format!("layers.{i}.weight"), l.weight.view_mut().into_dyn()));
        out.push((format!("layers.{i}.bias"), l.bias.view_mut().into_dyn()));
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| format_err(format!("checkpoint truncated: expected {what}")))
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (n, line) = self.next(key)?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(|rest| (n, rest))
            .ok_or_else(|| format_err(format!("line {n}: expected `{key}`")))
    }

    fn fill(&mut self, tensors: Vec<(String, ndarray::ArrayViewMutD<'_, f64>)>) -> Result<()> {
        for (name, mut t) in tensors {
            let (n, line) = self.next(&name)?;
            let (head, data) = line.split_once('\t').ok_or_else(|| format_err(format!("line {n}: missing tensor data")))?;
            let mut parts = head.split(' ');
            if parts.next() != Some(name.as_str()) {
                return Err(format_err(format!("line {n}: expected tensor `{name}`")));
            }
            let dims: Vec<usize> = parts.map(|d| d.parse().map_err(|_| format_err(format!("line {n}: bad dimension")))).collect::<Result<_>>()?;
            if dims != t.shape() {
                return Err(format_err(format!("line {n}: tensor `{name}` has shape {dims:?}, expected {:?}", t.shape())));
            }
            let values = hexfloat::parse_row(data, t.len()).map_err(|e| format_err(format!("line {n}: {e}")))?;
            for (dst, v) in t.iter_mut().zip(values) {
                *dst = v;
            }
        }
        Ok(())
    }
}

impl Checkpoint {
    pub fn to_text(&self) -> Result<String> {
        let mut out = vec![CHECKPOINT_MAGIC.to_owned(), format!("provenance {}", serde_json::to_string(&self.provenance)?)];
        let tokens = self.tokenizer.to_text();
        out.push(format!("tokenizer {}", self.tokenizer.vocab_size()));
        out.extend(tokens.lines().map(str::to_owned));
        let c = self.lm.config(0);
        let shape = Shape { vocab_size: c.vocab_size, model_dim: c.model_dim, layers: c.layers, heads: c.heads, context_len: c.context_len };
        out.push(format!("lm {}", serde_json::to_string(&shape)?));
        out.extend(self.lm.tensors().iter().map(|(n, t)| tensor_line(n, t)));
        match &self.projection {
            None => out.push("projection none".into()),
            Some((spec, params)) => {
                out.push(format!("projection {}", serde_json::to_string(spec)?));
                out.extend(projection_tensors(params).iter().map(|(n, t)| tensor_line(n, t)));
            }
        }
        out.push("end".into());
        let mut text = out.join("\n");
        text.push('\n');
        Ok(text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines { inner: text.lines().enumerate() };
        let (_, magic) = lines.next("header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(format_err(format!("expected `{CHECKPOINT_MAGIC}` header, found `{magic}`")));
        }
        let (n, prov) = lines.keyed("provenance")?;
        let provenance: Provenance = serde_json::from_str(prov).map_err(|e| format_err(format!("line {n}: {e}")))?;
        let (n, count) = lines.keyed("tokenizer")?;
        let count: usize = count.parse().map_err(|_| format_err(format!("line {n}: bad token count")))?;
        let mut vocab = String::new();
        for _ in 0..count {
            vocab.push_str(lines.next("token")?.1);
            vocab.push('\n');
        }
        let tokenizer = Tokenizer::from_text(&vocab)?;
        let (n, shape) = lines.keyed("lm")?;
        let s: Shape = serde_json::from_str(shape).map_err(|e| format_err(format!("line {n}: {e}")))?;
        if s.vocab_size != tokenizer.vocab_size() {
            return Err(format_err("model vocabulary differs from tokenizer"));
        }
        let config = LmConfig { vocab_size: s.vocab_size, model_dim: s.model_dim, layers: s.layers, heads: s.heads, context_len: s.context_len, seed: 0 };
        let mut lm = LmParams::init(&config).map_err(|e| format_err(e.to_string()))?;
        lines.fill(lm.tensors_mut())?;
        let (n, proj) = lines.keyed("projection")?;
        let projection = if proj == "none" {
            None
        } else {
            let spec: ProjectionSpec = serde_json::from_str(proj).map_err(|e| format_err(format!("line {n}: {e}")))?;
            let mut params = ProjectionParams::init(&spec, 0).map_err(|e| format_err(e.to_string()))?;
            lines.fill(projection_tensors_mut(&mut params))?;
            Some((spec, params))
        };
        let (n, end) = lines.next("end")?;
        if end != "end" {
            return Err(format_err(format!("line {n}: expected `end`")));
        }
        Ok(Self { tokenizer, lm, projection, provenance })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of raw bytes, hex encoded.
pub fn digest_bytes(bytes: &[u8]) -> String {
    to_hex(&Sha256::digest(bytes))
}

/// SHA-256 over the little-endian bit patterns of a tensor's elements.
pub fn digest_tensor(t: &ArrayViewD<'_, f64>) -> String {
    let mut h = Sha256::new();
    for v in t.iter() {
        h.update(v.to_bits().to_le_bytes());
    }
    to_hex(&h.finalize())
}

/// Per-tensor digests of a model, keyed by tensor name.
pub fn lm_digests(lm: &LmParams) -> BTreeMap<String, String> {
    lm.tensors().iter().map(|(n, t)| (n.clone(), digest_tensor(t))).collect()
}

pub fn projection_digest(p: &ProjectionParams) -> String {
    let mut h = Sha256::new();
    for v in p.values() {
        h.update(v.to_bits().to_le_bytes());
    }
    to_hex(&h.finalize())
}
