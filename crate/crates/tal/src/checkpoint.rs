//! Checkpoint files.
//!
//! A checkpoint is one JSON object:
//!
//! ```json
//! {
//!   "format": "tal-checkpoint",
//!   "version": 1,
//!   "kind": "probability-model" | "ranker",
//!   "meta": { ... },
//!   "tensors": [ { "name": "gru0.w_z", "rows": 9, "cols": 4, "data": [...] }, ... ]
//! }
//! ```
//!
//! Tensors are listed in parameter order with row-major data. Numbers are
//! written in shortest round-trip form, so loading restores every parameter
//! bit for bit.
//!
//! Probability-model meta: `input_dim`, `hidden`, `layers`, `horizon`.
//! Ranker meta: `variant`, `input_dim`, `hidden`, `max_video_length`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tal_core::network::{ModelParams, ModelShape};
use tal_core::optim::Parameters;
use tal_core::ranking::{variant_name, RankerParams, RankerVariant};

use crate::error::{Error, Result};
use crate::io::write_atomic;

const FORMAT: &str = "tal-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Tensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Container<M> {
    format: String,
    version: u32,
    kind: String,
    meta: M,
    tensors: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelMeta {
    input_dim: usize,
    hidden: usize,
    layers: usize,
    horizon: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RankerMeta {
    variant: String,
    input_dim: usize,
    hidden: usize,
    max_video_length: f64,
}

fn tensors<P: Parameters>(params: &P) -> Vec<Tensor> {
    params
        .views()
        .into_iter()
        .map(|v| Tensor { name: v.name, rows: v.rows, cols: v.cols, data: v.data.to_vec() })
        .collect()
}

fn fill<P: Parameters>(params: &mut P, tensors: Vec<Tensor>, path: &Path) -> Result<()> {
    let expected: Vec<(String, usize, usize)> = params.views().into_iter().map(|v| (v.name, v.rows, v.cols)).collect();
    if expected.len() != tensors.len() {
        return Err(Error::format(path, format!("expected {} tensors, found {}", expected.len(), tensors.len())));
    }
    for ((dst, (name, rows, cols)), t) in params.slices_mut().into_iter().zip(&expected).zip(tensors) {
        if &t.name != name || t.rows != *rows || t.cols != *cols || t.data.len() != rows * cols {
            return Err(Error::format(
                path,
                format!("tensor `{}` ({}x{}) does not match `{name}` ({rows}x{cols})", t.name, t.rows, t.cols),
            ));
        }
        dst.copy_from_slice(&t.data);
    }
    Ok(())
}

fn save<M: Serialize>(path: &Path, kind: &str, meta: M, tensors: Vec<Tensor>) -> Result<()> {
    let c = Container { format: FORMAT.into(), version: VERSION, kind: kind.into(), meta, tensors };
    write_atomic(path, serde_json::to_string(&c).expect("checkpoints always serialise").as_bytes())
}

fn load<M: for<'de> Deserialize<'de>>(path: &Path, kind: &str) -> Result<Container<M>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let c: Container<M> = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if c.format != FORMAT || c.version != VERSION {
        return Err(Error::format(path, format!("unsupported container {} v{}", c.format, c.version)));
    }
    if c.kind != kind {
        return Err(Error::format(path, format!("expected a {kind} checkpoint, found {}", c.kind)));
    }
    Ok(c)
}

pub fn save_model(path: &Path, params: &ModelParams) -> Result<()> {
    let s = params.shape();
    let meta = ModelMeta { input_dim: s.input_dim, hidden: s.hidden, layers: s.layers, horizon: s.horizon };
    save(path, "probability-model", meta, tensors(params))
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let c: Container<ModelMeta> = load(path, "probability-model")?;
    let shape = ModelShape { input_dim: c.meta.input_dim, hidden: c.meta.hidden, layers: c.meta.layers, horizon: c.meta.horizon };
    shape.check().map_err(|e| Error::format(path, e))?;
    let mut params = ModelParams::zeros(&shape);
    fill(&mut params, c.tensors, path)?;
    Ok(params)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankerCheckpoint {
    pub variant: RankerVariant,
    pub params: RankerParams,
    /// Longest training video in seconds; normalises the length feature.
    pub max_video_length: f64,
}

pub fn save_ranker(path: &Path, ck: &RankerCheckpoint) -> Result<()> {
    let meta = RankerMeta {
        variant: variant_name(ck.variant).into(),
        input_dim: ck.params.input_dim(),
        hidden: ck.params.hidden_dim(),
        max_video_length: ck.max_video_length,
    };
    save(path, "ranker", meta, tensors(&ck.params))
}

pub fn load_ranker(path: &Path) -> Result<RankerCheckpoint> {
    let c: Container<RankerMeta> = load(path, "ranker")?;
    let variant: RankerVariant = c.meta.variant.parse().map_err(|e: String| Error::format(path, e))?;
    if c.meta.input_dim != variant.feature_dim() {
        return Err(Error::format(path, format!("{} ranker with input dimension {}", c.meta.variant, c.meta.input_dim)));
    }
    let mut params = RankerParams::zeros(c.meta.input_dim, c.meta.hidden);
    fill(&mut params, c.tensors, path)?;
    Ok(RankerCheckpoint { variant, params, max_video_length: c.meta.max_video_length })
}
