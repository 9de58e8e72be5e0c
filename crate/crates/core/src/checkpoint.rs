//! Checkpoint files.
//!
//! A checkpoint is one JSON document:
//!
//! ```text
//! {"meta":{...},"tensors":{"policy.l1.w":{"shape":[64,48],"data":[...]},...},"checksum":123456789}
//! ```
//!
//! `checksum` is the CRC-32 of the compact serialization of `{"meta":..,"tensors":..}`
//! (keys sorted, shortest round-trip float formatting). Loading recomputes it
//! from the parsed values, so any edited number or key is rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Dense, Mlp, MlpParams, ValueParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub d: usize,
    pub seed: u64,
    pub train_step: u64,
    pub config_hash: String,
    pub input_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Body {
    meta: CheckpointMeta,
    tensors: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    meta: CheckpointMeta,
    tensors: BTreeMap<String, Tensor>,
    checksum: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub policy: MlpParams,
    pub value: ValueParams,
}

fn put_mlp(out: &mut BTreeMap<String, Tensor>, prefix: &str, net: &Mlp) {
    for (name, layer) in [("l1", &net.l1), ("l2", &net.l2), ("out", &net.out)] {
        out.insert(
            format!("{prefix}.{name}.w"),
            Tensor {
                shape: vec![layer.rows, layer.cols],
                data: layer.w.clone(),
            },
        );
        out.insert(
            format!("{prefix}.{name}.b"),
            Tensor {
                shape: vec![layer.rows],
                data: layer.b.clone(),
            },
        );
    }
}

fn take(tensors: &mut BTreeMap<String, Tensor>, key: &str) -> Result<Tensor> {
    let t = tensors
        .remove(key)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))?;
    if t.shape.iter().product::<usize>() != t.data.len() {
        return Err(Error::Checkpoint(format!("tensor `{key}` shape does not match its data")));
    }
    Ok(t)
}

fn take_dense(tensors: &mut BTreeMap<String, Tensor>, key: &str) -> Result<Dense> {
    let w = take(tensors, &format!("{key}.w"))?;
    let b = take(tensors, &format!("{key}.b"))?;
    if w.shape.len() != 2 || b.shape != [w.shape[0]] {
        return Err(Error::Checkpoint(format!("layer `{key}` has inconsistent shapes")));
    }
    Ok(Dense {
        rows: w.shape[0],
        cols: w.shape[1],
        w: w.data,
        b: b.data,
    })
}

fn take_mlp(tensors: &mut BTreeMap<String, Tensor>, prefix: &str) -> Result<Mlp> {
    let net = Mlp {
        l1: take_dense(tensors, &format!("{prefix}.l1"))?,
        l2: take_dense(tensors, &format!("{prefix}.l2"))?,
        out: take_dense(tensors, &format!("{prefix}.out"))?,
    };
    if net.l2.cols != net.l1.rows || net.out.cols != net.l2.rows {
        return Err(Error::Checkpoint(format!("network `{prefix}` layers do not chain")));
    }
    Ok(net)
}

impl Checkpoint {
    fn body(&self) -> Body {
        let mut tensors = BTreeMap::new();
        put_mlp(&mut tensors, "policy", &self.policy.net);
        tensors.insert(
            "policy.log_std".to_owned(),
            Tensor {
                shape: vec![self.policy.log_std.len()],
                data: self.policy.log_std.clone(),
            },
        );
        put_mlp(&mut tensors, "value", &self.value.net);
        Body {
            meta: self.meta.clone(),
            tensors,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let body = self.body();
        let canonical = serde_json::to_string(&body)?;
        let doc = Document {
            meta: body.meta,
            tensors: body.tensors,
            checksum: crc32fast::hash(canonical.as_bytes()),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let body = Body {
            meta: doc.meta,
            tensors: doc.tensors,
        };
        let computed = crc32fast::hash(serde_json::to_string(&body)?.as_bytes());
        if computed != doc.checksum {
            return Err(Error::Checksum {
                stored: doc.checksum,
                computed,
            });
        }
        let Body { meta, mut tensors } = body;
        let net = take_mlp(&mut tensors, "policy")?;
        let log_std = take(&mut tensors, "policy.log_std")?.data;
        let value = ValueParams {
            net: take_mlp(&mut tensors, "value")?,
        };
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
        }
        let d = meta.d;
        if net.input_dim() != 3 * d || net.output_dim() != d + 2 || log_std.len() != d + 2 {
            return Err(Error::Checkpoint(format!("policy shapes do not match d = {d}")));
        }
        if value.net.input_dim() != 3 * d || value.net.output_dim() != 1 {
            return Err(Error::Checkpoint(format!("value shapes do not match d = {d}")));
        }
        Ok(Self {
            meta,
            policy: MlpParams { net, log_std },
            value,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
