//! Parameter checkpoints.
//!
//! A checkpoint is one JSON document:
//!
//! ```json
//! {
//!   "format": "hilbert-ot-tensors/1",
//!   "meta": { ... free-form ... },
//!   "tensors": [ { "name": "layer0.weight", "shape": [16, 128], "data": [ ... ] } ]
//! }
//! ```
//!
//! `data` is row-major and has exactly `shape[0] * shape[1]` entries. Floats
//! are written with shortest round-trip formatting, so save/load is lossless.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "hilbert-ot-tensors/1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    #[serde(default)]
    meta: serde_json::Value,
    tensors: Vec<TensorRecord>,
}

pub fn write_tensors<W: Write>(out: W, tensors: &[NamedTensor], meta: serde_json::Value) -> Result<()> {
    let doc = Document {
        format: FORMAT.into(),
        meta,
        tensors: tensors
            .iter()
            .map(|t| TensorRecord {
                name: t.name.clone(),
                shape: [t.value.nrows(), t.value.ncols()],
                data: t.value.iter().copied().collect(),
            })
            .collect(),
    };
    serde_json::to_writer(out, &doc)?;
    Ok(())
}

pub fn read_tensors<R: Read>(input: R) -> Result<(Vec<NamedTensor>, serde_json::Value)> {
    let doc: Document = serde_json::from_reader(input)?;
    if doc.format != FORMAT {
        return Err(Error::Parse(format!(
            "unsupported checkpoint format `{}` (expected `{FORMAT}`)",
            doc.format
        )));
    }
    let tensors = doc
        .tensors
        .into_iter()
        .map(|r| {
            let value = Array2::from_shape_vec((r.shape[0], r.shape[1]), r.data).map_err(|_| {
                Error::Parse(format!("tensor `{}` does not match its shape {:?}", r.name, r.shape))
            })?;
            if value.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("checkpoint tensor `{}`", r.name)));
            }
            Ok(NamedTensor { name: r.name, value })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((tensors, doc.meta))
}

pub fn save_tensors(path: &Path, tensors: &[NamedTensor], meta: serde_json::Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensors(&mut w, tensors, meta)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<(Vec<NamedTensor>, serde_json::Value)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    read_tensors(BufReader::new(File::open(path)?))
}
