//! Attention maps, informativeness scores and focal indices captured from
//! one forward pass, exported as self-describing JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::tensor::Tensor;

pub const RECORD_FORMAT: &str = "fgst-attention-record";
pub const RECORD_VERSION: u32 = 1;

/// A named dense array with labelled axes, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub name: String,
    pub axes: Vec<String>,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl AttentionMap {
    pub fn from_tensor(name: &str, axes: &[&str], t: &Tensor) -> Self {
        debug_assert_eq!(axes.len(), t.ndim());
        AttentionMap {
            name: name.to_string(),
            axes: axes.iter().map(|a| a.to_string()).collect(),
            shape: t.shape().to_vec(),
            data: t.to_vec(),
        }
    }

    /// Innermost rows.
    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(*self.shape.last().unwrap_or(&1))
    }

    /// Largest `|Σ row − 1|` over all rows.
    pub fn max_row_deviation(&self) -> f64 {
        self.rows()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Maps captured in one network layer (1-based index across both stages).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub layer: usize,
    pub stage: usize,
    pub maps: Vec<AttentionMap>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub format: String,
    pub version: u32,
    pub layout: String,
    pub logits: Vec<f64>,
    pub layers: Vec<LayerRecord>,
    /// Joint informativeness `[joint, frame]`.
    pub scores: Option<AttentionMap>,
    /// `focal_indices[t]` lists the selected joints of frame `t`, best first.
    pub focal_indices: Option<Vec<Vec<usize>>>,
}

impl AttentionRecord {
    pub fn new(layout: &str) -> Self {
        AttentionRecord {
            format: RECORD_FORMAT.to_string(),
            version: RECORD_VERSION,
            layout: layout.to_string(),
            logits: Vec::new(),
            layers: Vec::new(),
            scores: None,
            focal_indices: None,
        }
    }

    pub fn map(&self, layer: usize, name: &str) -> Option<&AttentionMap> {
        self.layers
            .iter()
            .find(|l| l.layer == layer)?
            .maps
            .iter()
            .find(|m| m.name == name)
    }

    pub fn maps(&self) -> impl Iterator<Item = (usize, &AttentionMap)> {
        self.layers
            .iter()
            .flat_map(|l| l.maps.iter().map(move |m| (l.layer, m)))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::format("attention record", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: AttentionRecord =
            serde_json::from_str(text).map_err(|e| Error::format("attention record", e))?;
        if rec.format != RECORD_FORMAT || rec.version != RECORD_VERSION {
            return Err(Error::format(
                "attention record",
                format!("unsupported format `{}` v{}", rec.format, rec.version),
            ));
        }
        Ok(rec)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
