//! Weights file: pretty-printed JSON carrying a format version, the input
//! dimension, the class count and every layer's dims, activation, row-major
//! weights and bias.
//!
//! Floats are written in shortest round-trip form, so save -> load -> save is
//! byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DenseLayer, Network};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct WeightsFile {
    format_version: u32,
    input_dim: usize,
    class_count: usize,
    layers: Vec<DenseLayer>,
}

pub fn to_string(model: &Network) -> String {
    let file = WeightsFile {
        format_version: FORMAT_VERSION,
        input_dim: model.input_dim(),
        class_count: model.class_count(),
        layers: model.layers().to_vec(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("weights serialize");
    s.push('\n');
    s
}

pub fn from_str(s: &str) -> Result<Network> {
    let file: WeightsFile = serde_json::from_str(s)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::WeightsFormat(format!(
            "unsupported format version {}",
            file.format_version
        )));
    }
    let layers = file
        .layers
        .into_iter()
        .map(|l| DenseLayer::new(l.in_dim, l.out_dim, l.activation, l.weights, l.bias))
        .collect::<Result<Vec<_>>>()?;
    let model = Network::new(layers)?;
    if model.input_dim() != file.input_dim || model.class_count() != file.class_count {
        return Err(Error::WeightsFormat(format!(
            "header says {} inputs / {} classes, layers give {} / {}",
            file.input_dim,
            file.class_count,
            model.input_dim(),
            model.class_count()
        )));
    }
    Ok(model)
}

pub fn save_weights(path: &Path, model: &Network) -> Result<()> {
    super::write_atomic(path, to_string(model).as_bytes())
}

pub fn load_weights(path: &Path) -> Result<Network> {
    from_str(&std::fs::read_to_string(path)?)
}
