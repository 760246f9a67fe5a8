//! Self-describing model file: JSON with a format tag, version, explicit
//! tensor shapes and the position scaler. Floats are written in shortest
//! round-trip form, so a saved model reloads bit-for-bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LstmModel, ModelMetadata, ParamLayout, INPUT_SIZE, OUTPUT_SIZE};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "needle-lstm";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    input_size: usize,
    hidden_size: usize,
    fc_size: usize,
    output_size: usize,
    z_max: f64,
    dropout: f64,
    metadata: ModelMetadata,
    tensors: Vec<Tensor>,
}

pub fn model_to_string(model: &LstmModel) -> String {
    let l = model.layout;
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        input_size: l.input,
        hidden_size: l.hidden,
        fc_size: l.fc,
        output_size: OUTPUT_SIZE,
        z_max: model.z_max,
        dropout: model.dropout,
        metadata: model.metadata.clone(),
        tensors: l
            .blocks()
            .into_iter()
            .map(|(name, range, rows, cols)| Tensor {
                name: name.into(),
                shape: [rows, cols],
                data: model.params[range].to_vec(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("model serializes")
}

pub fn model_from_str(text: &str, origin: &Path) -> Result<LstmModel> {
    let bad = |m: String| Error::format(origin, m);
    let file: ModelFile = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    if file.format != MODEL_FORMAT {
        return Err(bad(format!("unknown format tag {:?}", file.format)));
    }
    if file.version != MODEL_VERSION {
        return Err(bad(format!("unsupported model version {}", file.version)));
    }
    if file.input_size != INPUT_SIZE || file.output_size != OUTPUT_SIZE {
        return Err(bad(format!(
            "expected {INPUT_SIZE} inputs and {OUTPUT_SIZE} outputs, found {} and {}",
            file.input_size, file.output_size
        )));
    }
    if !(file.z_max > 0.0) {
        return Err(bad(format!("z_max must be positive, got {}", file.z_max)));
    }
    let layout = ParamLayout::new(file.input_size, file.hidden_size, file.fc_size);
    let blocks = layout.blocks();
    if file.tensors.len() != blocks.len() {
        return Err(bad(format!("expected {} tensors, found {}", blocks.len(), file.tensors.len())));
    }
    let mut params = vec![0.0; layout.len()];
    for (tensor, (name, range, rows, cols)) in file.tensors.iter().zip(blocks) {
        if tensor.name != name || tensor.shape != [rows, cols] || tensor.data.len() != rows * cols {
            return Err(bad(format!(
                "tensor {:?} {:?} with {} values does not match {name} [{rows}, {cols}]",
                tensor.name,
                tensor.shape,
                tensor.data.len()
            )));
        }
        params[range].copy_from_slice(&tensor.data);
    }
    let model = LstmModel {
        layout,
        params,
        z_max: file.z_max,
        dropout: file.dropout,
        metadata: file.metadata,
    };
    if !model.is_finite() {
        return Err(bad("non-finite parameter".into()));
    }
    Ok(model)
}

pub fn save_model(model: &LstmModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<LstmModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text, path)
}
