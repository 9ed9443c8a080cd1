//! Model checkpoints: versioned JSON documents that round-trip every
//! parameter bit-exactly (floats are written with shortest-round-trip
//! precision).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, LayeredModel, ModelDims};

const FORMAT: &str = "layered-model";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    version: u32,
    dims: ModelDims,
    activation: Activation,
    /// Seed the parameters were drawn from, when known.
    init_seed: Option<u64>,
    /// Row-major `(out_dim x in_dim)` weights plus biases, layer by layer.
    layers: Vec<LayerParams>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerParams {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

pub fn to_json(model: &LayeredModel) -> Result<String> {
    let doc = CheckpointDoc {
        format: FORMAT.into(),
        version: VERSION,
        dims: model.dims.clone(),
        activation: model.activation,
        init_seed: model.init_seed,
        layers: model
            .layers
            .iter()
            .map(|l| LayerParams {
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                weights: l.weights.clone(),
                bias: l.bias.clone(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn from_json(text: &str) -> Result<LayeredModel> {
    let doc: CheckpointDoc = serde_json::from_str(text)?;
    if doc.format != FORMAT {
        return Err(Error::Parse(format!(
            "unexpected checkpoint format {:?}",
            doc.format
        )));
    }
    if doc.version != VERSION {
        return Err(Error::Parse(format!(
            "unsupported checkpoint version {} (supported: {VERSION})",
            doc.version
        )));
    }
    let expected = doc.dims.layer_shapes();
    if doc.layers.len() != expected.len() {
        return Err(Error::Parse(format!(
            "checkpoint has {} layers, dims describe {}",
            doc.layers.len(),
            expected.len()
        )));
    }
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (params, (fan_in, fan_out)) in doc.layers.into_iter().zip(expected) {
        let consistent = params.in_dim == fan_in
            && params.out_dim == fan_out
            && params.weights.len() == fan_in * fan_out
            && params.bias.len() == fan_out;
        if !consistent {
            return Err(Error::Parse(
                "checkpoint layer shapes disagree with declared dims".into(),
            ));
        }
        if !params.weights.iter().chain(&params.bias).all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "checkpoint parameters".into(),
            });
        }
        layers.push(Layer {
            in_dim: params.in_dim,
            out_dim: params.out_dim,
            weights: params.weights,
            bias: params.bias,
        });
    }
    Ok(LayeredModel {
        dims: doc.dims,
        activation: doc.activation,
        layers,
        init_seed: doc.init_seed,
    })
}

pub fn save(model: &LayeredModel, path: &Path) -> Result<()> {
    fs::write(path, to_json(model)? + "\n")?;
    Ok(())
}

pub fn load(path: &Path) -> Result<LayeredModel> {
    from_json(&fs::read_to_string(path)?)
}
