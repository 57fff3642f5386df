//! JSON weight files: `{task, input_shape, layers: [{type, shape, values, ...}]}`
//! with row-major values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layer, Network, Task};
use crate::error::{RdeError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LayerRecord {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    shape: Vec<usize>,
    #[serde(default)]
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dilation: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct WeightsFile {
    task: Task,
    input_shape: [usize; 3],
    layers: Vec<LayerRecord>,
}

fn record(layer: &Layer) -> LayerRecord {
    let bare = |kind: &str| LayerRecord {
        kind: kind.into(),
        shape: vec![],
        values: vec![],
        bias: None,
        stride: None,
        padding: None,
        dilation: None,
    };
    match layer {
        Layer::Dense {
            input,
            output,
            weights,
            bias,
        } => LayerRecord {
            shape: vec![*output, *input],
            values: weights.clone(),
            bias: Some(bias.clone()),
            ..bare("dense")
        },
        Layer::Relu => bare("relu"),
        Layer::Flatten => bare("flatten"),
        Layer::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            dilation,
            weights,
            bias,
        } => LayerRecord {
            shape: vec![*out_channels, *in_channels, *kernel, *kernel],
            values: weights.clone(),
            bias: Some(bias.clone()),
            stride: Some(*stride),
            padding: Some(*padding),
            dilation: Some(*dilation),
            ..bare("conv2d")
        },
    }
}

fn layer(r: LayerRecord) -> Result<Layer> {
    let bad = |msg: &str| RdeError::Config(format!("{} layer: {msg}", r.kind));
    match r.kind.as_str() {
        "relu" => Ok(Layer::Relu),
        "flatten" => Ok(Layer::Flatten),
        "dense" => {
            let [out, inp] = r.shape[..] else {
                return Err(bad("shape must be [out, in]"));
            };
            let bias = r.bias.clone().unwrap_or_else(|| vec![0.0; out]);
            Layer::dense(inp, out, r.values, bias)
        }
        "conv2d" => {
            let [out, inp, k, k2] = r.shape[..] else {
                return Err(bad("shape must be [out, in, k, k]"));
            };
            if k != k2 {
                return Err(bad("only square kernels are supported"));
            }
            let bias = r.bias.clone().unwrap_or_else(|| vec![0.0; out]);
            Layer::conv2d(
                inp,
                out,
                k,
                r.stride.unwrap_or(1),
                r.padding.unwrap_or(0),
                r.dilation.unwrap_or(1),
                r.values,
                bias,
            )
        }
        other => Err(RdeError::Config(format!("unknown layer type {other:?}"))),
    }
}

impl Network {
    pub fn to_json(&self) -> Result<String> {
        let (c, h, w) = self.input_dims();
        let file = WeightsFile {
            task: self.task(),
            input_shape: [c, h, w],
            layers: self.layers().iter().map(record).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WeightsFile = serde_json::from_str(text)?;
        let layers = file.layers.into_iter().map(layer).collect::<Result<Vec<_>>>()?;
        let [c, h, w] = file.input_shape;
        Network::new(file.task, (c, h, w), layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LayerSpec;

    #[test]
    fn round_trip() {
        let specs = [
            LayerSpec::Conv2d {
                out_channels: 2,
                kernel: 3,
                stride: 2,
                padding: 1,
                dilation: 1,
            },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { output: 4 },
        ];
        let net = Network::init(Task::Classification, (1, 8, 8), &specs, 11).unwrap();
        let back = Network::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn hand_written_file() {
        let text = r#"{"task":"regression","input_shape":[2,1,1],
            "layers":[{"type":"dense","shape":[1,2],"values":[1,2]}]}"#;
        let net = Network::from_json(text).unwrap();
        assert_eq!(net.evaluate(&[3.0, 4.0]).unwrap(), vec![11.0]);
        assert!(Network::from_json(r#"{"task":"regression","input_shape":[1,1,1],"layers":[{"type":"pool"}]}"#).is_err());
    }
}
