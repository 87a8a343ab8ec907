//! MLP embeddings from each algorithm's hyper-parameter space into the shared
//! latent space, plus the PTEM (pre-trained embedding model) container.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::SearchSpace;

pub const DEFAULT_LATENT_DIM: usize = 3;
pub const DEFAULT_HIDDEN: [usize; 2] = [32, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    #[serde(rename = "in")]
    pub input: usize,
    #[serde(rename = "out")]
    pub output: usize,
    pub activation: Activation,
}

impl LayerShape {
    fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }
}

/// Dense feed-forward network with all parameters in one flat vector.
///
/// Layout, layer by layer: the `out x in` weight matrix in row-major order,
/// followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_tape`] for a backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape has an input")
    }
}

impl Mlp {
    pub fn zeros(layers: Vec<LayerShape>) -> Self {
        assert!(!layers.is_empty(), "an MLP needs at least one layer");
        for pair in layers.windows(2) {
            assert_eq!(pair[0].output, pair[1].input, "layer shapes must chain");
        }
        let n = layers.iter().map(LayerShape::param_count).sum();
        Mlp {
            layers,
            params: vec![0.0; n],
        }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
    pub fn random<R: Rng + ?Sized>(layers: Vec<LayerShape>, rng: &mut R) -> Self {
        let mut mlp = Mlp::zeros(layers);
        let mut offset = 0;
        for layer in &mlp.layers {
            let bound = 1.0 / (layer.input as f64).sqrt();
            for p in &mut mlp.params[offset..offset + layer.param_count()] {
                *p = rng.random_range(-bound..bound);
            }
            offset += layer.param_count();
        }
        mlp
    }

    pub fn from_parts(layers: Vec<LayerShape>, params: Vec<f64>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Corrupt("network without layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output != pair[1].input {
                return Err(Error::Corrupt("layer shapes do not chain".into()));
            }
        }
        let expected: usize = layers.iter().map(LayerShape::param_count).sum();
        if params.len() != expected {
            return Err(Error::Shape {
                expected,
                got: params.len(),
            });
        }
        Ok(Mlp { layers, params })
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Offset of the last layer inside the flat parameter vector.
    pub fn last_layer_offset(&self) -> usize {
        let last = self.layers.last().unwrap().param_count();
        self.params.len() - last
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "input dimension");
        let mut cur = x.to_vec();
        let mut offset = 0;
        for layer in &self.layers {
            cur = self.layer_forward(layer, offset, &cur);
            offset += layer.param_count();
        }
        cur
    }

    pub fn forward_tape(&self, x: &[f64]) -> Tape {
        assert_eq!(x.len(), self.input_dim(), "input dimension");
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let mut offset = 0;
        for layer in &self.layers {
            let next = self.layer_forward(layer, offset, acts.last().unwrap());
            acts.push(next);
            offset += layer.param_count();
        }
        Tape { acts }
    }

    fn layer_forward(&self, layer: &LayerShape, offset: usize, x: &[f64]) -> Vec<f64> {
        let (w, b) = self.params[offset..offset + layer.param_count()].split_at(layer.input * layer.output);
        (0..layer.output)
            .map(|o| {
                let row = &w[o * layer.input..(o + 1) * layer.input];
                let z = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                layer.activation.apply(z)
            })
            .collect()
    }

    /// Reverse-mode pass. Parameter gradients are *added* into `grad`;
    /// the gradient with respect to the input is returned.
    pub fn backward(&self, tape: &Tape, upstream: &[f64], grad: &mut [f64]) -> Vec<f64> {
        assert_eq!(upstream.len(), self.output_dim(), "upstream dimension");
        assert_eq!(grad.len(), self.params.len(), "gradient buffer length");
        let mut delta = upstream.to_vec();
        let mut end = self.params.len();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let start = end - layer.param_count();
            let out = &tape.acts[l + 1];
            let inp = &tape.acts[l];
            for (d, &a) in delta.iter_mut().zip(out) {
                *d *= layer.activation.derivative_from_output(a);
            }
            let nw = layer.input * layer.output;
            let w = &self.params[start..start + nw];
            let (gw, gb) = grad[start..end].split_at_mut(nw);
            let mut next = vec![0.0; layer.input];
            for o in 0..layer.output {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = o * layer.input;
                for i in 0..layer.input {
                    gw[row + i] += d * inp[i];
                    next[i] += d * w[row + i];
                }
            }
            delta = next;
            end = start;
        }
        delta
    }
}

/// Which embedding parameters an optimizer may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    All,
    LastLayer,
    Frozen,
}

/// An embedding `phi: unit hyper-parameter vector -> latent point`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    net: Mlp,
}

impl EmbeddingModel {
    /// Two tanh hidden layers and a linear output layer.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, latent_dim: usize, hidden: [usize; 2], rng: &mut R) -> Self {
        let layers = vec![
            LayerShape {
                input: input_dim,
                output: hidden[0],
                activation: Activation::Tanh,
            },
            LayerShape {
                input: hidden[0],
                output: hidden[1],
                activation: Activation::Tanh,
            },
            LayerShape {
                input: hidden[1],
                output: latent_dim,
                activation: Activation::Identity,
            },
        ];
        EmbeddingModel {
            net: Mlp::random(layers, rng),
        }
    }

    /// A single linear layer copying the input into the first coordinates of
    /// the latent space and zero-padding the rest.
    pub fn identity(input_dim: usize, latent_dim: usize) -> Self {
        assert!(latent_dim >= input_dim, "identity embedding cannot drop coordinates");
        let mut net = Mlp::zeros(vec![LayerShape {
            input: input_dim,
            output: latent_dim,
            activation: Activation::Identity,
        }]);
        for i in 0..input_dim {
            net.params[i * input_dim + i] = 1.0;
        }
        EmbeddingModel { net }
    }

    pub fn from_mlp(net: Mlp) -> Self {
        EmbeddingModel { net }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.net.forward(x)
    }

    pub fn forward_tape(&self, x: &[f64]) -> Tape {
        self.net.forward_tape(x)
    }

    pub fn backward(&self, tape: &Tape, upstream: &[f64], grad: &mut [f64]) -> Vec<f64> {
        self.net.backward(tape, upstream, grad)
    }

    pub fn trainable_mask(&self, mode: TrainMode) -> Vec<bool> {
        let n = self.param_count();
        match mode {
            TrainMode::All => vec![true; n],
            TrainMode::Frozen => vec![false; n],
            TrainMode::LastLayer => {
                let start = self.net.last_layer_offset();
                (0..n).map(|i| i >= start).collect()
            }
        }
    }
}

pub const PTEM_FORMAT: &str = "latentcash-ptem";
pub const PTEM_VERSION: u32 = 1;

/// The embeddings of every algorithm learned from one source dataset, with
/// that source's best observed score.
#[derive(Debug, Clone, PartialEq)]
pub struct PtemBundle {
    pub models: Vec<EmbeddingModel>,
    pub y_best: f64,
    pub source_id: String,
    pub fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct PtemFile {
    format: String,
    version: u32,
    source_id: String,
    fingerprint: String,
    y_best: String,
    models: Vec<ModelRecord>,
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    layers: Vec<LayerShape>,
    params: String,
}

pub(crate) fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    hex::encode(bytes)
}

pub(crate) fn decode_f64s(text: &str) -> Result<Vec<f64>> {
    let bytes = hex::decode(text).map_err(|e| Error::Corrupt(format!("bad float payload: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Corrupt("float payload length is not a multiple of 8 bytes".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl PtemBundle {
    pub fn validate_against(&self, space: &SearchSpace) -> Result<()> {
        let expected = space.fingerprint();
        if self.fingerprint != expected {
            return Err(Error::Fingerprint {
                expected,
                found: self.fingerprint.clone(),
            });
        }
        if self.models.len() != space.num_algorithms() {
            return Err(Error::Shape {
                expected: space.num_algorithms(),
                got: self.models.len(),
            });
        }
        for (model, dim) in self.models.iter().zip(space.dims()) {
            if model.input_dim() != dim {
                return Err(Error::Shape {
                    expected: dim,
                    got: model.input_dim(),
                });
            }
        }
        let d = self.models[0].latent_dim();
        if let Some(m) = self.models.iter().find(|m| m.latent_dim() != d) {
            return Err(Error::Shape {
                expected: d,
                got: m.latent_dim(),
            });
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.models[0].latent_dim()
    }

    pub fn to_json(&self) -> String {
        let file = PtemFile {
            format: PTEM_FORMAT.into(),
            version: PTEM_VERSION,
            source_id: self.source_id.clone(),
            fingerprint: self.fingerprint.clone(),
            y_best: encode_f64s(&[self.y_best]),
            models: self
                .models
                .iter()
                .map(|m| ModelRecord {
                    layers: m.mlp().layers().to_vec(),
                    params: encode_f64s(m.params()),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("ptem serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Corrupt(format!("ptem: {e}")))?;
        if value.get("format").and_then(|f| f.as_str()) != Some(PTEM_FORMAT) {
            return Err(Error::Corrupt("not a PTEM file".into()));
        }
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Corrupt("ptem: missing version".into()))?;
        if version != u64::from(PTEM_VERSION) {
            return Err(Error::Version {
                found: version as u32,
                supported: PTEM_VERSION,
            });
        }
        let file: PtemFile =
            serde_json::from_value(value).map_err(|e| Error::Corrupt(format!("ptem: {e}")))?;
        let y_best = match decode_f64s(&file.y_best)?.as_slice() {
            [v] => *v,
            _ => return Err(Error::Corrupt("ptem: y_best must hold one float".into())),
        };
        let models = file
            .models
            .into_iter()
            .map(|r| Mlp::from_parts(r.layers, decode_f64s(&r.params)?).map(EmbeddingModel::from_mlp))
            .collect::<Result<Vec<_>>>()?;
        if models.is_empty() {
            return Err(Error::Corrupt("ptem: no models".into()));
        }
        Ok(PtemBundle {
            models,
            y_best,
            source_id: file.source_id,
            fingerprint: file.fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Reads a PTEM and checks it against `space`.
    pub fn load(path: &Path, space: &SearchSpace) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bundle = Self::from_json(&text)?;
        bundle.validate_against(space)?;
        Ok(bundle)
    }
}
