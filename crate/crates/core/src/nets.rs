//! Declarative network specs, deterministic initialization, forward passes
//! on a [`Graph`], and directory checkpoints.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::rng;
use crate::tensor::{Graph, Tensor, Var};

/// Rows per inference chunk in [`Network::logits`].
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Image2d,
    Waveform1d,
    Flat,
}

impl InputKind {
    fn rank(self) -> usize {
        match self {
            InputKind::Image2d => 3,
            InputKind::Waveform1d => 2,
            InputKind::Flat => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layer {
    Dense { out: usize },
    Conv2d { filters: usize, kernel: usize, stride: usize, padding: usize },
    Conv1d { filters: usize, kernel: usize, stride: usize, padding: usize },
    Relu,
    Maxpool { k: usize },
    Flatten,
    Globalavgpool,
}

/// Architecture description. `input_shape` is the per-example shape:
/// `[C, H, W]` for images, `[C, L]` for waveforms, `[D]` for flat vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_kind: InputKind,
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub num_classes: usize,
    #[serde(default)]
    pub init_seed: u64,
}

/// Shape of one parameter tensor plus its fan-in (zero for biases).
struct ParamShape {
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
}

impl ModelSpec {
    /// Walks the layer chain, returning the parameter shapes in order.
    fn plan(&self) -> Result<Vec<ParamShape>> {
        if self.input_shape.len() != self.input_kind.rank() || self.input_shape.contains(&0) {
            bail!(Spec, "input shape {:?} does not fit {:?}", self.input_shape, self.input_kind);
        }
        if self.num_classes == 0 {
            bail!(Spec, "num_classes must be positive");
        }
        let mut shape = self.input_shape.clone();
        let mut params = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let weight = format!("layer{i}.weight");
            let bias = format!("layer{i}.bias");
            shape = match *layer {
                Layer::Dense { out } => {
                    if shape.len() != 1 || out == 0 {
                        bail!(Spec, "layer {i}: dense needs a flat input, got {shape:?}");
                    }
                    params.push(ParamShape { name: weight, shape: vec![shape[0], out], fan_in: shape[0] });
                    params.push(ParamShape { name: bias, shape: vec![out], fan_in: 0 });
                    vec![out]
                }
                Layer::Conv2d { filters, kernel, stride, padding } => {
                    if shape.len() != 3 || filters == 0 || kernel == 0 || stride == 0 {
                        bail!(Spec, "layer {i}: conv2d needs [C, H, W] input, got {shape:?}");
                    }
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    if kernel > h + 2 * padding || kernel > w + 2 * padding {
                        bail!(Spec, "layer {i}: kernel {kernel} larger than padded input {shape:?}");
                    }
                    params.push(ParamShape { name: weight, shape: vec![filters, c, kernel, kernel], fan_in: c * kernel * kernel });
                    params.push(ParamShape { name: bias, shape: vec![filters], fan_in: 0 });
                    vec![filters, (h + 2 * padding - kernel) / stride + 1, (w + 2 * padding - kernel) / stride + 1]
                }
                Layer::Conv1d { filters, kernel, stride, padding } => {
                    if shape.len() != 2 || filters == 0 || kernel == 0 || stride == 0 {
                        bail!(Spec, "layer {i}: conv1d needs [C, L] input, got {shape:?}");
                    }
                    let (c, l) = (shape[0], shape[1]);
                    if kernel > l + 2 * padding {
                        bail!(Spec, "layer {i}: kernel {kernel} larger than padded input {shape:?}");
                    }
                    params.push(ParamShape { name: weight, shape: vec![filters, c, kernel], fan_in: c * kernel });
                    params.push(ParamShape { name: bias, shape: vec![filters], fan_in: 0 });
                    vec![filters, (l + 2 * padding - kernel) / stride + 1]
                }
                Layer::Relu => shape,
                Layer::Maxpool { k } => match shape.len() {
                    3 if k > 0 && k <= shape[1] && k <= shape[2] => vec![shape[0], shape[1] / k, shape[2] / k],
                    2 if k > 0 && k <= shape[1] => vec![shape[0], shape[1] / k],
                    _ => bail!(Spec, "layer {i}: maxpool {k} does not fit {shape:?}"),
                },
                Layer::Flatten => vec![shape.iter().product()],
                Layer::Globalavgpool => {
                    if shape.len() < 2 {
                        bail!(Spec, "layer {i}: globalavgpool needs a spatial input, got {shape:?}");
                    }
                    vec![shape[0]]
                }
            };
        }
        if shape != [self.num_classes] {
            bail!(Spec, "network ends in shape {shape:?}, expected [{}] logits", self.num_classes);
        }
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }
}

/// Named preset architectures.
pub mod presets {
    use super::*;

    pub const NAMES: [&str; 4] = ["student2d", "teacher2d", "student1d", "teacher1d"];

    fn conv2d(filters: usize, stride: usize) -> Layer {
        Layer::Conv2d { filters, kernel: 3, stride, padding: 1 }
    }

    fn conv1d(filters: usize, kernel: usize, stride: usize) -> Layer {
        Layer::Conv1d { filters, kernel, stride, padding: kernel / 2 }
    }

    /// Builds the preset `name` for per-example `input_shape`.
    pub fn get(name: &str, input_shape: &[usize], num_classes: usize, init_seed: u64) -> Result<ModelSpec> {
        use Layer::*;
        let (input_kind, layers) = match name {
            "student2d" => (
                InputKind::Image2d,
                vec![conv2d(8, 1), Relu, Maxpool { k: 2 }, conv2d(16, 1), Relu, Globalavgpool, Dense { out: num_classes }],
            ),
            "teacher2d" => (
                InputKind::Image2d,
                vec![
                    conv2d(32, 2),
                    Relu,
                    Maxpool { k: 2 },
                    conv2d(64, 1),
                    Relu,
                    Globalavgpool,
                    Dense { out: 64 },
                    Relu,
                    Dense { out: num_classes },
                ],
            ),
            "student1d" => (
                InputKind::Waveform1d,
                vec![conv1d(8, 9, 4), Relu, Maxpool { k: 4 }, conv1d(16, 5, 1), Relu, Globalavgpool, Dense { out: num_classes }],
            ),
            "teacher1d" => (
                InputKind::Waveform1d,
                vec![
                    conv1d(32, 9, 4),
                    Relu,
                    Maxpool { k: 4 },
                    conv1d(64, 5, 1),
                    Relu,
                    Globalavgpool,
                    Dense { out: 64 },
                    Relu,
                    Dense { out: num_classes },
                ],
            ),
            other => bail!(Spec, "unknown preset {other:?}; known presets: {NAMES:?}"),
        };
        let spec = ModelSpec { input_kind, input_shape: input_shape.to_vec(), layers, num_classes, init_seed };
        spec.validate()?;
        Ok(spec)
    }
}

/// Either a preset name or an inline spec, as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    Preset(String),
    Spec(ModelSpec),
}

impl ModelChoice {
    /// Resolves to a concrete spec for data of the given shape.
    pub fn resolve(&self, input_shape: &[usize], num_classes: usize, init_seed: u64) -> Result<ModelSpec> {
        match self {
            ModelChoice::Preset(name) => presets::get(name, input_shape, num_classes, init_seed),
            ModelChoice::Spec(spec) => {
                if spec.input_shape != input_shape || spec.num_classes != num_classes {
                    bail!(
                        Spec,
                        "model expects input {:?} with {} classes, data has {:?} with {}",
                        spec.input_shape,
                        spec.num_classes,
                        input_shape,
                        num_classes
                    );
                }
                let mut spec = spec.clone();
                spec.init_seed = init_seed;
                Ok(spec)
            }
        }
    }
}

/// An instantiated network: a spec plus its named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ModelSpec,
    params: Vec<(String, Tensor)>,
}

impl Network {
    /// Validates `spec` and initializes weights uniformly in
    /// `±sqrt(6 / fan_in)` (He scaling), biases at zero.
    pub fn build(spec: ModelSpec) -> Result<Self> {
        let plan = spec.plan()?;
        let mut rng = rng::stream(spec.init_seed, rng::INIT);
        let params = plan
            .into_iter()
            .map(|p| {
                let t = if p.fan_in == 0 {
                    Tensor::zeros(p.shape)
                } else {
                    let bound = (6.0 / p.fan_in as f64).sqrt();
                    Tensor::from_fn(p.shape, |_| (2.0 * rng.random::<f64>() - 1.0) * bound)
                };
                (p.name, t)
            })
            .collect();
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Copies parameter values from `other`, which must share the architecture.
    pub fn load_params_from(&mut self, other: &Network) -> Result<()> {
        if other.spec.layers != self.spec.layers || other.spec.input_shape != self.spec.input_shape {
            bail!(Spec, "cannot copy parameters between different architectures");
        }
        for ((_, dst), (_, src)) in self.params.iter_mut().zip(&other.params) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Puts every parameter on the tape; tracked when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|(_, t)| {
                let t = t.clone();
                if trainable {
                    g.param(t)
                } else {
                    g.constant(t)
                }
            })
            .collect()
    }

    /// Logits `[N x num_classes]` for the batch `x` using bound parameters.
    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        let s = g.value(x).shape();
        if s.len() != self.spec.input_shape.len() + 1 || s[1..] != self.spec.input_shape[..] {
            bail!(Dimension, "input {s:?} does not match model input [N, {:?}]", self.spec.input_shape);
        }
        if params.len() != self.params.len() {
            bail!(Usage, "forward got {} parameters, network has {}", params.len(), self.params.len());
        }
        let mut p = params.iter().copied();
        let mut next = || p.next().ok_or_else(|| Error::Usage("parameter list exhausted".into()));
        let mut h = x;
        for layer in &self.spec.layers {
            h = match *layer {
                Layer::Dense { .. } => {
                    let (w, b) = (next()?, next()?);
                    let y = g.matmul(h, w)?;
                    g.add_bias(y, b)?
                }
                Layer::Conv2d { stride, padding, .. } => {
                    let (w, b) = (next()?, next()?);
                    let y = g.conv2d(h, w, stride, padding)?;
                    g.add_bias(y, b)?
                }
                Layer::Conv1d { stride, padding, .. } => {
                    let (w, b) = (next()?, next()?);
                    let y = g.conv1d(h, w, stride, padding)?;
                    g.add_bias(y, b)?
                }
                Layer::Relu => g.relu(h)?,
                Layer::Maxpool { k } => g.max_pool(h, k)?,
                Layer::Flatten => g.flatten(h)?,
                Layer::Globalavgpool => g.global_avg_pool(h)?,
            };
        }
        Ok(h)
    }

    /// Untracked inference, chunked over the batch.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.batch_len();
        let mut out = Vec::with_capacity(n * self.spec.num_classes);
        let mut start = 0;
        while start < n {
            let end = (start + EVAL_CHUNK).min(n);
            let chunk = if start == 0 && end == n { x.clone() } else { x.select(&(start..end).collect::<Vec<_>>())? };
            let mut g = Graph::new();
            let params = self.bind(&mut g, false);
            let xv = g.constant(chunk);
            let z = self.forward(&mut g, &params, xv)?;
            out.extend_from_slice(g.value(z).data());
            start = end;
        }
        Tensor::new([n, self.spec.num_classes], out)
    }

    /// Argmax class per example; ties resolve to the lowest class index.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        self.logits(x)?.argmax_rows()
    }

    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        if pred.len() != labels.len() {
            bail!(Dimension, "{} predictions for {} labels", pred.len(), labels.len());
        }
        Ok(accuracy(&pred, labels))
    }

    /// Writes `manifest.json` plus one `ODT1` blob per parameter into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for (name, t) in &self.params {
            let file = format!("{name}.odt");
            t.save(dir.join(&file))?;
            entries.push(ParamEntry { name: name.clone(), shape: t.shape().to_vec(), file });
        }
        let manifest = CheckpointManifest { spec: self.spec.clone(), params: entries };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let mut net = Network::build(manifest.spec)?;
        if manifest.params.len() != net.params.len() {
            bail!(Format, "checkpoint lists {} parameters, spec needs {}", manifest.params.len(), net.params.len());
        }
        for ((name, slot), entry) in net.params.iter_mut().zip(manifest.params) {
            let t = Tensor::load(dir.join(&entry.file))?;
            if entry.name != *name || t.shape() != slot.shape() || entry.shape != t.shape() {
                bail!(Format, "checkpoint parameter {} has shape {:?}, expected {name} {:?}", entry.name, t.shape(), slot.shape());
            }
            *slot = t;
        }
        Ok(net)
    }
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    spec: ModelSpec,
    params: Vec<ParamEntry>,
}
