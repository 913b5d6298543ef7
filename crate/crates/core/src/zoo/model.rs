use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::spec::{parse_architecture, ArchOptions, LayerSpec};
use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 10;

/// The three reference architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZooModel {
    LeNet,
    AlexNet,
    Vgg9,
}

impl ZooModel {
    pub const ALL: [ZooModel; 3] = [ZooModel::LeNet, ZooModel::AlexNet, ZooModel::Vgg9];

    pub fn architecture(self) -> &'static str {
        match self {
            ZooModel::LeNet => "C20-MP-C50-MP-FC500-FC10",
            ZooModel::AlexNet => "C128x3-AP16-FC10",
            ZooModel::Vgg9 => "C32-C64-MP-C128x2-MP-D0.05-C256x2-MP-D0.1-FC512x2-FC10",
        }
    }

    /// Kernel and padding that fit the native input resolution.
    pub fn default_options(self) -> ArchOptions {
        match self {
            ZooModel::LeNet => ArchOptions {
                kernel: 5,
                pad: 0,
                pool_window: 2,
            },
            ZooModel::AlexNet => ArchOptions {
                kernel: 3,
                pad: 0,
                pool_window: 2,
            },
            ZooModel::Vgg9 => ArchOptions {
                kernel: 3,
                pad: 1,
                pool_window: 2,
            },
        }
    }

    pub fn default_input(self) -> [usize; 3] {
        match self {
            ZooModel::LeNet => [1, 28, 28],
            ZooModel::AlexNet | ZooModel::Vgg9 => [3, 32, 32],
        }
    }
}

impl fmt::Display for ZooModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ZooModel::LeNet => "LeNet",
            ZooModel::AlexNet => "AlexNet",
            ZooModel::Vgg9 => "VGG9",
        })
    }
}

impl FromStr for ZooModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lenet" => Ok(ZooModel::LeNet),
            "alexnet" => Ok(ZooModel::AlexNet),
            "vgg9" => Ok(ZooModel::Vgg9),
            _ => Err(Error::UnknownModel(s.to_string())),
        }
    }
}

/// An architecture bound to a per-sample input shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

/// Canonical zoo model at its native resolution.
pub fn build_model(name: &str) -> Result<ModelSpec> {
    let model: ZooModel = name.parse()?;
    ModelSpec::from_arch(
        &model.to_string(),
        model.architecture(),
        &model.default_input(),
        model.default_options(),
    )
}

impl ModelSpec {
    pub fn new(name: &str, input: &[usize], layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = ModelSpec {
            name: name.to_string(),
            input: input.to_vec(),
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_arch(name: &str, arch: &str, input: &[usize], opts: ArchOptions) -> Result<Self> {
        Self::new(name, input, parse_architecture(arch, opts)?)
    }

    fn validate(&self) -> Result<()> {
        if self.input.is_empty() || self.input.contains(&0) {
            return Err(Error::Architecture(format!(
                "input shape {:?} must be non-empty and positive",
                self.input
            )));
        }
        let outputs = self
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Fc { relu: false, .. }))
            .count();
        match self.layers.last() {
            Some(LayerSpec::Fc {
                neurons: NUM_CLASSES,
                relu: false,
            }) if outputs == 1 => {}
            _ => {
                return Err(Error::Architecture(format!(
                    "{} must have exactly one output layer FC{NUM_CLASSES}, placed last",
                    self.name
                )))
            }
        }
        if let Some(first_fc) = self.layers.iter().position(LayerSpec::is_fc) {
            if self.layers[first_fc..].iter().any(LayerSpec::is_conv) {
                return Err(Error::Architecture(format!(
                    "{}: convolution after a dense layer",
                    self.name
                )));
            }
        }
        self.shapes().map(|_| ())
    }

    /// Per-sample shapes: the input followed by every layer's output.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        shapes_through(&self.input, &self.layers)
    }

    pub fn shape_at(&self, layer: usize) -> Vec<usize> {
        self.shapes().expect("validated spec")[layer].clone()
    }

    pub fn param_count(&self) -> usize {
        let shapes = self.shapes().expect("validated spec");
        self.layers
            .iter()
            .zip(&shapes)
            .map(|(l, s)| l.param_count(s))
            .sum()
    }

    /// Indices of layers carrying weights.
    pub fn param_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].has_params())
            .collect()
    }

    /// First layer of the dense tail.
    pub fn tail_start(&self) -> usize {
        self.layers
            .iter()
            .position(LayerSpec::is_fc)
            .expect("validated spec ends in FC")
    }

    /// Greedily trained units covering `start..`: each convolution together
    /// with the parameter-free layers after it, then the dense tail as one
    /// final unit.
    pub fn units_from(&self, start: usize) -> Vec<Range<usize>> {
        let tail = self.tail_start();
        let mut units = Vec::new();
        let mut begin = start;
        for i in start..tail {
            if i > begin && self.layers[i].is_conv() {
                units.push(begin..i);
                begin = i;
            }
        }
        if begin < tail {
            units.push(begin..tail);
        }
        units.push(begin.max(tail)..self.layers.len());
        units
    }

    pub fn units(&self) -> Vec<Range<usize>> {
        self.units_from(0)
    }

    /// Number of units trained by the per-layer protocol.
    pub fn unit_count(&self) -> usize {
        self.units().len()
    }

    /// Starting layer of each trained unit.
    pub fn trainable_indices(&self) -> Vec<usize> {
        self.units().into_iter().map(|r| r.start).collect()
    }

    /// Temporary head attached after `layers`: the final convolution unit
    /// followed by the dense tail, or just the tail when `layers` already
    /// ends at the final convolution unit. Empty once the tail is included.
    pub fn head_after(&self, layers: &Range<usize>) -> Vec<LayerSpec> {
        let tail = self.tail_start();
        if layers.end > tail {
            return Vec::new();
        }
        let conv_units: Vec<_> = self
            .units()
            .into_iter()
            .filter(|r| r.start < tail)
            .collect();
        let mut head = Vec::new();
        if let Some(last) = conv_units.last() {
            if layers.end < last.end {
                head.extend_from_slice(&self.layers[last.clone()]);
            }
        }
        head.extend_from_slice(&self.layers[tail..]);
        head
    }
}

pub(crate) fn shapes_through(input: &[usize], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = vec![input.to_vec()];
    for layer in layers {
        let next = layer.output_shape(shapes.last().unwrap())?;
        shapes.push(next);
    }
    Ok(shapes)
}

/// Classifier head used while training unit `l` (1-based).
pub fn classifier_for_layer(spec: &ModelSpec, l: usize) -> Result<Vec<LayerSpec>> {
    let units = spec.units();
    if l == 0 || l > units.len() {
        return Err(Error::UnitOutOfRange {
            index: l,
            max: units.len(),
        });
    }
    Ok(spec.head_after(&units[l - 1]))
}

/// One trained unit: a contiguous range of model layers plus its head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub layers: Range<usize>,
    pub head: Vec<LayerSpec>,
}

/// Units in training order. Layers before `frozen` come from a pretrained
/// model and are never updated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub frozen: usize,
    pub units: Vec<Unit>,
}

impl TrainingPlan {
    /// Per-layer (`block = 1`) or block-wise training from scratch.
    pub fn layerwise(spec: &ModelSpec, block: usize) -> Result<Self> {
        Self::chunked(spec, 0, block)
    }

    /// The whole model as a single unit.
    pub fn end_to_end(spec: &ModelSpec) -> Self {
        TrainingPlan {
            frozen: 0,
            units: vec![Unit {
                layers: 0..spec.layers.len(),
                head: Vec::new(),
            }],
        }
    }

    /// Freeze everything except the last `train_tail` parameterized layers.
    pub fn transfer(spec: &ModelSpec, train_tail: usize, block: usize) -> Result<Self> {
        let params = spec.param_layers();
        if train_tail == 0 || train_tail > params.len() {
            return Err(Error::UnitOutOfRange {
                index: train_tail,
                max: params.len(),
            });
        }
        if train_tail == params.len() {
            return Self::layerwise(spec, block);
        }
        let start = params[params.len() - train_tail];
        if start < spec.tail_start() {
            return Err(Error::Architecture(format!(
                "transfer tail of {train_tail} layers reaches into the convolution stack"
            )));
        }
        Self::chunked(spec, start, block)
    }

    fn chunked(spec: &ModelSpec, start: usize, block: usize) -> Result<Self> {
        if block == 0 {
            return Err(Error::Architecture("block size must be positive".into()));
        }
        let units = spec
            .units_from(start)
            .chunks(block)
            .map(|c| {
                let layers = c[0].start..c[c.len() - 1].end;
                Unit {
                    head: spec.head_after(&layers),
                    layers,
                }
            })
            .collect();
        Ok(TrainingPlan {
            frozen: start,
            units,
        })
    }
}
