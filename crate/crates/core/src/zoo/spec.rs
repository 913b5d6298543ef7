use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{conv_output_dim, glorot_conv, glorot_fc, LayerParams};
use crate::tensor::Scalar;

/// One layer of an architecture, independent of its input size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        relu: bool,
    },
    Fc {
        neurons: usize,
        relu: bool,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    AvgPool {
        window: usize,
        stride: usize,
    },
    Dropout {
        rate: f64,
    },
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Fc { .. })
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. })
    }

    pub fn is_fc(&self) -> bool {
        matches!(self, LayerSpec::Fc { .. })
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |window: usize, stride: usize, pad: usize| -> Result<(usize, usize)> {
            if input.len() != 3 {
                return Err(Error::Shape(format!(
                    "{} needs a (channels, height, width) input, got {input:?}",
                    self.notation()
                )));
            }
            let h = conv_output_dim(input[1], window, stride, pad).ok_or(Error::Dimension {
                axis: "height",
                expected: window,
                actual: input[1] + 2 * pad,
            })?;
            let w = conv_output_dim(input[2], window, stride, pad).ok_or(Error::Dimension {
                axis: "width",
                expected: window,
                actual: input[2] + 2 * pad,
            })?;
            Ok((h, w))
        };
        match *self {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                pad,
                ..
            } => {
                let (h, w) = spatial(kernel, stride, pad)?;
                Ok(vec![filters, h, w])
            }
            LayerSpec::Fc { neurons, .. } => Ok(vec![neurons]),
            LayerSpec::MaxPool { window, stride } | LayerSpec::AvgPool { window, stride } => {
                let (h, w) = spatial(window, stride, 0)?;
                Ok(vec![input[0], h, w])
            }
            LayerSpec::Dropout { .. } => Ok(input.to_vec()),
        }
    }

    /// `(weight_shape, bias_shape)` for parameterized layers.
    pub fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv {
                filters, kernel, ..
            } => Some((vec![filters, input[0], kernel, kernel], vec![filters])),
            LayerSpec::Fc { neurons, .. } => {
                Some((vec![neurons, input.iter().product()], vec![neurons]))
            }
            _ => None,
        }
    }

    pub fn param_count(&self, input: &[usize]) -> usize {
        self.param_shapes(input)
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .unwrap_or(0)
    }

    /// Multiply-accumulate operations of one forward pass on one sample.
    pub fn macs(&self, input: &[usize]) -> Result<u64> {
        Ok(match *self {
            LayerSpec::Conv {
                filters, kernel, ..
            } => {
                let out = self.output_shape(input)?;
                (out[1] * out[2] * filters * input[0] * kernel * kernel) as u64
            }
            LayerSpec::Fc { neurons, .. } => (input.iter().product::<usize>() * neurons) as u64,
            _ => 0,
        })
    }

    pub fn init_params<T: Scalar, R: Rng + ?Sized>(
        &self,
        input: &[usize],
        rng: &mut R,
    ) -> Option<LayerParams<T>> {
        match *self {
            LayerSpec::Conv {
                filters, kernel, ..
            } => Some(glorot_conv(filters, input[0], kernel, rng)),
            LayerSpec::Fc { neurons, .. } => Some(glorot_fc(neurons, input.iter().product(), rng)),
            _ => None,
        }
    }

    /// Table-style token such as `C20`, `MP`, `AP16`, `D0.05` or `FC500`.
    pub fn notation(&self) -> String {
        match self {
            LayerSpec::Conv { filters, .. } => format!("C{filters}"),
            LayerSpec::Fc { neurons, .. } => format!("FC{neurons}"),
            LayerSpec::MaxPool { .. } => "MP".to_string(),
            LayerSpec::AvgPool { stride, .. } => format!("AP{stride}"),
            LayerSpec::Dropout { rate } => format!("D{rate}"),
        }
    }
}

/// How tokens without explicit geometry are expanded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchOptions {
    pub kernel: usize,
    pub pad: usize,
    pub pool_window: usize,
}

impl Default for ArchOptions {
    fn default() -> Self {
        ArchOptions {
            kernel: 3,
            pad: 0,
            pool_window: 2,
        }
    }
}

/// Parses a dash-separated architecture string like
/// `C20-MP-C50-MP-FC500-FC10` or `C128x3-AP16-FC10`.
///
/// Every Conv and FC layer gets a ReLU, except the final FC which emits
/// logits.
pub fn parse_architecture(arch: &str, opts: ArchOptions) -> Result<Vec<LayerSpec>> {
    let mut layers = Vec::new();
    for raw in arch.split('-') {
        let token = raw.trim();
        if token.is_empty() {
            return Err(Error::Architecture(format!("empty token in `{arch}`")));
        }
        let (body, repeat) = split_repeat(token)?;
        let layer = parse_token(body, opts).ok_or_else(|| {
            Error::Architecture(format!("unrecognized token `{token}` in `{arch}`"))
        })?;
        for _ in 0..repeat {
            layers.push(layer.clone());
        }
    }
    match layers.iter_mut().rev().find(|l| l.has_params()) {
        Some(LayerSpec::Fc { relu, .. }) => *relu = false,
        _ => {
            return Err(Error::Architecture(format!(
                "`{arch}` must end with an FC output layer"
            )))
        }
    }
    Ok(layers)
}

fn split_repeat(token: &str) -> Result<(&str, usize)> {
    let Some((body, count)) = token.split_once(['×', 'x', 'X']) else {
        return Ok((token, 1));
    };
    let n = count
        .parse::<usize>()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Architecture(format!("bad repeat count in `{token}`")))?;
    Ok((body, n))
}

fn parse_token(token: &str, opts: ArchOptions) -> Option<LayerSpec> {
    let positive = |s: &str| s.parse::<usize>().ok().filter(|&v| v > 0);
    if let Some(n) = token.strip_prefix("FC") {
        return Some(LayerSpec::Fc {
            neurons: positive(n)?,
            relu: true,
        });
    }
    if let Some(w) = token.strip_prefix("MP") {
        let window = if w.is_empty() {
            opts.pool_window
        } else {
            positive(w)?
        };
        return Some(LayerSpec::MaxPool {
            window,
            stride: window,
        });
    }
    if let Some(w) = token.strip_prefix("AP") {
        let window = if w.is_empty() {
            opts.pool_window
        } else {
            positive(w)?
        };
        return Some(LayerSpec::AvgPool {
            window,
            stride: window,
        });
    }
    if let Some(r) = token.strip_prefix('D') {
        let rate: f64 = r.parse().ok()?;
        return (0.0..1.0)
            .contains(&rate)
            .then_some(LayerSpec::Dropout { rate });
    }
    if let Some(n) = token.strip_prefix('C') {
        return Some(LayerSpec::Conv {
            filters: positive(n)?,
            kernel: opts.kernel,
            stride: 1,
            pad: opts.pad,
            relu: true,
        });
    }
    None
}
