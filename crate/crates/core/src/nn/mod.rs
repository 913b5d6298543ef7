//! Layer operations: forward and backward passes for convolution, dense,
//! pooling, ReLU, dropout and the softmax cross-entropy loss.
//!
//! Every op is a pure function of its inputs (plus an explicit RNG handle for
//! dropout). Activations are laid out `(batch, channels, height, width)`.

mod conv;
mod dropout;
mod fc;
mod init;
mod loss;
mod pool;
mod relu;

pub use conv::{conv2d_backward, conv2d_forward, conv_output_dim};
pub use dropout::{dropout_backward, dropout_forward, DropoutMask};
pub use fc::{fc_backward, fc_forward};
pub use init::{glorot_conv, glorot_fc};
pub use loss::{softmax, softmax_cross_entropy};
pub use pool::{avgpool_backward, avgpool_forward, maxpool_backward, maxpool_forward, PoolIndices};
pub use relu::{relu_backward, relu_forward};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Conv,
    Fc,
}

/// Weights and biases of one parameterized layer.
///
/// Conv weights are `(filters, in_channels, kh, kw)`; FC weights are
/// `(out, in)`. Biases have one entry per filter or neuron.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams<T = f32> {
    pub kind: ParamKind,
    pub weights: Tensor<T>,
    pub biases: Tensor<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn new(kind: ParamKind, weights: Tensor<T>, biases: Tensor<T>) -> Result<Self> {
        let expected_rank = match kind {
            ParamKind::Conv => 4,
            ParamKind::Fc => 2,
        };
        if weights.rank() != expected_rank {
            return Err(Error::Shape(format!(
                "{kind:?} weights must have rank {expected_rank}, got {:?}",
                weights.shape()
            )));
        }
        if biases.rank() != 1 || biases.len() != weights.shape()[0] {
            return Err(Error::Dimension {
                axis: "bias",
                expected: weights.shape()[0],
                actual: biases.len(),
            });
        }
        Ok(LayerParams {
            kind,
            weights,
            biases,
        })
    }

    pub fn zeros_like(&self) -> Self {
        LayerParams {
            kind: self.kind,
            weights: Tensor::zeros(self.weights.shape()),
            biases: Tensor::zeros(self.biases.shape()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        LayerParams {
            kind: self.kind,
            weights: self.weights.cast(),
            biases: self.biases.cast(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.weights.all_finite() && self.biases.all_finite()
    }

    /// Weights followed by biases, flattened.
    pub fn flat(&self) -> impl Iterator<Item = T> + '_ {
        self.weights
            .data()
            .iter()
            .chain(self.biases.data())
            .copied()
    }
}
