//! SGD with momentum and per-epoch learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LayerParams;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay_per_epoch: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.01,
            momentum: 0.5,
            decay_per_epoch: 0.99,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.decay_per_epoch > 0.0 && self.decay_per_epoch <= 1.0) {
            return Err(Error::Config(format!(
                "decay must lie in (0, 1], got {}",
                self.decay_per_epoch
            )));
        }
        Ok(())
    }
}

/// Optimizer state for an ordered list of parameterized layers. Velocities
/// are stored weights-then-biases per layer.
#[derive(Clone, Debug)]
pub struct OptimState<T = f32> {
    pub learning_rate: f64,
    pub decay_per_epoch: f64,
    pub momentum: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(config: SgdConfig, params: &[LayerParams<T>]) -> Self {
        let velocity = params
            .iter()
            .flat_map(|p| {
                [
                    Tensor::zeros(p.weights.shape()),
                    Tensor::zeros(p.biases.shape()),
                ]
            })
            .collect();
        OptimState {
            learning_rate: config.learning_rate,
            decay_per_epoch: config.decay_per_epoch,
            momentum: config.momentum,
            velocity,
        }
    }

    /// Continues a schedule that has already seen `epochs` epoch boundaries.
    pub fn with_epochs_elapsed(mut self, epochs: usize) -> Self {
        for _ in 0..epochs {
            self.end_epoch();
        }
        self
    }

    pub fn end_epoch(&mut self) {
        self.learning_rate *= self.decay_per_epoch;
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }
}

/// `v <- momentum*v - lr*g; p <- p + v` for every parameter tensor.
pub fn sgd_step<T: Scalar>(
    params: &mut [LayerParams<T>],
    grads: &[LayerParams<T>],
    state: &mut OptimState<T>,
) -> Result<()> {
    if params.len() != grads.len() || state.velocity.len() != 2 * params.len() {
        return Err(Error::Shape(format!(
            "sgd over {} layers got {} gradients and {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    let lr = T::from_f64(state.learning_rate);
    let mu = T::from_f64(state.momentum);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        for (slot, (pt, gt)) in [(&mut p.weights, &g.weights), (&mut p.biases, &g.biases)]
            .into_iter()
            .enumerate()
        {
            pt.check_same_shape(gt)?;
            let v = &mut state.velocity[2 * i + slot];
            for ((pv, &gv), vv) in pt.data_mut().iter_mut().zip(gt.data()).zip(v.data_mut()) {
                *vv = mu * *vv - lr * gv;
                *pv += *vv;
            }
        }
    }
    Ok(())
}
