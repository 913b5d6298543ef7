//! Runnable layer stacks compiled from [`LayerSpec`] lists.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::nn::{
    avgpool_backward, avgpool_forward, conv2d_backward, conv2d_forward, dropout_backward,
    dropout_forward, fc_backward, fc_forward, maxpool_backward, maxpool_forward, relu_backward,
    relu_forward, DropoutMask, LayerParams, PoolIndices,
};
use crate::tensor::{Scalar, Tensor};
use crate::zoo::{shapes_through, LayerSpec};

/// Input gradient, if requested, and one gradient per parameter set.
pub type Gradients<T> = (Option<Tensor<T>>, Vec<LayerParams<T>>);

/// A contiguous run of layers with their parameters. Parameters are stored
/// densely in layer order so they can be handed to the optimizer as a slice.
#[derive(Debug)]
pub struct Stack<T = f32> {
    specs: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    slots: Vec<Option<usize>>,
    params: Vec<LayerParams<T>>,
    macs: AtomicU64,
}

impl<T: Scalar> Clone for Stack<T> {
    fn clone(&self) -> Self {
        Stack {
            specs: self.specs.clone(),
            shapes: self.shapes.clone(),
            slots: self.slots.clone(),
            params: self.params.clone(),
            macs: AtomicU64::new(self.macs.load(Ordering::Relaxed)),
        }
    }
}

enum Cache<T> {
    None,
    Pool(PoolIndices),
    Mask(DropoutMask<T>),
}

/// Everything the backward pass needs from one training forward pass.
pub struct Trace<T> {
    /// The stack input followed by the output of every layer.
    pub activations: Vec<Tensor<T>>,
    caches: Vec<Cache<T>>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.activations.last().expect("trace holds the input")
    }
}

impl<T: Scalar> Stack<T> {
    /// Builds a stack, drawing initial parameters for layer `i` from
    /// `rng_for(i)`.
    pub fn init<R: Rng>(
        specs: &[LayerSpec],
        input: &[usize],
        mut rng_for: impl FnMut(usize) -> R,
    ) -> Result<Self> {
        let shapes = shapes_through(input, specs)?;
        let params = specs
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.init_params(&shapes[i], &mut rng_for(i)))
            .collect();
        Self::with_params(specs, input, params)
    }

    pub fn with_params(
        specs: &[LayerSpec],
        input: &[usize],
        params: Vec<LayerParams<T>>,
    ) -> Result<Self> {
        let shapes = shapes_through(input, specs)?;
        let mut slots = Vec::with_capacity(specs.len());
        let mut next = 0;
        for (i, spec) in specs.iter().enumerate() {
            match spec.param_shapes(&shapes[i]) {
                Some((w, b)) => {
                    let p = params
                        .get(next)
                        .ok_or_else(|| Error::Shape(format!("missing parameters for layer {i}")))?;
                    if p.weights.shape() != w || p.biases.shape() != b {
                        return Err(Error::Shape(format!(
                            "layer {i} ({}) expects weights {w:?}, got {:?}",
                            spec.notation(),
                            p.weights.shape()
                        )));
                    }
                    slots.push(Some(next));
                    next += 1;
                }
                None => slots.push(None),
            }
        }
        if next != params.len() {
            return Err(Error::Shape(format!(
                "{} parameter sets supplied for {next} parameterized layers",
                params.len()
            )));
        }
        Ok(Stack {
            specs: specs.to_vec(),
            shapes,
            slots,
            params,
            macs: AtomicU64::new(0),
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("shapes include the input")
    }

    pub fn params(&self) -> &[LayerParams<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<LayerParams<T>> {
        self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(LayerParams::param_count).sum()
    }

    /// Multiply-accumulates executed so far by forward and backward passes.
    pub fn macs(&self) -> u64 {
        self.macs.load(Ordering::Relaxed)
    }

    pub fn reset_macs(&self) {
        self.macs.store(0, Ordering::Relaxed);
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() == 0 || x.shape()[1..] != self.shapes[0][..] {
            return Err(Error::Shape(format!(
                "stack expects samples of shape {:?}, got {:?}",
                self.shapes[0],
                x.shape()
            )));
        }
        Ok(())
    }

    /// Inference pass; dropout is inactive.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for i in 0..self.specs.len() {
            cur = self.layer_forward(i, &cur, None)?.0;
        }
        Ok(cur)
    }

    /// Training pass keeping every activation for [`Stack::backward`].
    pub fn forward_train<R: RngCore>(&self, x: &Tensor<T>, rng: &mut R) -> Result<Trace<T>> {
        self.check_input(x)?;
        let mut activations = vec![x.clone()];
        let mut caches = Vec::with_capacity(self.specs.len());
        for i in 0..self.specs.len() {
            let (out, cache) =
                self.layer_forward(i, &activations[i], Some(&mut *rng as &mut dyn RngCore))?;
            activations.push(out);
            caches.push(cache);
        }
        Ok(Trace {
            activations,
            caches,
        })
    }

    fn layer_forward(
        &self,
        i: usize,
        x: &Tensor<T>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Tensor<T>, Cache<T>)> {
        let batch = x.batch() as u64;
        let spec = &self.specs[i];
        self.macs
            .fetch_add(batch * spec.macs(&self.shapes[i])?, Ordering::Relaxed);
        Ok(match *spec {
            LayerSpec::Conv {
                stride, pad, relu, ..
            } => {
                let out = conv2d_forward(x, self.param(i), stride, pad)?;
                (if relu { relu_forward(&out) } else { out }, Cache::None)
            }
            LayerSpec::Fc { relu, .. } => {
                let out = fc_forward(x, self.param(i))?;
                (if relu { relu_forward(&out) } else { out }, Cache::None)
            }
            LayerSpec::MaxPool { window, stride } => {
                let (out, idx) = maxpool_forward(x, window, stride)?;
                (out, Cache::Pool(idx))
            }
            LayerSpec::AvgPool { window, stride } => {
                (avgpool_forward(x, window, stride)?, Cache::None)
            }
            LayerSpec::Dropout { rate } => match rng {
                Some(rng) => {
                    let (out, mask) = dropout_forward(x, rate, true, rng)?;
                    (out, Cache::Mask(mask))
                }
                None => (x.clone(), Cache::None),
            },
        })
    }

    fn param(&self, i: usize) -> &LayerParams<T> {
        &self.params[self.slots[i].expect("parameterized layer")]
    }

    /// Back-propagates `grad_out` (gradient of the loss with respect to the
    /// stack output). Returns the input gradient, or `None` when it is not
    /// requested, and one gradient per parameter set.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        grad_out: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<Gradients<T>> {
        grad_out.check_same_shape(trace.output())?;
        let mut grads: Vec<Option<LayerParams<T>>> = vec![None; self.params.len()];
        let mut g = grad_out.clone();
        for i in (0..self.specs.len()).rev() {
            let input = &trace.activations[i];
            let output = &trace.activations[i + 1];
            let want_input = need_input_grad || i > 0;
            let batch = input.batch() as u64;
            match (&self.specs[i], &trace.caches[i]) {
                (
                    &LayerSpec::Conv {
                        stride, pad, relu, ..
                    },
                    _,
                ) => {
                    let gz = if relu { relu_backward(output, &g)? } else { g };
                    let (gi, gp) =
                        conv2d_backward(input, self.param(i), &gz, stride, pad, want_input)?;
                    grads[self.slots[i].unwrap()] = Some(gp);
                    g = gi;
                }
                (&LayerSpec::Fc { relu, .. }, _) => {
                    let gz = if relu { relu_backward(output, &g)? } else { g };
                    let (gi, gp) = fc_backward(input, self.param(i), &gz, want_input)?;
                    grads[self.slots[i].unwrap()] = Some(gp);
                    g = if want_input {
                        gi.reshape(input.shape())?
                    } else {
                        gi
                    };
                }
                (LayerSpec::MaxPool { .. }, Cache::Pool(idx)) => {
                    g = maxpool_backward(input.shape(), idx, &g)?;
                }
                (&LayerSpec::AvgPool { window, stride }, _) => {
                    g = avgpool_backward(input.shape(), window, stride, &g)?;
                }
                (LayerSpec::Dropout { .. }, Cache::Mask(mask)) => {
                    g = dropout_backward(mask, &g)?;
                }
                (spec, _) => {
                    return Err(Error::Shape(format!(
                        "trace does not belong to layer {i} ({})",
                        spec.notation()
                    )))
                }
            }
            self.macs.fetch_add(
                2 * batch * self.specs[i].macs(&self.shapes[i])?,
                Ordering::Relaxed,
            );
        }
        let grads = grads
            .into_iter()
            .map(|g| g.expect("every layer visited"))
            .collect();
        Ok((need_input_grad.then_some(g), grads))
    }
}
