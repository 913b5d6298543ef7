use rand::Rng;

use super::{LayerParams, ParamKind};
use crate::tensor::{Scalar, Tensor};

fn glorot<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| T::from_f64(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape and length agree")
}

/// Uniform in `±sqrt(6/(fan_in+fan_out))`, zero biases.
pub fn glorot_conv<T: Scalar, R: Rng + ?Sized>(
    filters: usize,
    channels: usize,
    kernel: usize,
    rng: &mut R,
) -> LayerParams<T> {
    let area = kernel * kernel;
    LayerParams {
        kind: ParamKind::Conv,
        weights: glorot(
            &[filters, channels, kernel, kernel],
            channels * area,
            filters * area,
            rng,
        ),
        biases: Tensor::zeros(&[filters]),
    }
}

pub fn glorot_fc<T: Scalar, R: Rng + ?Sized>(
    outputs: usize,
    inputs: usize,
    rng: &mut R,
) -> LayerParams<T> {
    LayerParams {
        kind: ParamKind::Fc,
        weights: glorot(&[outputs, inputs], inputs, outputs, rng),
        biases: Tensor::zeros(&[outputs]),
    }
}
