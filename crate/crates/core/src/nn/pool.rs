use super::conv_output_dim;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Flat input offsets of the maximum chosen for each output cell.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolIndices(pub Vec<usize>);

fn out_dims<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize) -> Result<[usize; 4]> {
    if input.rank() != 4 {
        return Err(Error::Dimension {
            axis: "rank",
            expected: 4,
            actual: input.rank(),
        });
    }
    let s = input.shape();
    let oh = conv_output_dim(s[2], window, stride, 0).ok_or(Error::Dimension {
        axis: "height",
        expected: window,
        actual: s[2],
    })?;
    let ow = conv_output_dim(s[3], window, stride, 0).ok_or(Error::Dimension {
        axis: "width",
        expected: window,
        actual: s[3],
    })?;
    Ok([s[0], s[1], oh, ow])
}

/// Max pooling; ties resolve to the first index in row-major scan order.
pub fn maxpool_forward<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, PoolIndices)> {
    let dims = out_dims(input, window, stride)?;
    let [n, c, oh, ow] = dims;
    let (h, w) = (input.shape()[2], input.shape()[3]);
    let mut out = Tensor::zeros(&dims);
    let mut idx = Vec::with_capacity(out.len());
    let src = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..window {
                    for kx in 0..window {
                        let i = base + (oy * stride + ky) * w + ox * stride + kx;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                }
                out.data_mut()[(plane * oh + oy) * ow + ox] = src[best];
                idx.push(best);
            }
        }
    }
    Ok((out, PoolIndices(idx)))
}

pub fn maxpool_backward<T: Scalar>(
    input_shape: &[usize],
    indices: &PoolIndices,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if indices.0.len() != grad_out.len() {
        return Err(Error::Shape(format!(
            "maxpool grad_out has {} cells, forward produced {}",
            grad_out.len(),
            indices.0.len()
        )));
    }
    let mut grad = Tensor::zeros(input_shape);
    for (&i, &g) in indices.0.iter().zip(grad_out.data()) {
        grad.data_mut()[i] += g;
    }
    Ok(grad)
}

pub fn avgpool_forward<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let dims = out_dims(input, window, stride)?;
    let [n, c, oh, ow] = dims;
    let (h, w) = (input.shape()[2], input.shape()[3]);
    let norm = T::from_f64(1.0 / (window * window) as f64);
    let mut out = Tensor::zeros(&dims);
    let src = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for ky in 0..window {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..window {
                        acc += src[row + kx];
                    }
                }
                out.data_mut()[(plane * oh + oy) * ow + ox] = acc * norm;
            }
        }
    }
    Ok(out)
}

pub fn avgpool_backward<T: Scalar>(
    input_shape: &[usize],
    window: usize,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let probe = Tensor::<T>::zeros(input_shape);
    let dims = out_dims(&probe, window, stride)?;
    if grad_out.shape() != dims {
        return Err(Error::Shape(format!(
            "avgpool grad_out {:?} does not match output {dims:?}",
            grad_out.shape()
        )));
    }
    let [n, c, oh, ow] = dims;
    let (h, w) = (input_shape[2], input_shape[3]);
    let norm = T::from_f64(1.0 / (window * window) as f64);
    let mut grad = probe;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out.data()[(plane * oh + oy) * ow + ox] * norm;
                for ky in 0..window {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..window {
                        grad.data_mut()[row + kx] += g;
                    }
                }
            }
        }
    }
    Ok(grad)
}
