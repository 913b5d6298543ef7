use super::{LayerParams, ParamKind};
use crate::error::{Error, Result};
use crate::tensor::{axpy, dot, Scalar, Tensor};

/// Output extent of a convolution or pooling window along one axis.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct Geometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new<T: Scalar>(
        input: &Tensor<T>,
        params: &LayerParams<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if params.kind != ParamKind::Conv {
            return Err(Error::Shape("conv2d requires Conv parameters".into()));
        }
        if input.rank() != 4 {
            return Err(Error::Dimension {
                axis: "rank",
                expected: 4,
                actual: input.rank(),
            });
        }
        let s = input.shape();
        let w = params.weights.shape();
        if w[1] != s[1] {
            return Err(Error::Dimension {
                axis: "channels",
                expected: w[1],
                actual: s[1],
            });
        }
        let oh = conv_output_dim(s[2], w[2], stride, pad).ok_or(Error::Dimension {
            axis: "height",
            expected: w[2],
            actual: s[2] + 2 * pad,
        })?;
        let ow = conv_output_dim(s[3], w[3], stride, pad).ok_or(Error::Dimension {
            axis: "width",
            expected: w[3],
            actual: s[3] + 2 * pad,
        })?;
        Ok(Geometry {
            batch: s[0],
            channels: s[1],
            height: s[2],
            width: s[3],
            filters: w[0],
            kh: w[2],
            kw: w[3],
            oh,
            ow,
            stride,
            pad,
        })
    }

    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one sample into a `(patch, positions)` matrix.
    fn im2col<T: Scalar>(&self, sample: &[T], cols: &mut [T]) {
        let p = self.positions();
        for c in 0..self.channels {
            let plane = &sample[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            dst[oy * self.ow + ox] = if iy < 0
                                || ix < 0
                                || iy as usize >= self.height
                                || ix as usize >= self.width
                            {
                                T::zero()
                            } else {
                                plane[iy as usize * self.width + ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], sample: &mut [T]) {
        let p = self.positions();
        for c in 0..self.channels {
            let plane =
                &mut sample[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.height {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix as usize >= self.width {
                                continue;
                            }
                            plane[iy as usize * self.width + ix as usize] += src[oy * self.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input, params, stride, pad)?;
    let (patch, positions) = (g.patch(), g.positions());
    let in_row = g.channels * g.height * g.width;
    let out_row = g.filters * positions;
    let mut out = Tensor::zeros(&[g.batch, g.filters, g.oh, g.ow]);
    let mut cols = vec![T::zero(); patch * positions];
    let weights = params.weights.data();
    let biases = params.biases.data();
    for n in 0..g.batch {
        g.im2col(&input.data()[n * in_row..(n + 1) * in_row], &mut cols);
        let dst = &mut out.data_mut()[n * out_row..(n + 1) * out_row];
        for f in 0..g.filters {
            let acc = &mut dst[f * positions..(f + 1) * positions];
            acc.fill(biases[f]);
            let w_row = &weights[f * patch..(f + 1) * patch];
            for (k, &w) in w_row.iter().enumerate() {
                axpy(w, &cols[k * positions..(k + 1) * positions], acc);
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution given the upstream gradient.
///
/// When `need_input_grad` is false the returned input gradient is empty,
/// which the enclave uses for the first in-TEE layer (the prefix is frozen).
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_input_grad: bool,
) -> Result<(Tensor<T>, LayerParams<T>)> {
    let g = Geometry::new(input, params, stride, pad)?;
    let expected = [g.batch, g.filters, g.oh, g.ow];
    if grad_out.shape() != expected {
        return Err(Error::Shape(format!(
            "conv grad_out {:?} does not match output {:?}",
            grad_out.shape(),
            expected
        )));
    }
    let (patch, positions) = (g.patch(), g.positions());
    let in_row = g.channels * g.height * g.width;
    let out_row = g.filters * positions;
    let mut grads = params.zeros_like();
    let mut grad_input = if need_input_grad {
        Tensor::zeros(input.shape())
    } else {
        Tensor::zeros(&[0])
    };
    let mut cols = vec![T::zero(); patch * positions];
    let mut grad_cols = vec![T::zero(); patch * positions];
    let weights = params.weights.data();
    for n in 0..g.batch {
        g.im2col(&input.data()[n * in_row..(n + 1) * in_row], &mut cols);
        let go = &grad_out.data()[n * out_row..(n + 1) * out_row];
        {
            let gw = grads.weights.data_mut();
            for f in 0..g.filters {
                let go_f = &go[f * positions..(f + 1) * positions];
                for k in 0..patch {
                    gw[f * patch + k] += dot(go_f, &cols[k * positions..(k + 1) * positions]);
                }
            }
        }
        {
            let gb = grads.biases.data_mut();
            for f in 0..g.filters {
                gb[f] += go[f * positions..(f + 1) * positions]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
        }
        if need_input_grad {
            grad_cols.fill(T::zero());
            for f in 0..g.filters {
                let go_f = &go[f * positions..(f + 1) * positions];
                for k in 0..patch {
                    axpy(
                        weights[f * patch + k],
                        go_f,
                        &mut grad_cols[k * positions..(k + 1) * positions],
                    );
                }
            }
            g.col2im(
                &grad_cols,
                &mut grad_input.data_mut()[n * in_row..(n + 1) * in_row],
            );
        }
    }
    Ok((grad_input, grads))
}
