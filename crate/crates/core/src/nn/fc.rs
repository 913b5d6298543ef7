use super::{LayerParams, ParamKind};
use crate::error::{Error, Result};
use crate::tensor::{axpy, dot, Scalar, Tensor};

fn check<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<(usize, usize, usize)> {
    if params.kind != ParamKind::Fc {
        return Err(Error::Shape("fc requires FC parameters".into()));
    }
    let (outs, ins) = (params.weights.shape()[0], params.weights.shape()[1]);
    if input.rank() < 2 {
        return Err(Error::Dimension {
            axis: "rank",
            expected: 2,
            actual: input.rank(),
        });
    }
    if input.row_len() != ins {
        return Err(Error::Dimension {
            axis: "features",
            expected: ins,
            actual: input.row_len(),
        });
    }
    Ok((input.batch(), ins, outs))
}

/// `out = W·in + b` per batch row; inputs of any rank are flattened per row.
pub fn fc_forward<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    let (batch, ins, outs) = check(input, params)?;
    let w = params.weights.data();
    let b = params.biases.data();
    let mut out = Tensor::zeros(&[batch, outs]);
    for n in 0..batch {
        let x = &input.data()[n * ins..(n + 1) * ins];
        let dst = &mut out.data_mut()[n * outs..(n + 1) * outs];
        for o in 0..outs {
            dst[o] = dot(&w[o * ins..(o + 1) * ins], x) + b[o];
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_params)`; the input gradient keeps the input's
/// shape, or is empty when `need_input_grad` is false.
pub fn fc_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<(Tensor<T>, LayerParams<T>)> {
    let (batch, ins, outs) = check(input, params)?;
    if grad_out.shape() != [batch, outs] {
        return Err(Error::Shape(format!(
            "fc grad_out {:?} does not match output [{batch}, {outs}]",
            grad_out.shape()
        )));
    }
    let w = params.weights.data();
    let mut grads = params.zeros_like();
    let mut grad_input = if need_input_grad {
        Tensor::zeros(input.shape())
    } else {
        Tensor::zeros(&[0])
    };
    for n in 0..batch {
        let x = &input.data()[n * ins..(n + 1) * ins];
        let go = &grad_out.data()[n * outs..(n + 1) * outs];
        let gw = grads.weights.data_mut();
        for o in 0..outs {
            axpy(go[o], x, &mut gw[o * ins..(o + 1) * ins]);
        }
        let gb = grads.biases.data_mut();
        for o in 0..outs {
            gb[o] += go[o];
        }
        if need_input_grad {
            let gi = &mut grad_input.data_mut()[n * ins..(n + 1) * ins];
            for o in 0..outs {
                axpy(go[o], &w[o * ins..(o + 1) * ins], gi);
            }
        }
    }
    Ok((grad_input, grads))
}
