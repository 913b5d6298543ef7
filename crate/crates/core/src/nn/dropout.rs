use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-element scale applied in the forward pass: 0 for dropped elements,
/// `1/(1-rate)` for survivors, 1 everywhere when inactive.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T>(pub Option<Vec<T>>);

/// Inverted dropout: survivors are rescaled at train time so inference is a
/// pass-through.
pub fn dropout_forward<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor<T>, DropoutMask<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((input.clone(), DropoutMask(None)));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let data = input
        .data()
        .iter()
        .zip(&mask)
        .map(|(&x, &m)| x * m)
        .collect();
    Ok((
        Tensor::from_vec(input.shape(), data)?,
        DropoutMask(Some(mask)),
    ))
}

pub fn dropout_backward<T: Scalar>(
    mask: &DropoutMask<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    match &mask.0 {
        None => Ok(grad_out.clone()),
        Some(m) => {
            if m.len() != grad_out.len() {
                return Err(Error::Shape("dropout mask does not match gradient".into()));
            }
            let data = grad_out
                .data()
                .iter()
                .zip(m)
                .map(|(&g, &s)| g * s)
                .collect();
            Tensor::from_vec(grad_out.shape(), data)
        }
    }
}
