use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax of `(batch, classes)` logits, stabilized by subtracting
/// the row maximum.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() != 2 {
        return Err(Error::Dimension {
            axis: "rank",
            expected: 2,
            actual: logits.rank(),
        });
    }
    let k = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(out)
}

/// Mean negative log-likelihood over the batch and its gradient
/// `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let probs = softmax(logits)?;
    let (batch, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != batch {
        return Err(Error::Dimension {
            axis: "labels",
            expected: batch,
            actual: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let inv_batch = T::from_f64(1.0 / batch as f64);
    let mut loss = T::zero();
    let mut grad = probs;
    for (n, &y) in labels.iter().enumerate() {
        let row = &mut grad.data_mut()[n * k..(n + 1) * k];
        // log-softmax computed from stabilized logits rather than log(prob)
        let lrow = &logits.data()[n * k..(n + 1) * k];
        let max = lrow.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = lrow.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        loss += lse - lrow[y];
        row[y] -= T::one();
        for v in row.iter_mut() {
            *v *= inv_batch;
        }
    }
    Ok((loss * inv_batch, grad))
}
