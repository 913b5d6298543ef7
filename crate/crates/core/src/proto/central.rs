use rand::seq::SliceRandom;
use rand::RngCore;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::Stack;
use crate::nn::softmax_cross_entropy;
use crate::optim::{sgd_step, OptimState, SgdConfig};

/// Schedule for ordinary single-party training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CentralConfig {
    pub epochs: usize,
    pub batch: usize,
    pub sgd: SgdConfig,
    pub shuffle: bool,
}

/// Trains every layer of `stack` on `data`, continuing a learning-rate
/// schedule that has already seen `epochs_done` epochs. Returns the mean
/// loss of the last epoch.
pub fn train_centralized<R: RngCore>(
    stack: &mut Stack,
    data: &Dataset,
    cfg: &CentralConfig,
    epochs_done: usize,
    rng: &mut R,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("nothing to train on".into()));
    }
    let mut opt = OptimState::new(cfg.sgd, stack.params()).with_epochs_elapsed(epochs_done);
    let mut last = 0.0;
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        if cfg.shuffle {
            order.shuffle(rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let batch = data.subset(chunk);
            let trace = stack.forward_train(&batch.images, rng)?;
            let (loss, grad) = softmax_cross_entropy(trace.output(), &batch.labels)?;
            total += loss as f64 * chunk.len() as f64;
            let (_, grads) = stack.backward(&trace, &grad, false)?;
            sgd_step(stack.params_mut(), &grads, &mut opt)?;
        }
        opt.end_epoch();
        last = total / data.len() as f64;
    }
    Ok(last)
}
