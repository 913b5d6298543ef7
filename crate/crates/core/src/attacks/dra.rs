use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::ObservedGradients;
use crate::error::{Error, Result};
use crate::network::Stack;
use crate::nn::{softmax_cross_entropy, LayerParams};
use crate::tensor::{mse, Tensor};
use crate::zoo::ModelSpec;

/// Per-pixel update direction of the reconstruction optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescentRule {
    /// Raw gradient. Struggles with the jumps ReLU masks put into the
    /// matching loss.
    Gradient,
    /// Sign of the gradient, i.e. steepest descent in the max norm.
    Sign,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DraConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub rule: DescentRule,
    /// Length of the parameter-space probe used for the second derivative.
    pub probe: f64,
}

impl Default for DraConfig {
    fn default() -> Self {
        DraConfig {
            iterations: 2000,
            step_size: 2e-3,
            rule: DescentRule::Sign,
            probe: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DraResult {
    pub reconstruction: Tensor<f64>,
    pub initial: Tensor<f64>,
    /// MSE between the reconstruction and the true input.
    pub mse: f64,
    /// MSE between the random starting point and the true input.
    pub baseline_mse: f64,
    pub label: Option<usize>,
    pub iterations: usize,
    pub final_match_loss: Option<f64>,
}

/// For a single sample, the output-bias gradient is `softmax - onehot`,
/// so its only negative entry marks the label.
pub fn infer_label(grads: &[LayerParams<f64>]) -> Option<usize> {
    let bias = grads.last()?.biases.data();
    let (idx, &min) = bias.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    (min < 0.0).then_some(idx)
}

fn param_grads(stack: &Stack<f64>, x: &Tensor<f64>, label: usize) -> Result<Vec<LayerParams<f64>>> {
    let trace = stack.forward_train(x, &mut rand::rngs::mock::StepRng::new(0, 0))?;
    let (_, g) = softmax_cross_entropy(trace.output(), &[label])?;
    Ok(stack.backward(&trace, &g, false)?.1)
}

fn input_grad(stack: &Stack<f64>, x: &Tensor<f64>, label: usize) -> Result<Tensor<f64>> {
    let trace = stack.forward_train(x, &mut rand::rngs::mock::StepRng::new(0, 0))?;
    let (_, g) = softmax_cross_entropy(trace.output(), &[label])?;
    Ok(stack
        .backward(&trace, &g, true)?
        .0
        .expect("input gradient requested"))
}

fn residual(a: &[LayerParams<f64>], b: &[LayerParams<f64>]) -> Vec<LayerParams<f64>> {
    a.iter()
        .zip(b)
        .map(|(a, b)| LayerParams {
            kind: a.kind,
            weights: a.weights.sub(&b.weights).expect("same layout"),
            biases: a.biases.sub(&b.biases).expect("same layout"),
        })
        .collect()
}

fn norm_sq(p: &[LayerParams<f64>]) -> f64 {
    p.iter().flat_map(|l| l.flat()).map(|v| v * v).sum()
}

fn shifted(params: &[LayerParams<f64>], dir: &[LayerParams<f64>], t: f64) -> Vec<LayerParams<f64>> {
    params
        .iter()
        .zip(dir)
        .map(|(p, d)| {
            let mut q = p.clone();
            for (a, &b) in q.weights.data_mut().iter_mut().zip(d.weights.data()) {
                *a += t * b;
            }
            for (a, &b) in q.biases.data_mut().iter_mut().zip(d.biases.data()) {
                *a += t * b;
            }
            q
        })
        .collect()
}

/// The gradient-matching loss `||g(x) - observed||^2` at `x` and its
/// input gradient. The latter is a Hessian-vector product, taken as a
/// central difference of `dL/dx` along the residual direction in parameter
/// space with step length `probe`.
pub fn matching_objective(
    spec: &ModelSpec,
    params: &[LayerParams<f64>],
    observed: &[LayerParams<f64>],
    x: &Tensor<f64>,
    label: usize,
    probe: f64,
) -> Result<(f64, Tensor<f64>)> {
    let stack = Stack::with_params(&spec.layers, &spec.input, params.to_vec())?;
    let r = residual(&param_grads(&stack, x, label)?, observed);
    let rn = norm_sq(&r);
    if rn == 0.0 {
        return Ok((0.0, Tensor::zeros(x.shape())));
    }
    let eps = probe / rn.sqrt();
    let plus = Stack::with_params(&spec.layers, &spec.input, shifted(params, &r, eps))?;
    let minus = Stack::with_params(&spec.layers, &spec.input, shifted(params, &r, -eps))?;
    let gp = input_grad(&plus, x, label)?;
    let gm = input_grad(&minus, x, label)?;
    let grad = gp.sub(&gm)?.scale(1.0 / eps);
    Ok((rn, grad))
}

/// Gradient-matching reconstruction of one training sample.
///
/// Starts from uniform noise and runs projected descent on
/// [`matching_objective`]. Without observed gradients, or when they are
/// all zero, the random starting point is returned unchanged.
pub fn dra_invert<R: Rng + ?Sized>(
    observed: Option<&ObservedGradients>,
    spec: &ModelSpec,
    target: &Tensor<f64>,
    cfg: &DraConfig,
    rng: &mut R,
) -> Result<DraResult> {
    let mut shape = vec![1];
    shape.extend_from_slice(&spec.input);
    if target.shape() != shape {
        return Err(Error::Shape(format!(
            "target must have shape {shape:?}, got {:?}",
            target.shape()
        )));
    }
    let initial = Tensor::from_vec(
        &shape,
        (0..target.len()).map(|_| rng.gen::<f64>()).collect(),
    )?;
    let baseline_mse = mse(&initial, target)?;
    let silent = observed.is_none_or(|o| o.grads.iter().all(|g| g.flat().all(|v| v == 0.0)));
    let Some(obs) = observed.filter(|_| !silent) else {
        return Ok(DraResult {
            reconstruction: initial.clone(),
            initial,
            mse: baseline_mse,
            baseline_mse,
            label: None,
            iterations: 0,
            final_match_loss: None,
        });
    };
    let label = infer_label(&obs.grads)
        .ok_or_else(|| Error::Attack("observed gradients carry no label signal".into()))?;
    let mut x = initial.clone();
    let mut loss = f64::INFINITY;
    let mut done = 0;
    while done < cfg.iterations {
        let (d, grad) = matching_objective(spec, &obs.params, &obs.grads, &x, label, cfg.probe)?;
        loss = d;
        if d == 0.0 {
            break;
        }
        for (xv, &g) in x.data_mut().iter_mut().zip(grad.data()) {
            let step = match cfg.rule {
                DescentRule::Gradient => g,
                DescentRule::Sign => g.signum(),
            };
            *xv = (*xv - cfg.step_size * step).clamp(0.0, 1.0);
        }
        done += 1;
    }
    Ok(DraResult {
        mse: mse(&x, target)?,
        reconstruction: x,
        initial,
        baseline_mse,
        label: Some(label),
        iterations: done,
        final_match_loss: Some(loss),
    })
}
