#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teefl_core::nn::*;
use teefl_core::tensor::Scalar;
use teefl_core::zoo::{ArchOptions, ModelSpec};
use teefl_core::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn desk_lenet() -> ModelSpec {
    ModelSpec::from_arch(
        "lenet-desk",
        "C20-MP-C50-MP-FC500-FC10",
        &[1, 14, 14],
        ArchOptions {
            kernel: 5,
            pad: 2,
            pool_window: 2,
        },
    )
    .unwrap()
}

pub fn uniform<T: Scalar>(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n)
            .map(|_| <T as Scalar>::from_f64(r.gen_range(lo..hi)))
            .collect(),
    )
    .unwrap()
}

/// Values whose magnitude is at least `gap`, so no kink sits within a
/// finite-difference step.
pub fn away_from_zero<T: Scalar>(shape: &[usize], gap: f64, r: &mut ChaCha8Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.gen_range(gap..1.0);
            <T as Scalar>::from_f64(if r.gen_bool(0.5) { m } else { -m })
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Distinct values spaced at least `gap` apart, in random order.
pub fn distinct<T: Scalar>(shape: &[usize], gap: f64, r: &mut ChaCha8Rng) -> Tensor<T> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * gap).collect();
    vals.shuffle(r);
    Tensor::from_vec(
        shape,
        vals.into_iter().map(<T as Scalar>::from_f64).collect(),
    )
    .unwrap()
}

/// `||a - b|| / (||a|| + ||b||)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale =
        a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn projected<T: Scalar>(out: &Tensor<T>, weights: &[f64]) -> f64 {
    out.data()
        .iter()
        .zip(weights)
        .map(|(o, w)| Scalar::to_f64(*o) * w)
        .sum()
}

/// Compares analytic gradients of `sum(weights * forward(inputs))` with
/// central differences on up to `coords` entries of every input. Returns
/// the worst relative error over the inputs.
pub fn check_gradients<T: Scalar>(
    inputs: &[Tensor<T>],
    forward: impl Fn(&[Tensor<T>]) -> Tensor<T>,
    backward: impl Fn(&[Tensor<T>], &Tensor<T>) -> Vec<Tensor<T>>,
    step: f64,
    coords: usize,
    r: &mut ChaCha8Rng,
) -> f64 {
    let out = forward(inputs);
    let weights: Vec<f64> = (0..out.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
    let grad_out = Tensor::from_vec(
        out.shape(),
        weights
            .iter()
            .map(|&w| <T as Scalar>::from_f64(w))
            .collect(),
    )
    .unwrap();
    let analytic = backward(inputs, &grad_out);
    assert_eq!(analytic.len(), inputs.len());
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        assert_eq!(analytic[k].shape(), input.shape());
        let picks: Vec<usize> = if input.len() <= coords {
            (0..input.len()).collect()
        } else {
            (0..coords).map(|_| r.gen_range(0..input.len())).collect()
        };
        let mut a = Vec::new();
        let mut n = Vec::new();
        for &i in &picks {
            let mut shifted = inputs.to_vec();
            let base = Scalar::to_f64(shifted[k].data()[i]);
            shifted[k].data_mut()[i] = <T as Scalar>::from_f64(base + step);
            let plus = projected(&forward(&shifted), &weights);
            shifted[k].data_mut()[i] = <T as Scalar>::from_f64(base - step);
            let minus = projected(&forward(&shifted), &weights);
            // The step actually taken after rounding to T.
            let h = Scalar::to_f64(<T as Scalar>::from_f64(base + step))
                - Scalar::to_f64(<T as Scalar>::from_f64(base - step));
            n.push((plus - minus) / h);
            a.push(Scalar::to_f64(analytic[k].data()[i]));
        }
        worst = worst.max(relative_error(&a, &n));
    }
    worst
}

pub fn conv_params<T: Scalar>(parts: &[Tensor<T>]) -> LayerParams<T> {
    LayerParams::new(ParamKind::Conv, parts[1].clone(), parts[2].clone()).unwrap()
}

pub fn fc_params<T: Scalar>(parts: &[Tensor<T>]) -> LayerParams<T> {
    LayerParams::new(ParamKind::Fc, parts[1].clone(), parts[2].clone()).unwrap()
}

/// Worst relative errors of one random instance of every backward op.
pub struct OpErrors {
    pub name: &'static str,
    pub worst: f64,
}

pub const GRADIENT_INSTANCES: u64 = 20;

/// Runs `GRADIENT_INSTANCES` random instances of each op at precision `T`.
pub fn all_op_errors<T: Scalar>(step: f64, seed: u64) -> Vec<OpErrors> {
    let mut r = rng(seed);
    let mut results = Vec::new();
    let mut record = |name: &'static str, errs: Vec<f64>| {
        results.push(OpErrors {
            name,
            worst: errs.into_iter().fold(0.0, f64::max),
        })
    };

    let errs = (0..GRADIENT_INSTANCES)
        .map(|_| {
            let (n, c, f) = (r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..4));
            let k = r.gen_range(1..4);
            let (stride, pad) = (r.gen_range(1..3), r.gen_range(0..2));
            let side = r.gen_range(k.max(3)..7);
            let inputs = vec![
                uniform::<T>(&[n, c, side, side], -1.0, 1.0, &mut r),
                uniform::<T>(&[f, c, k, k], -1.0, 1.0, &mut r),
                uniform::<T>(&[f], -1.0, 1.0, &mut r),
            ];
            check_gradients(
                &inputs,
                |p| conv2d_forward(&p[0], &conv_params(p), stride, pad).unwrap(),
                |p, g| {
                    let (gi, gp) =
                        conv2d_backward(&p[0], &conv_params(p), g, stride, pad, true).unwrap();
                    vec![gi, gp.weights, gp.biases]
                },
                step,
                40,
                &mut r,
            )
        })
        .collect();
    record("conv2d", errs);

    let errs = (0..GRADIENT_INSTANCES)
        .map(|_| {
            let (n, ins, outs) = (r.gen_range(1..4), r.gen_range(1..12), r.gen_range(1..8));
            let inputs = vec![
                uniform::<T>(&[n, ins], -1.0, 1.0, &mut r),
                uniform::<T>(&[outs, ins], -1.0, 1.0, &mut r),
                uniform::<T>(&[outs], -1.0, 1.0, &mut r),
            ];
            check_gradients(
                &inputs,
                |p| fc_forward(&p[0], &fc_params(p)).unwrap(),
                |p, g| {
                    let (gi, gp) = fc_backward(&p[0], &fc_params(p), g, true).unwrap();
                    vec![gi, gp.weights, gp.biases]
                },
                step,
                40,
                &mut r,
            )
        })
        .collect();
    record("fc", errs);

    let errs = (0..GRADIENT_INSTANCES)
        .map(|_| {
            let (window, stride) = (r.gen_range(1..4), r.gen_range(1..3));
            let side = r.gen_range(window..7);
            let shape = [r.gen_range(1..3), r.gen_range(1..3), side, side];
            let inputs = vec![distinct::<T>(&shape, 0.05, &mut r)];
            check_gradients(
                &inputs,
                |p| maxpool_forward(&p[0], window, stride).unwrap().0,
                |p, g| {
                    let (_, idx) = maxpool_forward(&p[0], window, stride).unwrap();
                    vec![maxpool_backward(p[0].shape(), &idx, g).unwrap()]
                },
                step,
                40,
                &mut r,
            )
        })
        .collect();
    record("maxpool", errs);

    let errs = (0..GRADIENT_INSTANCES)
        .map(|_| {
            let (window, stride) = (r.gen_range(1..4), r.gen_range(1..3));
            let side = r.gen_range(window..7);
            let shape = [r.gen_range(1..3), r.gen_range(1..3), side, side];
            let inputs = vec![uniform::<T>(&shape, -1.0, 1.0, &mut r)];
            check_gradients(
                &inputs,
                |p| avgpool_forward(&p[0], window, stride).unwrap(),
                |p, g| vec![avgpool_backward(p[0].shape(), window, stride, g).unwrap()],
                step,
                40,
                &mut r,
            )
        })
        .collect();
    record("avgpool", errs);

    let errs = (0..GRADIENT_INSTANCES)
        .map(|_| {
            let shape = [r.gen_range(1..4), r.gen_range(1..10)];
            let inputs = vec![away_from_zero::<T>(&shape, 0.1, &mut r)];
            check_gradients(
                &inputs,
                |p| relu_forward(&p[0]),
                |p, g| vec![relu_backward(&relu_forward(&p[0]), g).unwrap()],
                step,
                40,
                &mut r,
            )
        })
        .collect();
    record("relu", errs);

    let errs = (0..GRADIENT_INSTANCES)
        .map(|i| {
            let shape = [r.gen_range(1..4), r.gen_range(1..10)];
            let rate = r.gen_range(0.1..0.7);
            let inputs = vec![uniform::<T>(&shape, -1.0, 1.0, &mut r)];
            let mask_seed = 1000 + i;
            check_gradients(
                &inputs,
                |p| {
                    dropout_forward(&p[0], rate, true, &mut rng(mask_seed))
                        .unwrap()
                        .0
                },
                |p, g| {
                    let (_, mask) =
                        dropout_forward(&p[0], rate, true, &mut rng(mask_seed)).unwrap();
                    vec![dropout_backward(&mask, g).unwrap()]
                },
                step,
                40,
                &mut r,
            )
        })
        .collect();
    record("dropout", errs);

    let errs = (0..GRADIENT_INSTANCES)
        .map(|_| {
            let (n, k) = (r.gen_range(1..5), r.gen_range(2..10));
            let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
            let inputs = vec![uniform::<T>(&[n, k], -3.0, 3.0, &mut r)];
            // A scalar output: the loss itself, weighted by the random probe.
            check_gradients(
                &inputs,
                |p| {
                    let (loss, _) = softmax_cross_entropy(&p[0], &labels).unwrap();
                    Tensor::from_vec(&[1], vec![loss]).unwrap()
                },
                |p, g| {
                    let (_, grad) = softmax_cross_entropy(&p[0], &labels).unwrap();
                    vec![grad.scale(g.data()[0])]
                },
                step,
                40,
                &mut r,
            )
        })
        .collect();
    record("softmax_cross_entropy", errs);

    results
}

use rand::seq::SliceRandom;
use teefl_core::data::{partition, Dataset, PartitionPlan, SynthTask};
use teefl_core::network::Stack;
use teefl_core::optim::{sgd_step, OptimState};
use teefl_core::proto::{init_head, server_init_unit, Federation, FederationConfig};
use teefl_core::rng::stream;
use teefl_core::zoo::{TrainingPlan, Unit};

/// A federation over an IID split of the synthetic task.
pub fn synth_federation(
    spec: ModelSpec,
    cfg: FederationConfig,
    train: usize,
    test: usize,
    noise: f64,
) -> Federation {
    let task = SynthTask::new(10, cfg.seed).with_noise(noise);
    let (train, test) = task.split(train, test).unwrap();
    let shards: Vec<Dataset> = partition(&train.labels, &PartitionPlan::iid(cfg.clients, cfg.seed))
        .unwrap()
        .iter()
        .map(|idx| train.subset(idx))
        .collect();
    let budgets = vec![1 << 30; cfg.clients];
    Federation::new(cfg, spec, shards, &budgets, test).unwrap()
}

/// Unit and head trained the ordinary way, one process, no enclave: the
/// frozen prefix runs forward only, then momentum SGD on the unit and head.
#[allow(clippy::too_many_arguments)]
pub fn standalone_unit_training(
    spec: &ModelSpec,
    plan: &TrainingPlan,
    u: usize,
    prefix_params: Vec<LayerParams>,
    data: &Dataset,
    cfg: &FederationConfig,
    round: usize,
    epochs_before: usize,
) -> (Vec<LayerParams>, usize) {
    let unit: &Unit = &plan.units[u];
    let prefix = Stack::with_params(
        &spec.layers[..unit.layers.start],
        &spec.input,
        prefix_params,
    )
    .unwrap();
    let mut layers = spec.layers[unit.layers.clone()].to_vec();
    layers.extend_from_slice(&unit.head);
    let mut params = server_init_unit(spec, unit, cfg.seed);
    let unit_sets = params.len();
    params.extend(init_head(spec, unit, u, cfg.seed));
    let mut model = Stack::with_params(&layers, &spec.shape_at(unit.layers.start), params).unwrap();
    let mut opt = OptimState::new(cfg.sgd, model.params()).with_epochs_elapsed(epochs_before);
    let mut r = stream(cfg.seed, "client", &[u as u64, round as u64, 0]);
    let mut steps = 0;
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut r);
        for chunk in order.chunks(cfg.batch) {
            let batch = data.subset(chunk);
            let x = prefix.forward(&batch.images).unwrap();
            let trace = model.forward_train(&x, &mut r).unwrap();
            let (_, g) = softmax_cross_entropy(trace.output(), &batch.labels).unwrap();
            let (_, grads) = model.backward(&trace, &g, false).unwrap();
            sgd_step(model.params_mut(), &grads, &mut opt).unwrap();
            steps += 1;
        }
        opt.end_epoch();
    }
    let mut out = model.into_params();
    out.truncate(unit_sets);
    (out, steps)
}
