#![allow(dead_code)]

use interpnet::autodiff::{NodeId, Tape};
use interpnet::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-5;
/// Denominator floor for the relative error, so gradients near zero are
/// compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-3;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks stay out of reach of the
/// finite-difference step.
pub fn random_off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    random_tensor(rng, shape).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

/// Worst relative error between the tape gradient of `build` and central
/// differences, over every element of every input.
///
/// `build` records a graph on the given input nodes; its output is reduced
/// to a scalar by a fixed random projection.
pub fn check_gradients(
    inputs: &[Tensor],
    rng: &mut ChaCha8Rng,
    build: impl Fn(&mut Tape, &[NodeId]) -> NodeId,
) -> f64 {
    let forward = |values: &[Tensor], proj: Option<&Tensor>| -> (Tape, Vec<NodeId>, NodeId, NodeId) {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|v| tape.variable(v.clone())).collect();
        let out = build(&mut tape, &ids);
        let proj = match proj {
            Some(p) => p.clone(),
            None => Tensor::ones(tape.value(out).shape()),
        };
        let w = tape.constant(proj);
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod).unwrap();
        (tape, ids, out, loss)
    };

    let (probe, _, out, _) = forward(inputs, None);
    let proj = random_tensor(rng, probe.value(out).shape());
    let (tape, ids, _, loss) = forward(inputs, Some(&proj));
    let grads = tape.gradients(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(ids[k], &tape);
        for i in 0..input.numel() {
            let eval = |delta: f64| {
                let mut vals = inputs.to_vec();
                vals[k].data_mut()[i] += delta;
                let (t, _, _, l) = forward(&vals, Some(&proj));
                t.value(l).data()[0]
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    worst
}
