mod common;

use common::{check_gradients, random_off_kink, random_tensor, relative_error, FD_STEP, FD_TOLERANCE};
use interpnet::autodiff::{NodeId, Tape};
use interpnet::classifier::{Classifier, ClassifierConfig, Variant};
use interpnet::explainer::{lstm_cell, Explainer, ExplainerConfig, LstmCellParams, Vocabulary};
use interpnet::training::explainer_batch_loss;
use interpnet::{Params, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 10;

fn for_seeds(name: &str, mut f: impl FnMut(&mut ChaCha8Rng) -> f64) {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let err = f(&mut rng);
        assert!(err <= FD_TOLERANCE, "{name}, seed {seed}: relative error {err:e}");
    }
}

fn unary(name: &str, shape: &[usize], op: fn(&mut Tape, NodeId) -> NodeId) {
    for_seeds(name, |rng| {
        let x = random_off_kink(rng, shape);
        check_gradients(&[x], rng, |t, ids| op(t, ids[0]))
    });
}

#[test]
fn matmul() {
    for_seeds("matmul", |rng| {
        let a = random_tensor(rng, &[3, 4]);
        let b = random_tensor(rng, &[4, 2]);
        check_gradients(&[a, b], rng, |t, ids| t.matmul(ids[0], ids[1]).unwrap())
    });
}

#[test]
fn add_mul_scale() {
    for_seeds("add", |rng| {
        let (a, b) = (random_tensor(rng, &[2, 3]), random_tensor(rng, &[2, 3]));
        check_gradients(&[a, b], rng, |t, ids| t.add(ids[0], ids[1]).unwrap())
    });
    for_seeds("mul", |rng| {
        let (a, b) = (random_tensor(rng, &[2, 3]), random_tensor(rng, &[2, 3]));
        check_gradients(&[a, b], rng, |t, ids| t.mul(ids[0], ids[1]).unwrap())
    });
    unary("scale", &[5], |t, x| t.scale(x, -2.5).unwrap());
}

#[test]
fn add_bias() {
    for_seeds("add_bias", |rng| {
        let (a, b) = (random_tensor(rng, &[4, 3]), random_tensor(rng, &[3]));
        check_gradients(&[a, b], rng, |t, ids| t.add_bias(ids[0], ids[1]).unwrap())
    });
}

#[test]
fn elementwise_nonlinearities() {
    unary("relu", &[3, 4], |t, x| t.relu(x).unwrap());
    unary("sigmoid", &[3, 4], |t, x| t.sigmoid(x).unwrap());
    unary("tanh", &[3, 4], |t, x| t.tanh(x).unwrap());
}

#[test]
fn softmax_family() {
    unary("softmax vector", &[5], |t, x| t.softmax(x).unwrap());
    unary("softmax rows", &[3, 4], |t, x| t.softmax(x).unwrap());
    unary("log_softmax rows", &[3, 4], |t, x| t.log_softmax(x).unwrap());
}

#[test]
fn structural_ops() {
    for_seeds("concat vectors", |rng| {
        let parts = vec![random_tensor(rng, &[2]), random_tensor(rng, &[3]), random_tensor(rng, &[1])];
        check_gradients(&parts, rng, |t, ids| t.concat(ids).unwrap())
    });
    for_seeds("concat matrices", |rng| {
        let parts = vec![random_tensor(rng, &[3, 2]), random_tensor(rng, &[3, 4])];
        check_gradients(&parts, rng, |t, ids| t.concat(ids).unwrap())
    });
    for_seeds("stack_rows", |rng| {
        let parts = vec![random_tensor(rng, &[3]), random_tensor(rng, &[3])];
        check_gradients(&parts, rng, |t, ids| t.stack_rows(ids).unwrap())
    });
    unary("slice_cols", &[3, 6], |t, x| t.slice_cols(x, 2, 3).unwrap());
    unary("row_select with repeats", &[4, 3], |t, x| t.row_select(x, &[2, 0, 2]).unwrap());
}

#[test]
fn reductions_and_losses() {
    unary("sum", &[3, 2], |t, x| t.sum(x).unwrap());
    unary("mean", &[3, 2], |t, x| t.mean(x).unwrap());
    for_seeds("mean_of", |rng| {
        let parts: Vec<Tensor> = (0..3).map(|_| random_tensor(rng, &[2])).collect();
        check_gradients(&parts, rng, |t, ids| {
            let sums: Vec<NodeId> = ids.iter().map(|&i| t.sum(i).unwrap()).collect();
            t.mean_of(&sums).unwrap()
        })
    });
    unary("cross_entropy of softmax", &[3, 4], |t, x| {
        let p = t.softmax(x).unwrap();
        t.cross_entropy(p, &[1, 3, 0]).unwrap()
    });
    unary("nll of log_softmax", &[3, 4], |t, x| {
        let lp = t.log_softmax(x).unwrap();
        t.nll(lp, &[2, 2, 0]).unwrap()
    });
}

#[test]
fn lstm_cell_all_inputs_and_params() {
    for_seeds("lstm_cell", |rng| {
        let (inp, hid) = (3, 2);
        let inputs = vec![
            random_tensor(rng, &[2, inp]),
            random_tensor(rng, &[2, hid]),
            random_tensor(rng, &[2, hid]),
            random_tensor(rng, &[inp, 4 * hid]),
            random_tensor(rng, &[hid, 4 * hid]),
            random_tensor(rng, &[4 * hid]),
        ];
        check_gradients(&inputs, rng, |t, ids| {
            let mut params = Params::new();
            let cell = LstmCellParams::new("cell", inp, hid);
            cell.init_zeros(&mut params);
            let mut nodes = cell.bind(&params, t, false).unwrap();
            nodes.input_weight = ids[3];
            nodes.hidden_weight = ids[4];
            nodes.bias = ids[5];
            let (h, c) = lstm_cell(t, &nodes, ids[0], ids[1], ids[2]).unwrap();
            t.concat(&[h, c]).unwrap()
        })
    });
}

fn perturbed_gradient_error(
    params: &Params,
    analytic: &std::collections::BTreeMap<String, Tensor>,
    loss_at: impl Fn(&Params) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (name, value) in params.iter() {
        for i in 0..value.numel() {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.get_mut(name).unwrap().data_mut()[i] += delta;
                loss_at(&p)
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[name].data()[i], numeric));
        }
    }
    worst
}

#[test]
fn classifier_loss_gradients() {
    for_seeds("L_C", |rng| {
        let config = ClassifierConfig {
            input_dim: 3,
            hidden_dims: vec![4, 3],
            num_classes: 3,
        };
        let model = Classifier::new(config.clone(), rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let xs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let ys = [0, 2, 1, 1, 0];
        let (_, grads) = model.loss_and_gradients(&xs, &ys).unwrap();
        perturbed_gradient_error(model.params(), &grads, |p| {
            Classifier::from_params(config.clone(), p.clone())
                .unwrap()
                .loss(&xs, &ys)
                .unwrap()
        })
    });
}

fn micro_explainer(rng: &mut ChaCha8Rng, r_dim: usize) -> Explainer {
    let vocab = Vocabulary::build(["red wing.", "blue wing."], 1);
    assert_eq!(vocab.len(), 6);
    let config = ExplainerConfig {
        vocab_size: vocab.len(),
        embed_dim: 3,
        hidden_dim: 4,
        r_dim,
        max_decode_len: 5,
    };
    Explainer::new(config, vocab, rng).unwrap()
}

#[test]
fn explanation_loss_gradients() {
    for_seeds("L_E", |rng| {
        let explainer = micro_explainer(rng, 3);
        let r: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tokens = explainer.vocab().training_sequence("red wing.");
        let (_, grads) = explainer.loss_and_gradients(&r, &tokens).unwrap();
        perturbed_gradient_error(explainer.params(), &grads, |p| {
            Explainer::from_params(explainer.config().clone(), explainer.vocab().clone(), p.clone())
                .unwrap()
                .explanation_loss(&r, &tokens)
                .unwrap()
        })
    });
}

#[test]
fn explanation_loss_gradient_wrt_r() {
    for_seeds("L_E wrt r", |rng| {
        let explainer = micro_explainer(rng, 3);
        let r = random_tensor(rng, &[1, 3]);
        let tokens = explainer.vocab().training_sequence("blue wing.");
        check_gradients(&[r], rng, |t, ids| {
            let nodes = explainer.bind(t, false).unwrap();
            explainer.loss_node(t, &nodes, ids[0], &tokens).unwrap()
        })
    });
}

#[test]
fn batched_explanation_loss_gradients() {
    for_seeds("batched L_E", |rng| {
        let c_config = ClassifierConfig::for_variant(Variant::InterpNet1, 2, 3, 2);
        let classifier = Classifier::new(c_config.clone(), rng).unwrap();
        let r_dim = c_config.representation_dim(Variant::InterpNet1.representation());
        let explainer = micro_explainer(rng, r_dim);
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let seqs = [
            explainer.vocab().training_sequence("red wing."),
            explainer.vocab().training_sequence("blue."),
            explainer.vocab().training_sequence("blue wing."),
        ];
        let batch: Vec<(&[f64], &[usize])> = xs
            .iter()
            .zip(&seqs)
            .map(|(x, s)| (x.as_slice(), s.as_slice()))
            .collect();
        let (_, grads) =
            explainer_batch_loss(&classifier, &explainer, Variant::InterpNet1, &batch, true).unwrap();
        let explainer_grads = grads
            .into_iter()
            .filter(|(k, _)| k.starts_with("explainer."))
            .collect();
        perturbed_gradient_error(explainer.params(), &explainer_grads, |p| {
            let e = Explainer::from_params(explainer.config().clone(), explainer.vocab().clone(), p.clone())
                .unwrap();
            explainer_batch_loss(&classifier, &e, Variant::InterpNet1, &batch, false)
                .unwrap()
                .0
        })
    });
}

#[test]
fn batched_loss_equals_mean_of_single_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c_config = ClassifierConfig::for_variant(Variant::InterpNet0, 2, 3, 2);
    let classifier = Classifier::new(c_config, &mut rng).unwrap();
    let explainer = micro_explainer(&mut rng, 2);
    let xs = [vec![0.3, -0.2], vec![1.0, 0.5], vec![-0.7, 0.1]];
    let seqs = [
        explainer.vocab().training_sequence("red wing."),
        explainer.vocab().training_sequence("blue."),
        explainer.vocab().training_sequence("wing wing red."),
    ];
    let batch: Vec<(&[f64], &[usize])> = xs
        .iter()
        .zip(&seqs)
        .map(|(x, s)| (x.as_slice(), s.as_slice()))
        .collect();
    let (batched, _) =
        explainer_batch_loss(&classifier, &explainer, Variant::InterpNet0, &batch, false).unwrap();
    let singles: f64 = xs
        .iter()
        .zip(&seqs)
        .map(|(x, s)| {
            let (probs, _) = classifier.forward(x).unwrap();
            explainer.explanation_loss(&probs, s).unwrap()
        })
        .sum::<f64>()
        / 3.0;
    assert!((batched - singles).abs() < 1e-12, "{batched} vs {singles}");
}
