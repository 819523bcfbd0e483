use proptest::prelude::*;
use subsample_nn::alsh::AlshParams;
use subsample_nn::linalg::{DenseMatrix, Rng};
use subsample_nn::nn::{self, init_weights, Activation, Gradients, InitScheme, MlpModel};
use subsample_nn::policy::{backward_with_policy, forward_with_policy, ComputePolicy, PolicyKind};

const EPS: f64 = 1e-6;

fn random_batch(rows: usize, cols: usize, rng: &mut Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.uniform_range(-1.0, 1.0))
}

/// Loss of the network as `policy` computes it, with every random draw
/// replayed from `seed` so dropout masks stay fixed across perturbations.
fn policy_loss(model: &MlpModel, x: &DenseMatrix, y: &[usize], kind: PolicyKind, seed: u64) -> f64 {
    let mut policy = ComputePolicy::new(kind, model, 7).unwrap();
    let mut rng = Rng::new(seed, 0);
    let trace = forward_with_policy(model, x, &mut policy, &mut rng).unwrap();
    nn::nll_loss(&trace, y)
}

fn policy_grads(model: &MlpModel, x: &DenseMatrix, y: &[usize], kind: PolicyKind, seed: u64) -> Gradients {
    let mut policy = ComputePolicy::new(kind, model, 7).unwrap();
    let mut rng = Rng::new(seed, 0);
    let trace = forward_with_policy(model, x, &mut policy, &mut rng).unwrap();
    backward_with_policy(model, &trace, y, &mut policy, &mut rng).unwrap()
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// Largest relative deviation between the policy's gradient and central
/// differences of `loss` over every weight and bias.
fn max_fd_error(model: &MlpModel, grads: &Gradients, loss: impl Fn(&MlpModel) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let mut m = model.clone();
    for k in 0..model.n_layers() {
        for idx in 0..model.weights[k].as_slice().len() {
            let orig = m.weights[k].as_slice()[idx];
            m.weights[k].as_mut_slice()[idx] = orig + EPS;
            let up = loss(&m);
            m.weights[k].as_mut_slice()[idx] = orig - EPS;
            let down = loss(&m);
            m.weights[k].as_mut_slice()[idx] = orig;
            worst = worst.max(rel_err(grads.weights[k].as_slice()[idx], (up - down) / (2.0 * EPS)));
        }
        for j in 0..model.biases[k].len() {
            let orig = m.biases[k][j];
            m.biases[k].as_mut_slice()[j] = orig + EPS;
            let up = loss(&m);
            m.biases[k].as_mut_slice()[j] = orig - EPS;
            let down = loss(&m);
            m.biases[k].as_mut_slice()[j] = orig;
            worst = worst.max(rel_err(grads.biases[k][j], (up - down) / (2.0 * EPS)));
        }
    }
    worst
}

fn fixture(dims: &[usize], batch: usize, act: Activation, seed: u64) -> (MlpModel, DenseMatrix, Vec<usize>) {
    let mut model = init_weights(dims, InitScheme::HeUniform, seed).unwrap();
    model.hidden_activation = act;
    let mut rng = Rng::new(seed, 3);
    for b in &mut model.biases {
        for v in b.as_mut_slice() {
            *v = rng.uniform_range(-0.1, 0.1);
        }
    }
    let x = random_batch(batch, dims[0], &mut rng);
    let classes = *dims.last().unwrap();
    let y = (0..batch).map(|_| rng.below(classes)).collect();
    (model, x, y)
}

fn check(kind: PolicyKind, dims: &[usize], batch: usize, act: Activation, seed: u64) -> f64 {
    let (model, x, y) = fixture(dims, batch, act, seed);
    let g = policy_grads(&model, &x, &y, kind, seed);
    max_fd_error(&model, &g, |m| policy_loss(m, &x, &y, kind, seed))
}

#[test]
fn exact_gradients_match_finite_differences() {
    for act in [Activation::Relu, Activation::Linear] {
        let e = check(PolicyKind::Exact, &[5, 8, 6, 3], 4, act, 11);
        assert!(e <= 1e-4, "{act:?}: {e:e}");
    }
}

#[test]
fn full_keep_dropout_gradients() {
    let e = check(PolicyKind::Dropout { p_keep: 1.0 }, &[5, 8, 6, 3], 3, Activation::Relu, 12);
    assert!(e <= 1e-4, "{e:e}");
}

#[test]
fn masked_dropout_gradients_are_those_of_the_thinned_network() {
    let e = check(PolicyKind::Dropout { p_keep: 0.5 }, &[5, 12, 9, 3], 3, Activation::Relu, 13);
    assert!(e <= 1e-4, "{e:e}");
}

#[test]
fn full_budget_mc_gradients() {
    // k equal to the widest shared dimension makes every sampled product exact
    let e = check(PolicyKind::McBackprop { k_samples: 8 }, &[5, 8, 6, 3], 4, Activation::Relu, 14);
    assert!(e <= 1e-4, "{e:e}");
}

#[test]
fn saturated_adaptive_dropout_gradients() {
    let kind = PolicyKind::AdaptiveDropout { alpha: 0.0, beta: 50.0 };
    let e = check(kind, &[5, 8, 6, 3], 3, Activation::Relu, 15);
    assert!(e <= 1e-4, "{e:e}");
}

#[test]
fn all_active_alsh_gradients() {
    // one bit and many tables: every column shares a bucket with the query
    let kind = PolicyKind::Alsh {
        params: AlshParams {
            k_bits: 1,
            tables: 64,
            ..AlshParams::default()
        },
    };
    let (model, x, y) = fixture(&[4, 4, 3], 1, Activation::Relu, 16);
    let mut policy = ComputePolicy::new(kind, &model, 7).unwrap();
    let mut rng = Rng::new(0, 0);
    let trace = forward_with_policy(&model, &x, &mut policy, &mut rng).unwrap();
    assert_eq!(trace.masks[0].as_ref().unwrap().active[0], vec![0, 1, 2, 3]);
    let g = backward_with_policy(&model, &trace, &y, &mut policy, &mut rng).unwrap();
    assert_eq!(g, nn::backward(&model, &nn::forward_batch(&model, &x).unwrap(), &y).unwrap());
    let e = max_fd_error(&model, &g, |m| nn::nll_loss(&nn::forward_batch(m, &x).unwrap(), &y));
    assert!(e <= 1e-4, "{e:e}");
}

#[test]
fn mc_gradient_is_unbiased_on_average() {
    let (model, x, y) = fixture(&[6, 10, 4], 8, Activation::Relu, 17);
    let exact = nn::backward(&model, &nn::forward_batch(&model, &x).unwrap(), &y).unwrap();
    let kind = PolicyKind::McBackprop { k_samples: 3 };
    let mut policy = ComputePolicy::new(kind, &model, 0).unwrap();
    let mut rng = Rng::new(5, 0);
    let trials = 20_000;
    let mut mean = Gradients::zeros_like(&model);
    for _ in 0..trials {
        let t = forward_with_policy(&model, &x, &mut policy, &mut rng).unwrap();
        let g = backward_with_policy(&model, &t, &y, &mut policy, &mut rng).unwrap();
        for k in 0..model.n_layers() {
            mean.weights[k].axpy(1.0 / trials as f64, &g.weights[k]);
        }
    }
    let scale = exact.max_abs();
    for k in 0..model.n_layers() {
        let d = mean.weights[k].max_abs_diff(&exact.weights[k]);
        assert!(d < 0.05 * scale, "layer {k}: {d} vs scale {scale}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_architectures_have_correct_gradients(
        dims in prop::collection::vec(1usize..7, 2..5),
        classes in 2usize..5,
        batch in 1usize..3,
        seed in 0u64..1000,
        relu in any::<bool>(),
    ) {
        let mut dims = dims;
        dims.push(classes);
        let act = if relu { Activation::Relu } else { Activation::Linear };
        let widest = dims[1..].iter().copied().max().unwrap();
        for kind in [
            PolicyKind::Exact,
            PolicyKind::Dropout { p_keep: 1.0 },
            PolicyKind::McBackprop { k_samples: widest },
        ] {
            let e = check(kind, &dims, batch, act, seed);
            prop_assert!(e <= 1e-4, "{:?} {:?}: {:e}", kind, dims, e);
        }
    }
}
