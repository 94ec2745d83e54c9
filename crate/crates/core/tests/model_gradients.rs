//! Finite-difference verification of every analytic gradient, plus the
//! balancedness conservation law under gradient descent.

mod support;

use muonlab_core::datagen::{
    balanced_small_init, gaussian_regression, make_source_encodings, routing_sample_batch, Rng,
};
use muonlab_core::linalg::Matrix;
use muonlab_core::models::{
    dln_batch_loss_grads, dln_population_grads, routing_batch_grads, DeepLinearNet,
    PopulationStats, RoutingNet,
};
use muonlab_core::optim::{Hyperparams, Optimizer, OptimizerKind};

const FD_STEP: f64 = 1e-5;
const FD_RTOL: f64 = 1e-4;

/// Central finite difference of a scalar loss with respect to one matrix
/// entry.
fn central_difference(mut loss: impl FnMut(&Matrix) -> f64, at: &Matrix, i: usize, j: usize) -> f64 {
    let mut plus = at.clone();
    plus.set(i, j, at.get(i, j) + FD_STEP);
    let mut minus = at.clone();
    minus.set(i, j, at.get(i, j) - FD_STEP);
    (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP)
}

fn assert_gradient_matches(analytic: &Matrix, numeric: impl Fn(usize, usize) -> f64, what: &str) {
    let mut max_scale = 0.0f64;
    for v in analytic.data() {
        max_scale = max_scale.max(v.abs());
    }
    for i in 0..analytic.rows() {
        for j in 0..analytic.cols() {
            let num = numeric(i, j);
            let ana = analytic.get(i, j);
            let tol = FD_RTOL * max_scale.max(1e-3);
            assert!(
                (num - ana).abs() <= tol,
                "{what}[{i},{j}]: analytic {ana} vs numeric {num}"
            );
        }
    }
}

#[test]
fn batch_gradients_match_finite_differences() {
    let mut rng = Rng::new(7);
    let (xs, ys, _) = gaussian_regression(&mut rng, 12, 3, 2, &[1.5, 0.7], 0.1).unwrap();
    let net = DeepLinearNet::new(
        rng.normal_matrix(5, 3, 0.5),
        rng.normal_matrix(2, 5, 0.5),
    )
    .unwrap();
    let (_, grad_u, grad_v) = dln_batch_loss_grads(&net, &xs, &ys).unwrap();

    assert_gradient_matches(
        &grad_u,
        |i, j| {
            central_difference(
                |u| {
                    let trial = DeepLinearNet::new(u.clone(), net.v.clone()).unwrap();
                    dln_batch_loss_grads(&trial, &xs, &ys).unwrap().0
                },
                &net.u,
                i,
                j,
            )
        },
        "grad_u",
    );
    assert_gradient_matches(
        &grad_v,
        |i, j| {
            central_difference(
                |v| {
                    let trial = DeepLinearNet::new(net.u.clone(), v.clone()).unwrap();
                    dln_batch_loss_grads(&trial, &xs, &ys).unwrap().0
                },
                &net.v,
                i,
                j,
            )
        },
        "grad_v",
    );
}

#[test]
fn population_gradients_match_finite_differences_of_large_sample_loss() {
    // The population formulas against the sampled loss on a large batch
    // approximating the statistics.
    let mut rng = Rng::new(9);
    let n = 60_000;
    let (xs, ys, stats) = gaussian_regression(&mut rng, n, 3, 2, &[2.0, 1.0], 0.0).unwrap();
    let net = DeepLinearNet::new(
        rng.normal_matrix(4, 3, 0.4),
        rng.normal_matrix(2, 4, 0.4),
    )
    .unwrap();
    let (_, grad_u_pop, grad_v_pop) = dln_population_grads(&net, &stats).unwrap();
    let (_, grad_u_smp, grad_v_smp) = dln_batch_loss_grads(&net, &xs, &ys).unwrap();
    // Sampling error of the empirical moments is O(1/sqrt(n)); 1e-4
    // relative needs the large batch.
    let scale = grad_u_pop
        .data()
        .iter()
        .chain(grad_v_pop.data())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    for (p, s) in grad_u_pop.data().iter().zip(grad_u_smp.data()) {
        assert!((p - s).abs() <= 0.02 * scale, "population vs sampled grad_u");
    }
    for (p, s) in grad_v_pop.data().iter().zip(grad_v_smp.data()) {
        assert!((p - s).abs() <= 0.02 * scale, "population vs sampled grad_v");
    }

    // And the exact finite-difference check on the population loss
    // itself (which is quadratic in the weights, so differences are
    // clean).
    let (_, grad_u, grad_v) = dln_population_grads(&net, &stats).unwrap();
    assert_gradient_matches(
        &grad_u,
        |i, j| {
            central_difference(
                |u| {
                    let trial = DeepLinearNet::new(u.clone(), net.v.clone()).unwrap();
                    dln_population_grads(&trial, &stats).unwrap().0
                },
                &net.u,
                i,
                j,
            )
        },
        "population grad_u",
    );
    assert_gradient_matches(
        &grad_v,
        |i, j| {
            central_difference(
                |v| {
                    let trial = DeepLinearNet::new(net.u.clone(), v.clone()).unwrap();
                    dln_population_grads(&trial, &stats).unwrap().0
                },
                &net.v,
                i,
                j,
            )
        },
        "population grad_v",
    );
}

#[test]
fn routing_gradients_match_finite_differences() {
    let mut rng = Rng::new(11);
    let sources = 3;
    let encodings = make_source_encodings(&mut rng, sources, 2, 4).unwrap();
    let targets = vec![vec![1.0, 0.0, 0.5], vec![0.0, -1.0, 0.25]];
    let batch = routing_sample_batch(&mut rng, sources, 2, 2, &encodings, &targets).unwrap();

    let hidden_dim = 6;
    let net = RoutingNet::new(
        (0..sources)
            .map(|_| rng.normal_matrix(hidden_dim, 4, 0.4))
            .collect(),
        rng.normal_matrix(hidden_dim, hidden_dim, 0.4),
        (0..sources)
            .map(|_| rng.normal_matrix(3, hidden_dim, 0.4))
            .collect(),
    )
    .unwrap();

    let (_, grads) = routing_batch_grads(&net, &batch).unwrap();

    let loss_with_hidden = |h: &Matrix| {
        let trial = RoutingNet::new(net.encoders.clone(), h.clone(), net.decoders.clone()).unwrap();
        routing_batch_grads(&trial, &batch).unwrap().0
    };
    assert_gradient_matches(
        &grads.hidden,
        |i, j| central_difference(loss_with_hidden, &net.hidden, i, j),
        "hidden grad",
    );

    for enc_idx in 0..sources {
        let loss_with_enc = |e: &Matrix| {
            let mut encoders = net.encoders.clone();
            encoders[enc_idx] = e.clone();
            let trial = RoutingNet::new(encoders, net.hidden.clone(), net.decoders.clone()).unwrap();
            routing_batch_grads(&trial, &batch).unwrap().0
        };
        assert_gradient_matches(
            &grads.encoders[enc_idx],
            |i, j| central_difference(loss_with_enc, &net.encoders[enc_idx], i, j),
            &format!("encoder {enc_idx} grad"),
        );
    }

    for dec_idx in 0..sources {
        let loss_with_dec = |d: &Matrix| {
            let mut decoders = net.decoders.clone();
            decoders[dec_idx] = d.clone();
            let trial = RoutingNet::new(net.encoders.clone(), net.hidden.clone(), decoders).unwrap();
            routing_batch_grads(&trial, &batch).unwrap().0
        };
        assert_gradient_matches(
            &grads.decoders[dec_idx],
            |i, j| central_difference(loss_with_dec, &net.decoders[dec_idx], i, j),
            &format!("decoder {dec_idx} grad"),
        );
    }
}

#[test]
fn balancedness_is_conserved_along_gradient_descent() {
    // From an exactly balanced start, the flow conserves V^T V - U U^T;
    // the discrete scheme drifts only at O(eta^2) per step.
    let mut rng = Rng::new(13);
    let (_, _, stats) = gaussian_regression(&mut rng, 4, 2, 2, &[2.0, 1.0], 0.0).unwrap();
    let mut net = balanced_small_init(&mut rng, 2, 16, 2, 0.01, true).unwrap();
    assert!(net.balancedness_gap() <= 1e-12);

    let eta = 1e-3;
    let mut optimizer = Optimizer::new(
        OptimizerKind::Gd,
        Hyperparams {
            learning_rate: eta,
            ..Hyperparams::default()
        },
    )
    .unwrap();
    let steps = 1000u64;
    for _ in 0..steps {
        let (_, gu, gv) = dln_population_grads(&net, &stats).unwrap();
        let grads = [gu, gv];
        let mut params = [&mut net.u, &mut net.v];
        optimizer.step(&mut params, &grads).unwrap();
    }
    let gap = net.balancedness_gap();
    assert!(gap <= 1e-6, "gap after {steps} steps: {gap}");
    // Per-step drift bound: linear in eta^2 with an O(s^2) constant;
    // factor 20 is a frozen regression margin.
    assert!(
        gap <= 20.0 * steps as f64 * eta * eta,
        "gap {gap} above the eta^2 drift bound"
    );
}

#[test]
fn optimizer_step_leaves_unrouted_layers_bitwise_unchanged() {
    // A batch touching only source pair (0, 0) must leave every other
    // encoder and decoder untouched by the whole gradient + step path.
    use muonlab_core::datagen::{RoutingBatch, RoutingSample};
    let mut rng = Rng::new(17);
    let sources = 3;
    let hidden_dim = 6;
    for kind in [
        OptimizerKind::MomentumGd,
        OptimizerKind::SpectralGd,
        OptimizerKind::Muon,
        OptimizerKind::Adam,
    ] {
        let mut net = RoutingNet::new(
            (0..sources)
                .map(|_| rng.normal_matrix(hidden_dim, 4, 0.3))
                .collect(),
            rng.normal_matrix(hidden_dim, hidden_dim, 0.3),
            (0..sources)
                .map(|_| rng.normal_matrix(3, hidden_dim, 0.3))
                .collect(),
        )
        .unwrap();
        let before_enc: Vec<Matrix> = net.encoders[1..].to_vec();
        let before_dec: Vec<Matrix> = net.decoders[1..].to_vec();
        let batch = RoutingBatch {
            sources,
            shifts: 1,
            samples: vec![RoutingSample {
                in_src: 0,
                out_src: 0,
                number: 0,
                x: vec![1.0, -0.5, 0.25, 0.0],
                y: vec![0.3, 0.9, -0.2],
            }],
        };
        let (_, grads) = routing_batch_grads(&net, &batch).unwrap();
        let grads = grads.flatten();
        let mut optimizer = Optimizer::new(kind, Hyperparams::default()).unwrap();
        let mut params = net.params_mut();
        optimizer.step(&mut params, &grads).unwrap();
        assert_eq!(net.encoders[1..], before_enc[..], "{kind:?} touched encoder 1/2");
        assert_eq!(net.decoders[1..], before_dec[..], "{kind:?} touched decoder 1/2");
    }
}

#[test]
fn population_stats_require_symmetry() {
    let bad = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
    let sigma_yx = Matrix::zeros(2, 2);
    assert!(PopulationStats::new(bad, sigma_yx).is_err());
}
