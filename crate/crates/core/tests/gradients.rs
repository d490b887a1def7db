mod common;

use resbridge::bridge::{loss_and_grads, loss_with_draws, record_loss, BridgeConfig, LossDraws};
use resbridge::models::Activation;
use resbridge::numerics::Tape;

use common::{loss_fd_error, small_problem};

#[test]
fn total_loss_gradients_match_finite_differences() {
    for (seed, act) in (1..=12).map(|s| (s, if s % 2 == 0 { Activation::Gelu } else { Activation::Tanh })) {
        let (bundle, batch, draws) = small_problem(seed, act);
        for stopgrad in [true, false] {
            let cfg = BridgeConfig {
                anchor_stopgrad: stopgrad,
                ..BridgeConfig::default()
            };
            let err = loss_fd_error(&bundle, &batch, &draws, &cfg);
            assert!(err < 1e-4, "{act:?} stopgrad={stopgrad}: rel err {err:e}");
        }
        let err = loss_fd_error(&bundle, &batch, &draws, &BridgeConfig::gaussian());
        assert!(err < 1e-4, "{act:?} gaussian: rel err {err:e}");
    }
}

#[test]
fn stopgrad_blocks_flow_gradient_into_anchor() {
    let (bundle, batch, draws) = small_problem(3, Activation::Tanh);
    let cfg = BridgeConfig {
        lambda_sem: 0.0,
        ..BridgeConfig::default()
    };
    let (_, grads) = loss_and_grads(&bundle, &batch, &draws, &cfg, &mut Tape::new(), None).unwrap();
    for g in &grads[bundle.anchor_range()] {
        assert!(g.data().iter().all(|&v| v == 0.0));
    }
    assert!(grads[bundle.velocity_range()].iter().any(|g| g.max_abs() > 0.0));

    let coupled = BridgeConfig {
        anchor_stopgrad: false,
        ..cfg
    };
    let (_, grads) = loss_and_grads(&bundle, &batch, &draws, &coupled, &mut Tape::new(), None).unwrap();
    assert!(grads[bundle.anchor_range()].iter().any(|g| g.max_abs() > 0.0));
}

#[test]
fn zero_velocity_flow_loss_is_mean_target_energy() {
    let (mut bundle, batch, draws) = small_problem(4, Activation::Tanh);
    let vr = bundle.velocity_range();
    for p in &mut bundle.params[vr] {
        *p = p.scale(0.0);
    }
    let cfg = BridgeConfig::default();
    let parts = loss_with_draws(&bundle, &batch, &draws, &cfg).unwrap();

    // u = x1 - x0 with x0 = mu + sigma_min * eps, mean over every element
    let mu = bundle.anchor_predict(&batch.cond).unwrap();
    let x0 = mu.add(&draws.eps.scale(cfg.sigma_min)).unwrap();
    let u = batch.x1.sub(&x0).unwrap();
    let expect = u.sq_norm() / u.numel() as f64;
    assert!((parts.flow - expect).abs() < 1e-12 * expect.max(1.0), "{} vs {expect}", parts.flow);
    let sem = mu.sub(&batch.semantic).unwrap().sq_norm() / mu.numel() as f64;
    assert!((parts.total - (cfg.lambda_sem * sem + expect)).abs() < 1e-12 * parts.total.max(1.0));
}

#[test]
fn recorded_graph_exposes_its_pieces() {
    let (bundle, batch, _) = small_problem(5, Activation::Tanh);
    let draws = LossDraws::zeros_at(batch.len(), bundle.arch.traj_width(), 0.5);
    let mut tape = Tape::new();
    let g = record_loss(&mut tape, &bundle, &batch, &draws, &BridgeConfig::default(), true, None).unwrap();
    assert_eq!(tape.value(g.mu).shape(), batch.x1.shape());
    assert_eq!(tape.value(g.velocity).shape(), batch.x1.shape());
    let grads = tape.backward(g.flow).unwrap();
    assert!(grads.wrt(g.cond).is_some());
}
