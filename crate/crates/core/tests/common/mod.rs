#![allow(dead_code)]

use resbridge::bridge::{loss_and_grads, loss_with_draws, Batch, BridgeConfig, LossDraws, SourceMode};
use resbridge::models::{init_params, Activation, Arch, ModelBundle};
use resbridge::numerics::{RngStream, StreamLabel, Tape, Tensor};
use resbridge::synth::NormStats;

/// A width-8 bundle with every parameter drawn at random, plus a batch and
/// fixed draws, all from `seed`.
pub fn small_problem(seed: u64, act: Activation) -> (ModelBundle, Batch, LossDraws) {
    let arch = Arch {
        horizon: 8,
        action_dim: 2,
        cond_width: 6,
        anchor_hidden: vec![8, 8],
        velocity_hidden: vec![8, 8],
        activation: act,
        dropout: 0.0,
    };
    let mut s = RngStream::new(seed, StreamLabel::Init);
    let mut bundle = init_params(&arch, NormStats::identity(2), &mut s).unwrap();
    for p in &mut bundle.params {
        *p = s.normal_tensor(p.shape()).scale(0.5);
    }
    let n = 4;
    let w = arch.traj_width();
    let batch = Batch {
        cond: s.normal_tensor(&[n, 6]),
        x1: s.normal_tensor(&[n, w]),
        semantic: s.normal_tensor(&[n, w]),
    };
    let draws = LossDraws {
        eps: s.normal_tensor(&[n, w]),
        t: (0..n).map(|_| 0.05 + 0.9 * s.uniform()).collect(),
    };
    (bundle, batch, draws)
}

/// Largest element-wise relative error between `grads` and five-point
/// central differences of `f` with step `h`, over the tensors in `which`.
pub fn max_fd_error(
    bundle: &ModelBundle,
    grads: &[Tensor],
    which: std::ops::Range<usize>,
    f: impl Fn(&ModelBundle) -> f64,
    h: f64,
) -> f64 {
    let mut worst = 0.0f64;
    let mut b = bundle.clone();
    for pi in which {
        for k in 0..grads[pi].numel() {
            let orig = b.params[pi].data()[k];
            let mut at = |dx: f64| {
                b.params[pi].data_mut()[k] = orig + dx;
                f(&b)
            };
            let num = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
            b.params[pi].data_mut()[k] = orig;
            let ana = grads[pi].data()[k];
            let denom = ana.abs().max(num.abs()).max(1e-8);
            worst = worst.max((ana - num).abs() / denom);
        }
    }
    worst
}

/// Tape gradients of the total loss in `bundle.params` order.
pub fn tape_grads(bundle: &ModelBundle, batch: &Batch, draws: &LossDraws, cfg: &BridgeConfig) -> Vec<Tensor> {
    loss_and_grads(bundle, batch, draws, cfg, &mut Tape::new(), None).unwrap().1
}

/// Worst relative error over all parameters. With the coupled graph the
/// objective is the total loss. With stop-gradient the anchor only sees
/// `lambda_sem * sem`, so that is what its gradients are checked against.
pub fn loss_fd_error(bundle: &ModelBundle, batch: &Batch, draws: &LossDraws, cfg: &BridgeConfig) -> f64 {
    let h = 1e-4;
    let grads = tape_grads(bundle, batch, draws, cfg);
    let total = |b: &ModelBundle| loss_with_draws(b, batch, draws, cfg).unwrap().total;
    let sem = |b: &ModelBundle| cfg.lambda_sem * loss_with_draws(b, batch, draws, cfg).unwrap().sem;
    let n = bundle.params.len();
    if cfg.anchor_stopgrad && cfg.source_mode == SourceMode::Anchored {
        let a = max_fd_error(bundle, &grads, bundle.anchor_range(), sem, h);
        let v = max_fd_error(bundle, &grads, bundle.velocity_range(), total, h);
        a.max(v)
    } else {
        max_fd_error(bundle, &grads, 0..n, total, h)
    }
}
