//! Regression to the mean on a task where each condition has two valid
//! goals: the regression model lands between them, bridge samples pick one.

use resbridge::bridge::sample;
use resbridge::cli::two_mode_config;
use resbridge::config::RunConfig;
use resbridge::diagnostics::{mode_coverage_report, Variant};
use resbridge::models::ModelKind;
use resbridge::numerics::{RngStream, StreamLabel};
use resbridge::synth::{generate_task, Split};
use resbridge::train::fit;

fn main() -> resbridge::Result<()> {
    let steps: u64 = std::env::args().nth(1).map_or(4000, |s| s.parse().expect("steps"));
    let mut base = RunConfig::default();
    base.optimizer.total_steps = steps;
    base.optimizer.warmup_steps = steps / 8;
    let cfg = two_mode_config(&base);
    let ds = generate_task(&cfg.task)?;
    eprintln!("training regression and bridge for {} steps", cfg.optimizer.total_steps);
    let (reg, bridge) = std::thread::scope(|s| {
        let r = s.spawn(|| fit(&cfg, &ds, ModelKind::Regression, |_, _| Ok(())));
        let b = s.spawn(|| fit(&cfg, &ds, ModelKind::Bridge, |_, _| Ok(())));
        (r.join().expect("thread"), b.join().expect("thread"))
    });
    let (reg, bridge) = (reg?.bundle, bridge?.bundle);

    let (cond, _) = ds.split_tensors(Split::Val);
    let one = cond.select_rows(&[0]);
    let goals = cfg.task.goals(one.row(0));
    println!("goals (raw): {goals:?}");
    let w = ds.traj_width();
    let denorm = |v: &[f64]| {
        let mut e = v[w - 2..].to_vec();
        reg.norm.denormalize_in_place(&mut e);
        e
    };
    println!("regression endpoint: {:?}", denorm(reg.anchor_predict(&one)?.row(0)));
    let mut s = RngStream::new(0, StreamLabel::Eval);
    for k in 0..6 {
        let tr = sample(&one, &bridge, &bridge, 8, &cfg.bridge, &mut s, false)?;
        println!("bridge draw {k}:       {:?}", denorm(tr.output.row(0)));
    }

    let v = Variant {
        label: "bridge",
        bundle: &bridge,
        bridge: &cfg.bridge,
    };
    let r = mode_coverage_report(&reg, &v, &cond, &cfg.task, 8, 8, 0)?;
    for (k, v) in &r.metrics {
        println!("{k:<36} {v:.4}");
    }
    Ok(())
}
