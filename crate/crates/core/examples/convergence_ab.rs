//! Trains both source types under one seed and budget and prints their
//! validation curves side by side.
//!
//! `cargo run --release --example convergence_ab -- [budget] [seed]`

use resbridge::config::RunConfig;
use resbridge::diagnostics::{convergence_ab, steps_to_target, ConvergenceSettings};
use resbridge::synth::generate_task;

fn main() -> resbridge::Result<()> {
    let mut args = std::env::args().skip(1);
    let budget: u64 = args.next().map_or(2500, |s| s.parse().expect("budget"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    cfg.optimizer.total_steps = budget;
    cfg.optimizer.warmup_steps = budget / 8;
    let ds = generate_task(&cfg.task)?;
    let settings = ConvergenceSettings {
        budget,
        parallel: true,
        ..ConvergenceSettings::default()
    };
    let out = convergence_ab(&cfg, &ds, &settings)?;
    println!("step    anchored  gaussian");
    for (a, g) in out.anchored.rows.iter().zip(&out.gaussian.rows) {
        println!("{:>5}   {:<8.4}  {:<8.4}", a.step, a.val_success, g.val_success);
    }
    for c in [&out.anchored, &out.gaussian] {
        let s = steps_to_target(&c.rows, settings.target);
        println!("{:<9} steps to {:.0}%: {}", c.label, settings.target * 100.0, s.map_or("never".into(), |s| s.to_string()));
    }
    Ok(())
}
