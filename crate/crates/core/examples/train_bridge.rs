//! Trains the anchored bridge on the default reach task and saves a
//! checkpoint.
//!
//! `cargo run --release --example train_bridge -- [steps] [out.rvbm]`

use resbridge::cli::checkpoint_of;
use resbridge::config::RunConfig;
use resbridge::formats::write_checkpoint;
use resbridge::models::ModelKind;
use resbridge::synth::generate_task;
use resbridge::train::{fit, METRICS_HEADER};

fn main() -> resbridge::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map_or(2000, |s| s.parse().expect("steps"));
    let out = args.next();

    let mut cfg = RunConfig::default();
    cfg.optimizer.total_steps = steps;
    cfg.optimizer.warmup_steps = steps / 8;
    cfg.validate()?;
    let ds = generate_task(&cfg.task)?;

    println!("{METRICS_HEADER}");
    let trainer = fit(&cfg, &ds, ModelKind::Bridge, |row, _| {
        println!("{}", row.csv_line());
        Ok(())
    })?;
    println!("{} parameters", trainer.bundle.param_count());

    if let Some(path) = out {
        write_checkpoint(path.as_ref(), &checkpoint_of(&trainer, &cfg, false))?;
        println!("wrote {path}");
    }
    Ok(())
}
