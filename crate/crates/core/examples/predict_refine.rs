//! Predict-Refine sampling: the anchor network predicts the coarse motion and
//! the flow adds the residual. Shows both parts for one condition and how
//! the endpoint error changes with the number of Euler steps.

use resbridge::bridge::sample;
use resbridge::config::RunConfig;
use resbridge::models::ModelKind;
use resbridge::numerics::{RngStream, StreamLabel};
use resbridge::spectral::Trajectory;
use resbridge::synth::{endpoint_error, generate_task, Split};
use resbridge::train::fit;

fn main() -> resbridge::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.optimizer.total_steps = 1500;
    cfg.optimizer.warmup_steps = 200;
    let ds = generate_task(&cfg.task)?;
    eprintln!("training {} steps...", cfg.optimizer.total_steps);
    let bundle = fit(&cfg, &ds, ModelKind::Bridge, |_, _| Ok(()))?.bundle;

    let (cond, x1) = ds.split_tensors(Split::Val);
    let one = cond.select_rows(&[0]);
    let mut stream = RngStream::new(0, StreamLabel::Eval);
    let tr = sample(&one, &bundle, &bundle, 8, &cfg.bridge, &mut stream, false)?;
    println!("step   anchor            residual          output            truth   (normalized)");
    for j in 0..ds.horizon {
        let k = 2 * j;
        let f = |t: &resbridge::numerics::Tensor| format!("{:+.3} {:+.3}", t.row(0)[k], t.row(0)[k + 1]);
        println!(
            "{j:>4}   {}    {}    {}    {:+.3} {:+.3}",
            f(&tr.anchor),
            f(&tr.residual),
            f(&tr.output),
            x1.row(0)[k],
            x1.row(0)[k + 1]
        );
    }

    println!("\nnfe  mean endpoint error (first 500 validation conditions)");
    let idx: Vec<usize> = (0..500).collect();
    let c = cond.select_rows(&idx);
    for nfe in [1, 2, 4, 8, 16] {
        let mut stream = RngStream::new(0, StreamLabel::Eval);
        let tr = sample(&c, &bundle, &bundle, nfe, &cfg.bridge, &mut stream, false)?;
        let err: f64 = (0..c.rows())
            .map(|i| {
                let t = Trajectory::new(ds.horizon, ds.action_dim, tr.output.row(i).to_vec()).expect("shape");
                endpoint_error(&t, c.row(i), &cfg.task, &bundle.norm)
            })
            .sum::<f64>()
            / c.rows() as f64;
        println!("{nfe:>3}  {err:.4}");
    }
    Ok(())
}
