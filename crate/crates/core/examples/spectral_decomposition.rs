//! Splits a synthetic reach trajectory into its low-frequency intent and the
//! high-frequency residual, for a few cutoffs.

use resbridge::spectral::{dct_forward, decompose};
use resbridge::synth::{generate_task, TaskSpec};

fn main() -> resbridge::Result<()> {
    let spec = TaskSpec {
        samples: 4,
        ..TaskSpec::default()
    };
    let ds = generate_task(&spec)?;
    let x = ds.raw_trajectory(0);
    let c = dct_forward(&x);

    println!("coefficient energy per frequency (both dims):");
    for k in 0..x.horizon() {
        let e: f64 = (0..x.dims()).map(|d| c.coeff(k, d).powi(2)).sum();
        println!("  k={k:>2}  {e:.5}");
    }

    println!("\ncutoff  |x_S|^2    |x_E|^2    <x_S,x_E>");
    for cutoff in [1, 2, 4, 8, 16] {
        let d = decompose(&x, cutoff)?;
        println!(
            "{cutoff:>6}  {:<9.5}  {:<9.5}  {:+.1e}",
            d.semantic.sq_norm(),
            d.execution.sq_norm(),
            d.semantic.dot(&d.execution)
        );
    }

    let d = decompose(&x, 4)?;
    println!("\nstep   x              x_S            x_E");
    for j in 0..x.horizon() {
        println!(
            "{j:>4}   {:+.3} {:+.3}   {:+.3} {:+.3}   {:+.3} {:+.3}",
            x.at(j, 0),
            x.at(j, 1),
            d.semantic.at(j, 0),
            d.semantic.at(j, 1),
            d.execution.at(j, 0),
            d.execution.at(j, 1)
        );
    }
    Ok(())
}
