//! Monte-Carlo error of a mid-rise quantizer against the `Δ²/12` floor.

use resbridge::diagnostics::quantization_sweep;
use resbridge::numerics::{RngStream, StreamLabel};

fn main() -> resbridge::Result<()> {
    let deltas = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0];
    let r = quantization_sweep(&deltas, 1_000_000, &mut RngStream::new(0, StreamLabel::Diagnostics))?;
    println!("delta   mse           delta^2/12    rel. deviation");
    for d in deltas {
        let g = |k: &str| r.get(&format!("delta={d}.{k}")).unwrap_or(f64::NAN);
        println!("{d:<6}  {:<12.6e}  {:<12.6e}  {:.2e}", g("mse"), g("analytic"), g("relative_deviation"));
    }
    println!("passed: {}", r.passed());
    Ok(())
}
