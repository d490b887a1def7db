//! Validation success against the number of Euler steps for both source
//! types.

mod shared;

use resbridge::diagnostics::nfe_sweep;
use resbridge::synth::Split;

fn main() -> resbridge::Result<()> {
    let p = shared::pair(2000)?;
    let (cond, _) = p.ds.split_tensors(Split::Val);
    let nfes = [1, 2, 4, 8, 16, 32];
    let sweep = nfe_sweep(&p.variants(), &cond, &p.cfg.task, &nfes, p.cfg.train.eval_tol, 0)?;
    println!("nfe   anchored  gaussian   s/sample (anchored)");
    for n in nfes {
        let s = |l: &str| sweep.report.get(&format!("{l}.nfe={n}.success")).unwrap_or(f64::NAN);
        let secs = sweep
            .timings
            .iter()
            .find(|t| t.label == "anchored" && t.nfe == n)
            .map_or(f64::NAN, |t| t.seconds_per_sample);
        println!("{n:>3}   {:<8.4}  {:<8.4}   {secs:.2e}", s("anchored"), s("gaussian"));
    }
    println!("timing linear fit r^2: {:.4}", sweep.timing_r2("anchored"));
    Ok(())
}
