//! Arc-length over chord-length of fine-grained sampling paths; a straight
//! path scores zero.

mod shared;

use resbridge::diagnostics::straightness_report;
use resbridge::synth::Split;

fn main() -> resbridge::Result<()> {
    let p = shared::pair(1500)?;
    let (cond, _) = p.ds.split_tensors(Split::Val);
    let r = straightness_report(&p.variants(), &cond, 32, 0)?;
    for l in ["anchored", "gaussian"] {
        println!(
            "{l:<9} mean deficit {:.5}  min {:.2e}",
            r.get(&format!("{l}.mean_deficit")).unwrap_or(f64::NAN),
            r.get(&format!("{l}.min_deficit")).unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
