//! Kinetic transport cost of straight paths from the anchored source and
//! from standard noise, on the validation split.

mod shared;

use resbridge::diagnostics::transport_cost_report;
use resbridge::numerics::{RngStream, StreamLabel};

fn main() -> resbridge::Result<()> {
    let p = shared::pair(1500)?;
    let r = transport_cost_report(&p.ds, &p.anchored, &p.anchored_bridge, &mut RngStream::new(0, StreamLabel::Diagnostics))?;
    for (k, v) in &r.metrics {
        println!("{k:<30} {v:.6}");
    }
    for v in &r.verdicts {
        println!("{:<30} {}", v.name, if v.passed { "ok" } else { "failed" });
    }
    Ok(())
}
