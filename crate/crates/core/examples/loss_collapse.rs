//! Norm of the per-sample flow-loss gradient with respect to the condition
//! input, for both source types at several times.

mod shared;

use resbridge::bridge::Batch;
use resbridge::diagnostics::loss_collapse_probe;
use resbridge::numerics::{RngStream, StreamLabel, Tensor};
use resbridge::spectral::{lowpass_rows, DctBasis};
use resbridge::synth::Split;

fn main() -> resbridge::Result<()> {
    let p = shared::pair(1500)?;
    let (cond, x1) = p.ds.split_tensors(Split::Val);
    let idx: Vec<usize> = (0..512).collect();
    let x1 = x1.select_rows(&idx);
    let sem = lowpass_rows(&DctBasis::new(p.ds.horizon), x1.data(), p.ds.action_dim, p.cfg.bridge.cutoff)?;
    let batch = Batch {
        cond: cond.select_rows(&idx),
        semantic: Tensor::new(x1.shape().to_vec(), sem)?,
        x1,
    };
    let times = [0.01, 0.05, 0.1, 0.25, 0.5, 0.9];
    let [a, g] = p.variants();
    let r = loss_collapse_probe(&a, &g, &batch, &times, &mut RngStream::new(0, StreamLabel::Diagnostics))?;
    println!("t      anchored     gaussian     ratio");
    for t in times {
        let m = |k: &str| r.get(&format!("t={t}.{k}")).unwrap_or(f64::NAN);
        println!("{t:<5}  {:<11.4e}  {:<11.4e}  {:.3}", m("anchored"), m("gaussian"), m("ratio"));
    }
    Ok(())
}
