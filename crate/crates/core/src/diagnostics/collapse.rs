use super::{Comparison, Curve, DiagnosticReport, Variant};
use crate::bridge::{record_loss, Batch, LossDraws};
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tape, Tensor};

/// Per-sample norms of `∂ flow_loss / ∂ condition` at a fixed time, with the
/// anchor left in the graph so the source's dependence on the condition is
/// differentiated too. The per-sample loss is the mean over its elements.
pub fn condition_gradient_norms(variant: &Variant<'_>, batch: &Batch, eps: &Tensor, t: f64) -> Result<Vec<f64>> {
    let mut bridge = variant.bridge.clone();
    bridge.anchor_stopgrad = false;
    let n = batch.len();
    let draws = LossDraws {
        eps: eps.clone(),
        t: vec![t; n],
    };
    let mut tape = Tape::new();
    let g = record_loss(&mut tape, variant.bundle, batch, &draws, &bridge, true, None)?;
    let grads = tape.backward(g.flow)?;
    let gc = grads.wrt_or_zeros(g.cond, batch.cond.shape());
    // The batch loss averages rows, so each row's own gradient is n times its share.
    Ok((0..n)
        .map(|i| n as f64 * gc.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Condition-gradient norms of the flow loss for an anchored and a
/// gaussian-source model at each `t`, on shared draws.
pub fn loss_collapse_probe(
    anchored: &Variant<'_>,
    gaussian: &Variant<'_>,
    batch: &Batch,
    t_values: &[f64],
    stream: &mut RngStream,
) -> Result<DiagnosticReport> {
    if t_values.is_empty() {
        return Err(Error::Invalid("need at least one t value".into()));
    }
    let mut ts = t_values.to_vec();
    ts.sort_by(f64::total_cmp);
    let eps = stream.normal_tensor(batch.x1.shape());
    let mut r = DiagnosticReport::new("collapse");
    r.metric("samples", batch.len() as f64);
    let (mut a_curve, mut g_curve, mut ratio_curve) = (Vec::new(), Vec::new(), Vec::new());
    for &t in &ts {
        let a = mean(&condition_gradient_norms(anchored, batch, &eps, t)?);
        let g = mean(&condition_gradient_norms(gaussian, batch, &eps, t)?);
        let ratio = a / g;
        r.metric(&format!("t={t}.{}", anchored.label), a);
        r.metric(&format!("t={t}.{}", gaussian.label), g);
        r.metric(&format!("t={t}.ratio"), ratio);
        a_curve.push((t, a));
        g_curve.push((t, g));
        ratio_curve.push((t, ratio));
    }
    let first = ratio_curve[0].1;
    let last = ratio_curve[ratio_curve.len() - 1].1;
    r.verdict("ratio_at_smallest_t", first, Comparison::Greater, 2.0);
    if ts.len() > 1 {
        r.verdict("ratio_above_largest_t_ratio", first, Comparison::Greater, last);
    }
    r.curves.push(Curve::new(anchored.label, "t", "condition gradient norm", a_curve));
    r.curves.push(Curve::new(gaussian.label, "t", "condition gradient norm", g_curve));
    r.curves.push(Curve::new("ratio", "t", "anchored / gaussian", ratio_curve));
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::BridgeConfig;
    use crate::models::{init_params, Arch};
    use crate::numerics::StreamLabel;
    use crate::synth::NormStats;

    fn small_batch(s: &mut RngStream) -> Batch {
        Batch {
            cond: s.normal_tensor(&[4, 8]),
            x1: s.normal_tensor(&[4, 32]),
            semantic: s.normal_tensor(&[4, 32]),
        }
    }

    #[test]
    fn zero_velocity_gaussian_has_no_condition_gradient() {
        let mut s = RngStream::new(2, StreamLabel::Diagnostics);
        let bundle = init_params(&Arch::default(), NormStats::identity(2), &mut s).unwrap();
        let bridge = BridgeConfig::gaussian();
        let v = Variant { label: "gaussian", bundle: &bundle, bridge: &bridge };
        let batch = small_batch(&mut s);
        let eps = s.normal_tensor(&[4, 32]);
        for n in condition_gradient_norms(&v, &batch, &eps, 0.01).unwrap() {
            assert_eq!(n, 0.0);
        }
    }

    #[test]
    fn anchored_source_carries_condition_gradient() {
        let mut s = RngStream::new(3, StreamLabel::Diagnostics);
        let mut bundle = init_params(&Arch::default(), NormStats::identity(2), &mut s).unwrap();
        // Give the anchor a non-zero output layer so μ depends on c.
        let r = bundle.anchor_range();
        let w = r.end - 2;
        bundle.params[w] = s.normal_tensor(bundle.params[w].shape()).scale(0.1);
        let bridge = BridgeConfig::default();
        let v = Variant { label: "anchored", bundle: &bundle, bridge: &bridge };
        let batch = small_batch(&mut s);
        let eps = s.normal_tensor(&[4, 32]);
        for n in condition_gradient_norms(&v, &batch, &eps, 0.0).unwrap() {
            assert!(n > 0.0);
        }
    }
}
