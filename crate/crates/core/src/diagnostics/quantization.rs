use super::{Comparison, Curve, DiagnosticReport};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Mid-rise uniform quantizer: reconstruction at the center of each bin.
pub fn mid_rise(x: f64, delta: f64) -> f64 {
    delta * ((x / delta).floor() + 0.5)
}

/// Bins the samples are spread across, centered on zero.
const BINS: usize = 16;

/// Monte-Carlo MSE of the quantizer against the analytic floor `Δ²/12`.
pub fn quantization_floor(delta: f64, n: usize, stream: &mut RngStream) -> Result<DiagnosticReport> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Invalid(format!("delta must be positive, got {delta}")));
    }
    if n < 10_000 {
        return Err(Error::Invalid(format!("need at least 10000 samples, got {n}")));
    }
    let mut sum = 0.0;
    for _ in 0..n {
        let bin = stream.below(BINS) as f64 - (BINS / 2) as f64;
        let x = delta * (bin + stream.uniform());
        let e = x - mid_rise(x, delta);
        sum += e * e;
    }
    let mse = sum / n as f64;
    let analytic = delta * delta / 12.0;
    let rel = (mse - analytic).abs() / analytic;
    let mut r = DiagnosticReport::new("quantization");
    r.metric("delta", delta);
    r.metric("samples", n as f64);
    r.metric("mse", mse);
    r.metric("analytic", analytic);
    r.metric("relative_deviation", rel);
    r.verdict("relative_deviation", rel, Comparison::Less, 0.01);
    Ok(r)
}

/// One floor check per `delta`, plus the ratio between the largest delta and
/// its half.
pub fn quantization_sweep(deltas: &[f64], n: usize, stream: &mut RngStream) -> Result<DiagnosticReport> {
    let mut out = DiagnosticReport::new("quantization");
    let mut mc = Vec::new();
    let mut an = Vec::new();
    for &d in deltas {
        let r = quantization_floor(d, n, stream)?;
        mc.push((d, r.get("mse").unwrap_or(f64::NAN)));
        an.push((d, r.get("analytic").unwrap_or(f64::NAN)));
        out.absorb(&format!("delta={d}"), r);
    }
    if let Some(&big) = deltas.iter().max_by(|a, b| a.total_cmp(b)) {
        let full = quantization_floor(big, n, stream)?.get("mse").unwrap_or(f64::NAN);
        let half = quantization_floor(big / 2.0, n, stream)?.get("mse").unwrap_or(f64::NAN);
        let ratio = full / half;
        out.metric("halving_ratio", ratio);
        out.verdict("halving_ratio_deviation", (ratio - 4.0).abs() / 4.0, Comparison::Less, 0.02);
    }
    out.curves.push(Curve::new("monte_carlo", "delta", "mse", mc));
    out.curves.push(Curve::new("analytic", "delta", "mse", an));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::StreamLabel;

    #[test]
    fn quantizer_levels() {
        assert_eq!(mid_rise(0.2, 1.0), 0.5);
        assert_eq!(mid_rise(-0.2, 1.0), -0.5);
        assert_eq!(mid_rise(1.0, 1.0), 1.5);
        assert!((mid_rise(0.26, 0.1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn analytic_floor_for_unit_delta() {
        let mut s = RngStream::new(0, StreamLabel::Diagnostics);
        let r = quantization_floor(1.0, 10_000, &mut s).unwrap();
        assert!((r.get("analytic").unwrap() - 0.083333).abs() < 1e-6);
        let r = quantization_floor(0.1, 10_000, &mut s).unwrap();
        assert!((r.get("analytic").unwrap() - 8.3333e-4).abs() < 1e-8);
    }

    #[test]
    fn preconditions() {
        let mut s = RngStream::new(0, StreamLabel::Diagnostics);
        assert!(quantization_floor(0.0, 10_000, &mut s).is_err());
        assert!(quantization_floor(1.0, 9_999, &mut s).is_err());
    }
}
