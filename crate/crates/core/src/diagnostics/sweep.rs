use std::time::Instant;

use super::{Comparison, Curve, DiagnosticReport, Variant};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::synth::TaskSpec;
use crate::train::evaluate;

#[derive(Clone, Debug, PartialEq)]
pub struct NfeTiming {
    pub label: String,
    pub nfe: usize,
    pub seconds_per_sample: f64,
}

#[derive(Clone, Debug)]
pub struct NfeSweep {
    pub report: DiagnosticReport,
    pub timings: Vec<NfeTiming>,
}

impl NfeSweep {
    /// r² of a least-squares line through one variant's (nfe, seconds) points.
    pub fn timing_r2(&self, label: &str) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .timings
            .iter()
            .filter(|t| t.label == label)
            .map(|t| (t.nfe as f64, t.seconds_per_sample))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
        sxy * sxy / (sxx * syy)
    }
}

/// Success rate and endpoint error of each variant at each NFE. All runs
/// share the evaluation seed, so the source noise is the same across NFE.
pub fn nfe_sweep(
    variants: &[Variant<'_>],
    cond: &Tensor,
    task: &TaskSpec,
    nfe_list: &[usize],
    tol: f64,
    seed: u64,
) -> Result<NfeSweep> {
    if nfe_list.contains(&0) {
        return Err(Error::Invalid("nfe must be >= 1".into()));
    }
    let mut r = DiagnosticReport::new("nfe");
    r.metric("tol", tol);
    r.metric("samples", cond.rows() as f64);
    let mut timings = Vec::new();
    let mut evals_match = true;
    for v in variants {
        let (mut succ, mut err) = (Vec::new(), Vec::new());
        for &nfe in nfe_list {
            let start = Instant::now();
            let s = evaluate(v.bundle, cond, task, nfe, tol, v.bridge, seed)?;
            let secs = start.elapsed().as_secs_f64();
            evals_match &= s.evaluations == nfe;
            r.metric(&format!("{}.nfe={nfe}.success", v.label), s.success_rate);
            r.metric(&format!("{}.nfe={nfe}.endpoint_error", v.label), s.mean_endpoint_error);
            r.metric(&format!("{}.nfe={nfe}.evaluations", v.label), s.evaluations as f64);
            succ.push((nfe as f64, s.success_rate));
            err.push((nfe as f64, s.mean_endpoint_error));
            timings.push(NfeTiming {
                label: v.label.to_string(),
                nfe,
                seconds_per_sample: secs / cond.rows().max(1) as f64,
            });
        }
        r.curves.push(Curve::new(&format!("{}.success", v.label), "NFE", "success rate", succ));
        r.curves.push(Curve::new(&format!("{}.endpoint_error", v.label), "NFE", "endpoint error", err));
    }
    r.verdict("evaluations_equal_nfe", if evals_match { 1.0 } else { 0.0 }, Comparison::GreaterEq, 1.0);
    if let [a, g, ..] = variants {
        let get = |label: &str, nfe: usize| r.get(&format!("{label}.nfe={nfe}.success"));
        let gap = get(a.label, 1).zip(get(g.label, 1)).map(|(sa, sg)| sa - sg);
        let sat = get(a.label, 4).zip(get(a.label, 16)).map(|(s4, s16)| (s4 - s16).abs());
        if let Some(gap) = gap {
            r.verdict("nfe1_success_gap", gap, Comparison::Greater, 0.0);
            r.verdict("nfe1_success_gap_10pt", gap, Comparison::GreaterEq, 0.10);
        }
        if let Some(sat) = sat {
            r.verdict("saturation_nfe4_vs_nfe16", sat, Comparison::LessEq, 0.02);
        }
    }
    Ok(NfeSweep { report: r, timings })
}
