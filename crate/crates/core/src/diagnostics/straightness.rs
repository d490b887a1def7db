use super::{Comparison, Curve, DiagnosticReport, Variant};
use crate::bridge::sample;
use crate::error::Result;
use crate::numerics::{RngStream, StreamLabel, Tensor};

fn row_dist(a: &Tensor, b: &Tensor, i: usize) -> f64 {
    a.row(i)
        .iter()
        .zip(b.row(i))
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `arc / chord - 1` per row of a recorded path of states. A path that
/// never moves has deficit 0.
pub fn path_deficits(path: &[Tensor]) -> Vec<f64> {
    let (first, last) = match (path.first(), path.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Vec::new(),
    };
    (0..first.rows())
        .map(|i| {
            let arc: f64 = path.windows(2).map(|w| row_dist(&w[0], &w[1], i)).sum();
            let chord = row_dist(first, last, i);
            if arc == 0.0 {
                0.0
            } else {
                arc / chord - 1.0
            }
        })
        .collect()
}

/// Mean path-straightness deficit of each variant under fine Euler
/// integration, plus the mean speed `‖x_{i+1} - x_i‖ / dt` along the path.
pub fn straightness_report(variants: &[Variant<'_>], cond: &Tensor, nfe: usize, seed: u64) -> Result<DiagnosticReport> {
    let mut r = DiagnosticReport::new("straightness");
    r.metric("nfe", nfe as f64);
    r.metric("samples", cond.rows() as f64);
    let mut means = Vec::new();
    let mut min_all = f64::INFINITY;
    for v in variants {
        let mut stream = RngStream::new(seed, StreamLabel::Eval);
        let tr = sample(cond, v.bundle, v.bundle, nfe, v.bridge, &mut stream, true)?;
        let d = path_deficits(&tr.path);
        let mean = d.iter().sum::<f64>() / d.len().max(1) as f64;
        let min = d.iter().copied().fold(f64::INFINITY, f64::min);
        min_all = min_all.min(min);
        r.metric(&format!("{}.mean_deficit", v.label), mean);
        r.metric(&format!("{}.min_deficit", v.label), min);
        let dt = 1.0 / nfe as f64;
        let speed: Vec<(f64, f64)> = tr
            .path
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let n = w[0].rows().max(1) as f64;
                let total: f64 = (0..w[0].rows()).map(|i| row_dist(&w[0], &w[1], i)).sum();
                (k as f64 * dt, total / n / dt)
            })
            .collect();
        r.curves.push(Curve::new(v.label, "t", "mean speed", speed));
        means.push(mean);
    }
    if let [a, g, ..] = means[..] {
        r.verdict("anchored_deficit_below_gaussian", a, Comparison::Less, g);
    }
    r.verdict("min_deficit", min_all, Comparison::GreaterEq, -1e-12);
    Ok(r)
}
