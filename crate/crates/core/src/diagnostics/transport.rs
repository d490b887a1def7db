use super::{Comparison, DiagnosticReport};
use crate::bridge::BridgeConfig;
use crate::error::Result;
use crate::models::ModelBundle;
use crate::numerics::RngStream;
use crate::spectral::{lowpass_rows, DctBasis};
use crate::synth::{Dataset, Split};

fn mean_row_sq_dist(a: &[f64], b: &[f64], width: usize) -> f64 {
    let rows = a.len() / width;
    let total: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    total / rows as f64
}

/// Mean squared source-to-target distance over the validation split, for
/// the anchored source around `bundle`'s anchor and for a standard normal
/// source. Normalized units.
pub fn transport_cost_report(
    ds: &Dataset,
    bundle: &ModelBundle,
    config: &BridgeConfig,
    stream: &mut RngStream,
) -> Result<DiagnosticReport> {
    let (cond, x1) = ds.split_tensors(Split::Val);
    let width = x1.cols();
    let mu = bundle.anchor_predict(&cond)?;
    let eps = stream.normal_tensor(x1.shape());
    let anchored_x0 = mu.add(&eps.scale(config.sigma_min))?;
    let gauss_x0 = stream.normal_tensor(x1.shape());

    let anchored = mean_row_sq_dist(x1.data(), anchored_x0.data(), width);
    let gaussian = mean_row_sq_dist(x1.data(), gauss_x0.data(), width);
    let x1_energy = x1.sq_norm() / x1.rows() as f64;
    let expansion = x1_energy + width as f64;
    let expansion_dev = (gaussian - expansion).abs() / expansion;

    let basis = DctBasis::new(ds.horizon);
    let semantic = lowpass_rows(&basis, x1.data(), ds.action_dim, config.cutoff)?;
    let residual_energy = mean_row_sq_dist(x1.data(), &semantic, width);
    let anchor_error = mean_row_sq_dist(&semantic, mu.data(), width);

    let ratio = anchored / gaussian;
    let mut r = DiagnosticReport::new("transport");
    r.metric("samples", x1.rows() as f64);
    r.metric("sigma_min", config.sigma_min);
    r.metric("anchored_cost", anchored);
    r.metric("gaussian_cost", gaussian);
    r.metric("ratio", ratio);
    r.metric("x1_energy", x1_energy);
    r.metric("gaussian_expansion", expansion);
    r.metric("gaussian_expansion_deviation", expansion_dev);
    r.metric("residual_energy", residual_energy);
    r.metric("anchor_semantic_error", anchor_error);
    r.verdict("ratio", ratio, Comparison::Less, 0.25);
    r.verdict("gaussian_expansion_deviation", expansion_dev, Comparison::Less, 0.05);
    Ok(r)
}
