use super::{Comparison, DiagnosticReport, Variant};
use crate::bridge::sample;
use crate::error::{Error, Result};
use crate::models::{ModelBundle, ModelKind};
use crate::numerics::{RngStream, StreamLabel, Tensor};
use crate::spectral::Trajectory;
use crate::synth::{goal_errors, TaskSpec};

/// `errs[i][m]`: distance from row `i`'s endpoint to goal `m`.
fn per_goal(bundle: &ModelBundle, cond: &Tensor, out: &Tensor, task: &TaskSpec) -> Result<Vec<Vec<f64>>> {
    let (t, a) = (bundle.arch.horizon, bundle.arch.action_dim);
    (0..out.rows())
        .map(|i| {
            let tr = Trajectory::new(t, a, out.row(i).to_vec())?;
            Ok(goal_errors(&tr, cond.row(i), task, &bundle.norm))
        })
        .collect()
}

/// Mean over samples and goals of the distance from the goal to the closest
/// of the draws for that sample.
fn best_of(draws: &[Vec<Vec<f64>>]) -> f64 {
    let rows = draws[0].len();
    let goals = draws[0][0].len();
    let mut total = 0.0;
    for i in 0..rows {
        for m in 0..goals {
            total += draws.iter().map(|d| d[i][m]).fold(f64::INFINITY, f64::min);
        }
    }
    total / (rows * goals) as f64
}

/// Compares a deterministic regression baseline against `draws` samples of
/// a bridge model on how close each model gets to every goal. A model that
/// averages the modes sits between them and is far from both.
pub fn mode_coverage_report(
    regression: &ModelBundle,
    bridge: &Variant<'_>,
    cond: &Tensor,
    task: &TaskSpec,
    draws: usize,
    nfe: usize,
    seed: u64,
) -> Result<DiagnosticReport> {
    if regression.kind != ModelKind::Regression {
        return Err(Error::Invalid("baseline must be a regression model".into()));
    }
    if draws == 0 || cond.rows() == 0 {
        return Err(Error::Invalid("need at least one draw and one condition".into()));
    }
    let reg_out = regression.anchor_predict(cond)?;
    let reg = per_goal(regression, cond, &reg_out, task)?;
    let reg_err = best_of(std::slice::from_ref(&reg));

    let mut stream = RngStream::new(seed, StreamLabel::Eval);
    let mut all = Vec::with_capacity(draws);
    for _ in 0..draws {
        let tr = sample(cond, bridge.bundle, bridge.bundle, nfe, bridge.bridge, &mut stream, false)?;
        all.push(per_goal(bridge.bundle, cond, &tr.output, task)?);
    }
    let bridge_err = best_of(&all);
    let bridge_single = best_of(&all[..1]);
    let first_goal_share = all
        .iter()
        .flatten()
        .filter(|e| e.len() > 1 && e[0] <= e[1])
        .count() as f64
        / (draws * cond.rows()) as f64;

    let ratio = reg_err / bridge_err;
    let mut r = DiagnosticReport::new("modes");
    r.metric("samples", cond.rows() as f64);
    r.metric("draws", draws as f64);
    r.metric("nfe", nfe as f64);
    r.metric("regression_per_mode_error", reg_err);
    r.metric("bridge_best_of_1_per_mode_error", bridge_single);
    r.metric(&format!("bridge_best_of_{draws}_per_mode_error"), bridge_err);
    r.metric("bridge_first_goal_share", first_goal_share);
    r.metric("ratio", ratio);
    r.verdict("regression_over_bridge_error", ratio, Comparison::GreaterEq, 2.0);
    Ok(r)
}
