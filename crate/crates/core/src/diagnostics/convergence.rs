use super::{Comparison, Curve, DiagnosticReport};
use crate::bridge::SourceMode;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::synth::Dataset;
use crate::train::{run, MetricsRow, Trainer, TrainingData};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceSettings {
    pub budget: u64,
    pub eval_every: u64,
    /// Validation success that counts as converged.
    pub target: f64,
    /// Train the two variants on separate threads.
    pub parallel: bool,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        Self {
            budget: 5000,
            eval_every: 250,
            target: 0.8,
            parallel: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunCurve {
    pub label: String,
    pub rows: Vec<MetricsRow>,
    /// Set when training stopped on a numerical failure; `rows` holds what
    /// was logged before it.
    pub failure: Option<String>,
    pub trainer: Trainer,
}

#[derive(Clone, Debug)]
pub struct ConvergenceOutcome {
    pub report: DiagnosticReport,
    pub anchored: RunCurve,
    pub gaussian: RunCurve,
}

/// First logged step whose validation success reaches `target`.
pub fn steps_to_target(rows: &[MetricsRow], target: f64) -> Option<u64> {
    rows.iter().find(|r| r.val_success >= target).map(|r| r.step)
}

/// Largest drop of the 3-point moving average below its running maximum.
fn max_drawdown(values: &[f64]) -> f64 {
    let smooth: Vec<f64> = (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(2);
            values[lo..=i].iter().sum::<f64>() / (i - lo + 1) as f64
        })
        .collect();
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for v in smooth {
        peak = peak.max(v);
        worst = worst.max(peak - v);
    }
    worst
}

fn train_variant(cfg: &RunConfig, ds: &Dataset, data: &TrainingData, s: &ConvergenceSettings, label: &str) -> Result<RunCurve> {
    let mut settings = cfg.train.clone();
    settings.eval_every = s.eval_every;
    let mut trainer = Trainer::new(
        &cfg.arch,
        ds,
        ModelKind::Bridge,
        cfg.bridge.clone(),
        cfg.optimizer.clone(),
        settings,
        cfg.seed,
    )?;
    let mut rows = Vec::new();
    let res = run(&mut trainer, data, &cfg.task, s.budget, cfg.seed, |row, _| {
        rows.push(*row);
        Ok(())
    });
    let failure = match res {
        Ok(()) => None,
        Err(e) if e.is_numerical() => Some(e.to_string()),
        Err(e) => return Err(e),
    };
    Ok(RunCurve {
        label: label.into(),
        rows,
        failure,
        trainer,
    })
}

/// Trains an anchored-source and a gaussian-source model from the same seed,
/// data and architecture, and compares how quickly each reaches the target
/// validation success.
pub fn convergence_ab(cfg: &RunConfig, ds: &Dataset, s: &ConvergenceSettings) -> Result<ConvergenceOutcome> {
    if s.budget == 0 || s.eval_every == 0 {
        return Err(Error::Invalid("budget and eval_every must be >= 1".into()));
    }
    let mut a_cfg = cfg.clone();
    a_cfg.bridge.source_mode = SourceMode::Anchored;
    let mut g_cfg = cfg.clone();
    g_cfg.bridge.source_mode = SourceMode::Gaussian;
    let data = TrainingData::new(ds, cfg.bridge.cutoff)?;

    let (anchored, gaussian) = if s.parallel {
        std::thread::scope(|scope| {
            let h = scope.spawn(|| train_variant(&g_cfg, ds, &data, s, "gaussian"));
            let a = train_variant(&a_cfg, ds, &data, s, "anchored");
            let g = h.join().expect("training thread panicked");
            (a, g)
        })
    } else {
        (
            train_variant(&a_cfg, ds, &data, s, "anchored"),
            train_variant(&g_cfg, ds, &data, s, "gaussian"),
        )
    };
    let (anchored, gaussian) = (anchored?, gaussian?);

    let mut r = DiagnosticReport::new("convergence");
    r.metric("budget", s.budget as f64);
    r.metric("eval_every", s.eval_every as f64);
    r.metric("target", s.target);
    let mut steps = Vec::new();
    for c in [&anchored, &gaussian] {
        let reached = steps_to_target(&c.rows, s.target).map_or(f64::INFINITY, |v| v as f64);
        let success: Vec<f64> = c.rows.iter().map(|r| r.val_success).collect();
        let drawdown = max_drawdown(&success);
        r.metric(&format!("{}.steps_to_target", c.label), reached);
        r.metric(&format!("{}.final_success", c.label), success.last().copied().unwrap_or(f64::NAN));
        r.metric(&format!("{}.max_drawdown", c.label), drawdown);
        r.metric(&format!("{}.failed", c.label), if c.failure.is_some() { 1.0 } else { 0.0 });
        r.verdict(&format!("{}.max_drawdown", c.label), drawdown, Comparison::Less, 0.15);
        let pts = |f: fn(&MetricsRow) -> f64| c.rows.iter().map(|row| (row.step as f64, f(row))).collect();
        r.curves.push(Curve::new(&format!("{}.val_success", c.label), "step", "validation success", pts(|x| x.val_success)));
        r.curves.push(Curve::new(
            &format!("{}.val_endpoint_error", c.label),
            "step",
            "validation endpoint error",
            pts(|x| x.val_endpoint_error),
        ));
        r.curves.push(Curve::new(&format!("{}.loss_total", c.label), "step", "training loss", pts(|x| x.loss_total)));
        steps.push(reached);
    }
    r.verdict("anchored_steps_below_gaussian", steps[0], Comparison::Less, steps[1]);
    Ok(ConvergenceOutcome { report: r, anchored, gaussian })
}
