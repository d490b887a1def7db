//! Experiments that measure the bridge's properties against the
//! noise-to-action baseline, each producing a [`DiagnosticReport`].
//!
//! Reports are pure functions of their inputs and seeds. Wall-clock numbers
//! are returned beside the report, never inside it.

mod collapse;
mod convergence;
mod modes;
mod quantization;
mod straightness;
pub mod svg;
mod sweep;
mod transport;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use collapse::{condition_gradient_norms, loss_collapse_probe};
pub use convergence::{convergence_ab, steps_to_target, ConvergenceOutcome, ConvergenceSettings, RunCurve};
pub use modes::mode_coverage_report;
pub use quantization::{mid_rise, quantization_floor, quantization_sweep};
pub use straightness::{path_deficits, straightness_report};
pub use sweep::{nfe_sweep, NfeSweep, NfeTiming};
pub use transport::transport_cost_report;

use crate::bridge::BridgeConfig;
use crate::config::Provenance;
use crate::models::ModelBundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = "<")]
    Less,
    #[serde(rename = "<=")]
    LessEq,
    #[serde(rename = ">")]
    Greater,
    #[serde(rename = ">=")]
    GreaterEq,
}

impl Comparison {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparison::Less => value < threshold,
            Comparison::LessEq => value <= threshold,
            Comparison::Greater => value > threshold,
            Comparison::GreaterEq => value >= threshold,
        }
    }
}

/// `value <comparison> threshold`, evaluated when built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub value: f64,
    pub comparison: Comparison,
    pub threshold: f64,
    pub passed: bool,
}

impl Verdict {
    pub fn new(name: &str, value: f64, comparison: Comparison, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            comparison,
            threshold,
            passed: comparison.holds(value, threshold),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub label: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
}

impl Curve {
    pub fn new(label: &str, x_label: &str, y_label: &str, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            points,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub name: String,
    pub metrics: BTreeMap<String, f64>,
    pub curves: Vec<Curve>,
    pub verdicts: Vec<Verdict>,
    pub provenance: Option<Provenance>,
}

impl DiagnosticReport {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            metrics: BTreeMap::new(),
            curves: Vec::new(),
            verdicts: Vec::new(),
            provenance: None,
        }
    }

    pub fn metric(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn verdict(&mut self, name: &str, value: f64, comparison: Comparison, threshold: f64) {
        self.verdicts.push(Verdict::new(name, value, comparison, threshold));
    }

    pub fn find_verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = Some(p);
        self
    }

    /// Pretty JSON with a trailing newline. Non-finite numbers become `null`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// `label,x,y` rows for every curve.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("label,x,y\n");
        for c in &self.curves {
            for (x, y) in &c.points {
                s.push_str(&format!("{},{:e},{:e}\n", c.label, x, y));
            }
        }
        s
    }

    /// Merges `other`'s contents under `prefix.` keys and labels.
    pub fn absorb(&mut self, prefix: &str, other: DiagnosticReport) {
        for (k, v) in other.metrics {
            self.metrics.insert(format!("{prefix}.{k}"), v);
        }
        for mut c in other.curves {
            c.label = format!("{prefix}.{}", c.label);
            self.curves.push(c);
        }
        for mut v in other.verdicts {
            v.name = format!("{prefix}.{}", v.name);
            self.verdicts.push(v);
        }
    }
}

/// A trained bundle with the bridge settings it was trained under.
#[derive(Clone, Copy, Debug)]
pub struct Variant<'a> {
    pub label: &'a str,
    pub bundle: &'a ModelBundle,
    pub bridge: &'a BridgeConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts_and_json() {
        let mut r = DiagnosticReport::new("demo");
        r.metric("a", 1.0);
        r.metric("nan", f64::NAN);
        r.verdict("a_small", 1.0, Comparison::Less, 2.0);
        assert!(r.passed());
        r.verdict("a_big", 1.0, Comparison::Greater, 2.0);
        assert!(!r.passed());
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["metrics"]["nan"], serde_json::Value::Null);
        assert_eq!(v["verdicts"][1]["comparison"], ">");
        assert_eq!(v["verdicts"][1]["threshold"], 2.0);
    }

    #[test]
    fn absorb_prefixes() {
        let mut a = DiagnosticReport::new("all");
        let mut b = DiagnosticReport::new("b");
        b.metric("x", 2.0);
        b.verdict("ok", 1.0, Comparison::LessEq, 1.0);
        b.curves.push(Curve::new("c", "x", "y", vec![(0.0, 1.0)]));
        a.absorb("b", b);
        assert_eq!(a.get("b.x"), Some(2.0));
        assert_eq!(a.verdicts[0].name, "b.ok");
        assert_eq!(a.curves_csv(), "label,x,y\nb.c,0e0,1e0\n");
    }
}
