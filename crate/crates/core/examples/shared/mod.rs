//! Model setup shared by the diagnostic examples.

#![allow(dead_code)]

use resbridge::bridge::{BridgeConfig, SourceMode};
use resbridge::config::RunConfig;
use resbridge::diagnostics::Variant;
use resbridge::formats::read_checkpoint;
use resbridge::models::{ModelBundle, ModelKind};
use resbridge::synth::{generate_task, Dataset};
use resbridge::train::fit;

pub struct Pair {
    pub cfg: RunConfig,
    pub ds: Dataset,
    pub anchored: ModelBundle,
    pub gaussian: ModelBundle,
    pub anchored_bridge: BridgeConfig,
    pub gaussian_bridge: BridgeConfig,
}

impl Pair {
    pub fn variants(&self) -> [Variant<'_>; 2] {
        [
            Variant {
                label: "anchored",
                bundle: &self.anchored,
                bridge: &self.anchored_bridge,
            },
            Variant {
                label: "gaussian",
                bundle: &self.gaussian,
                bridge: &self.gaussian_bridge,
            },
        ]
    }
}

/// Loads `<anchored.rvbm> <gaussian.rvbm>` from the command line, or trains
/// both variants for `steps` steps when no paths are given.
pub fn pair(steps: u64) -> resbridge::Result<Pair> {
    let mut cfg = RunConfig::default();
    cfg.optimizer.total_steps = steps;
    cfg.optimizer.warmup_steps = steps / 8;
    let ds = generate_task(&cfg.task)?;
    let anchored_bridge = cfg.bridge.clone();
    let gaussian_bridge = BridgeConfig {
        source_mode: SourceMode::Gaussian,
        ..cfg.bridge.clone()
    };
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (anchored, gaussian) = if let [a, g] = &args[..] {
        (read_checkpoint(a.as_ref())?.bundle, read_checkpoint(g.as_ref())?.bundle)
    } else {
        eprintln!("training anchored and gaussian variants for {steps} steps (pass two checkpoints to skip)");
        let mut gcfg = cfg.clone();
        gcfg.bridge = gaussian_bridge.clone();
        (
            fit(&cfg, &ds, ModelKind::Bridge, |_, _| Ok(()))?.bundle,
            fit(&gcfg, &ds, ModelKind::Bridge, |_, _| Ok(()))?.bundle,
        )
    };
    Ok(Pair {
        cfg,
        ds,
        anchored,
        gaussian,
        anchored_bridge,
        gaussian_bridge,
    })
}
