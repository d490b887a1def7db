//! Run configuration, its canonical JSON form and hash, and file provenance.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bridge::BridgeConfig;
use crate::error::{Error, Result};
use crate::models::Arch;
use crate::numerics::OptimizerConfig;
use crate::synth::TaskSpec;
use crate::train::TrainSettings;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub bridge: BridgeConfig,
    pub arch: Arch,
    pub optimizer: OptimizerConfig,
    pub train: TrainSettings,
    /// Seeds model init, training streams and evaluation. The dataset uses
    /// `task.seed`.
    pub seed: u64,
    /// Not part of the hash: moving outputs does not change them.
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskSpec::default(),
            bridge: BridgeConfig::default(),
            arch: Arch::default(),
            optimizer: OptimizerConfig::default(),
            train: TrainSettings::default(),
            seed: 0,
            out_dir: "out".into(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.arch.validate()?;
        self.bridge.validate(self.task.horizon)?;
        self.task.validate_cutoff(self.bridge.cutoff)?;
        if (self.arch.horizon, self.arch.action_dim, self.arch.cond_width)
            != (self.task.horizon, self.task.action_dim, self.task.cond_width)
        {
            return Err(Error::Invalid("arch dimensions must match the task".into()));
        }
        if self.train.batch_size == 0 || self.train.eval_nfe == 0 || self.train.eval_every == 0 {
            return Err(Error::Invalid("batch_size, eval_nfe and eval_every must be >= 1".into()));
        }
        if self.optimizer.total_steps == 0 || !(self.optimizer.base_lr > 0.0) {
            return Err(Error::Invalid("total_steps and base_lr must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
    }

    /// Compact JSON with object keys sorted.
    pub fn canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&v).expect("value serializes")
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON without `out_dir`.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("out_dir");
        }
        let text = serde_json::to_string(&v).expect("value serializes");
        let digest = Sha256::digest(text.as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            config_hash: self.hash(),
            seed: self.seed,
            version: crate::ARTIFACT_VERSION.to_string(),
        }
    }
}

/// The triple that identifies an output's inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl Provenance {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("provenance serializes")
    }

    /// Writes `<file>.prov.json` next to a payload that has no room for it.
    pub fn write_sidecar(&self, payload: &Path) -> Result<()> {
        let mut name = payload.as_os_str().to_owned();
        name.push(".prov.json");
        std::fs::write(name, self.to_json() + "\n")?;
        Ok(())
    }
}
