//! The run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::SamplerPlan;
use crate::distill::{DataConfig, DistillConfig, SupervisedOpts};
use crate::error::{Error, Result};
use crate::eval::{AblationBudget, EvalSpec};
use crate::net::NetConfig;
use crate::stream::StreamConfig;
use crate::world::WorldSpec;

/// Environment variable that overrides `run_dir`.
pub const RUN_DIR_ENV: &str = "FTLK_RUN_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub run: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { data: 7, init: 1, run: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub pretrain: SupervisedOpts,
    pub sft: SupervisedOpts,
    /// Chunk lengths drawn during adaptation.
    pub buckets: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain: SupervisedOpts::default(),
            sft: SupervisedOpts { steps: 500, ..SupervisedOpts::default() },
            buckets: vec![7, 9, 11],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub world: WorldSpec,
    pub net: NetConfig,
    pub sampler: SamplerPlan,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub distill: DistillConfig,
    pub stream: StreamConfig,
    pub eval: EvalSpec,
    pub ablation: AblationBudget,
    pub seeds: Seeds,
    pub run_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            world: WorldSpec::default(),
            net: NetConfig::default(),
            sampler: SamplerPlan::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            distill: DistillConfig::default(),
            stream: StreamConfig::default(),
            eval: EvalSpec::default(),
            ablation: AblationBudget::default(),
            seeds: Seeds::default(),
            run_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    /// Every violated invariant, including cross-section consistency.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        errs.extend(self.world.validate());
        errs.extend(self.net.validate());
        errs.extend(self.sampler.validate());
        errs.extend(self.data.validate());
        errs.extend(self.train.pretrain.validate("train.pretrain"));
        errs.extend(self.train.sft.validate("train.sft"));
        errs.extend(self.distill.validate());
        errs.extend(self.stream.validate());
        errs.extend(self.eval.validate());
        errs.extend(self.ablation.short.validate().into_iter().map(|e| format!("ablation.short: {e}")));
        errs.extend(self.ablation.long.validate().into_iter().map(|e| format!("ablation.long: {e}")));
        if self.ablation.seeds.is_empty() {
            errs.push("ablation.seeds must not be empty".into());
        }
        if self.train.buckets.is_empty() {
            errs.push("train.buckets must not be empty".into());
        }
        for &b in &self.train.buckets {
            if b < self.data.motion_len + 1 {
                errs.push(format!("train.buckets entry {b} is shorter than data.motion_len + 1"));
            }
            if b + self.data.burn_in > self.data.sequence_len {
                errs.push(format!("train.buckets entry {b} does not fit in data.sequence_len"));
            }
        }
        if self.net.latent_dim != self.world.state_dim {
            errs.push(format!(
                "net.latent_dim ({}) must equal world.state_dim ({})",
                self.net.latent_dim, self.world.state_dim
            ));
        }
        for (name, cl, ml) in [
            ("distill", self.distill.chunk_len, self.distill.motion_len),
            ("stream", self.stream.chunk_len, self.stream.motion_len),
        ] {
            if cl != self.data.chunk_len || ml != self.data.motion_len {
                errs.push(format!("{name}.chunk_len/motion_len must match data.chunk_len/motion_len"));
            }
        }
        if self.distill.sampler != self.sampler {
            errs.push("distill.sampler must equal sampler".into());
        }
        if self.stream.sampler != self.sampler {
            errs.push("stream.sampler must equal sampler".into());
        }
        errs
    }

    pub fn check(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Reads, applies the run-dir override and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        cfg.apply_env();
        cfg.check()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(RUN_DIR_ENV).filter(|d| !d.is_empty()) {
            self.run_dir = PathBuf::from(dir);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let c = RunConfig::default();
        assert_eq!(c.validate(), Vec::<String>::new());
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json(), c.to_json());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = RunConfig::from_json(r#"{"seeds": {"run": 9}}"#).unwrap();
        assert_eq!(c.seeds.run, 9);
        assert_eq!(c.seeds.data, Seeds::default().data);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"wrold": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"net": {"model_dim": 8, "depth": 3}}"#).is_err());
    }

    #[test]
    fn every_violation_is_listed() {
        let mut c = RunConfig::default();
        c.net.heads = 3;
        c.net.latent_dim = 5;
        c.stream.target_fps = 0.0;
        c.distill.chunk_len = 11;
        c.train.buckets = vec![2, 9];
        let errs = c.validate();
        for needle in ["divisible", "latent_dim", "target_fps", "distill.chunk_len", "entry 2"] {
            assert!(errs.iter().any(|e| e.contains(needle)), "missing {needle} in {errs:?}");
        }
    }
}
