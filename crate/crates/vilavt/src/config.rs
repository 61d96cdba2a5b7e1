//! Run configuration: a sectioned TOML file. Unknown keys are rejected and
//! every key has a default, so an empty file is a valid configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vilavt_core::encoder::EncoderConfig;
use vilavt_core::orchestrator::OrchestratorConfig;
use vilavt_core::training::{GrpoConfig, GrpoTrainConfig, ToyPolicyConfig};

use crate::Error;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds weight initialization, task generation, sampling and training.
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub orchestrator: OrchestratorConfig,
    pub policy: ToyPolicyConfig,
    pub training: TrainingSection,
    pub paths: PathsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    /// Rollouts per prompt.
    pub group_size: usize,
    pub epsilon_low: f64,
    pub epsilon_high: f64,
    pub delta: f64,
    pub learning_rate: f64,
    /// Total updates; a resumed run stops at the same total.
    pub steps: usize,
    pub prompts_per_update: usize,
    pub ppo_epochs: usize,
    /// Checkpoint every this many updates; 0 writes only the final one.
    pub checkpoint_interval: usize,
    /// Format-only SFT examples used before RL when no weights are given.
    pub warm_start_examples: usize,
    pub warm_start_steps: usize,
    pub warm_start_learning_rate: f64,
    /// Adam step size for `train --mode sft`.
    pub sft_learning_rate: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let grpo = GrpoTrainConfig::default();
        Self {
            group_size: grpo.group_size,
            epsilon_low: grpo.grpo.epsilon_low,
            epsilon_high: grpo.grpo.epsilon_high,
            delta: grpo.grpo.delta,
            learning_rate: grpo.learning_rate,
            steps: grpo.updates,
            prompts_per_update: grpo.prompts_per_update,
            ppo_epochs: grpo.ppo_epochs,
            checkpoint_interval: 50,
            warm_start_examples: 64,
            warm_start_steps: 25,
            warm_start_learning_rate: 1e-2,
            sft_learning_rate: 1e-2,
        }
    }
}

impl TrainingSection {
    pub fn grpo(&self, seed: u64) -> GrpoTrainConfig {
        GrpoTrainConfig {
            updates: self.steps,
            prompts_per_update: self.prompts_per_update,
            group_size: self.group_size,
            learning_rate: self.learning_rate,
            ppo_epochs: self.ppo_epochs,
            grpo: GrpoConfig {
                epsilon_low: self.epsilon_low,
                epsilon_high: self.epsilon_high,
                delta: self.delta,
            },
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Checkpoint to start from; encoder and policy tensors are loaded when present.
    pub weights: Option<PathBuf>,
    /// SFT corpus (JSON lines).
    pub corpus: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            weights: None,
            corpus: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path`; relative paths inside are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.paths.weights.as_mut().map(resolve);
        config.paths.corpus.as_mut().map(resolve);
        resolve(&mut config.paths.output_dir);
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.encoder.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.orchestrator
            .termination
            .validate()
            .and(self.orchestrator.sampling.validate())
            .map_err(|e| Error::Config(e.into()))?;
        self.policy.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.training.grpo(self.seed).validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
