use serde::{Deserialize, Serialize};

/// Round limit for general tasks.
pub const T_MAX_GENERAL: usize = 5;
/// Round limit for long-horizon (multi-frame) tasks.
pub const T_MAX_EXTENDED: usize = 10;
/// Cumulative limit on images passed to the encoder in one episode.
pub const VISUAL_INPUT_CAP: usize = 52;

/// Task classes with distinct round limits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskClass {
    General,
    Extended,
}

impl TaskClass {
    pub fn t_max(self) -> usize {
        match self {
            TaskClass::General => T_MAX_GENERAL,
            TaskClass::Extended => T_MAX_EXTENDED,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerminationConfig {
    pub t_max: usize,
    pub visual_input_cap: usize,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self::for_class(TaskClass::General)
    }
}

impl TerminationConfig {
    pub fn for_class(class: TaskClass) -> Self {
        Self {
            t_max: class.t_max(),
            visual_input_cap: VISUAL_INPUT_CAP,
        }
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if self.t_max == 0 {
            return Err("t_max must be positive");
        }
        if self.visual_input_cap == 0 {
            return Err("visual_input_cap must be positive");
        }
        Ok(())
    }
}

/// Nucleus sampling settings handed to stochastic policies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub top_p: f64,
    pub temperature: f64,
    /// Upper bound on tokens in one generated step.
    pub max_step_tokens: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            top_p: 0.9,
            temperature: 0.75,
            max_step_tokens: 64,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err("top_p must lie in (0, 1]");
        }
        if !(self.temperature > 0.0) {
            return Err("temperature must be positive");
        }
        if self.max_step_tokens == 0 {
            return Err("max_step_tokens must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrchestratorConfig {
    pub termination: TerminationConfig,
    pub sampling: SamplingConfig,
}
