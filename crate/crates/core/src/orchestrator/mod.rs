//! The iterative reasoning loop: generate a step, parse it, crop and
//! re-encode the requested regions, grow the context, repeat until a stop
//! condition holds.

mod config;
mod context;
mod episode;
mod policy;
mod sampling;
mod trace;

pub use config::{
    OrchestratorConfig, SamplingConfig, TaskClass, TerminationConfig, T_MAX_EXTENDED, T_MAX_GENERAL, VISUAL_INPUT_CAP,
};
pub use context::{assemble_context, source_marker, SYSTEM_PROMPT};
pub use episode::{
    check_termination, run_episode, run_episode_from, EpisodeError, EpisodeState, FeatureEntry, StepFailure, StopReason, Termination,
};
pub use policy::{Generation, Policy, PolicyContext, ScriptedPolicy};
pub use sampling::{sample_top_p, tempered_log_probs, Sampled};
pub use trace::{trace_to_jsonl, CropRecord, TraceEvent};
