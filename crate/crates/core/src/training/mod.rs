//! Rewards, group-relative advantages, the clipped policy objective, the
//! likelihood objective, and a small trainable policy that exercises them.

mod advantage;
mod grpo;
mod reward;
mod sft;
mod toy_policy;
mod trainer;
mod vocab;

pub use advantage::group_advantage;
pub use grpo::{grpo_loss, grpo_loss_value, GrpoConfig};
pub use reward::{
    answer_score, gated_reward, normalize_choice, parse_number, reward_mc, reward_mra, GoldZeroError,
    RewardBreakdown, TaskKind,
};
pub use sft::masked_nll;
pub use toy_policy::{decoder_inputs, stack_features, PolicyStep, ToyPolicy, ToyPolicyConfig};
pub use trainer::{
    prepare_sft, sft_loss, train_grpo, train_sft, GrpoRun, GrpoTrainConfig, GrpoTrainer, PreparedSft, SftExample,
    SftTrainer, StepMetrics, TaskInstance, UpdateReport,
};
pub use vocab::{TokenizeError, Vocab, EOS, MAX_NUMBER_TOKEN};

use crate::numerics::NumericsError;
use crate::orchestrator::EpisodeError;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TrainingError {
    #[error("a group needs at least 2 rollouts, got {size}")]
    GroupTooSmall { size: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("sequence lengths differ: {new} new vs {old} old")]
    LengthMismatch { new: usize, old: usize },
    #[error("no target tokens")]
    EmptySequence,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error("corpus record rejected: {0}")]
    Corpus(alloc::string::String),
}
