use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::{EpisodeState, SamplingConfig};
use crate::numerics::Scalar;

/// Raw text of one step plus, for token-level policies, the sampled token
/// ids and their log-probabilities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Generation {
    pub text: String,
    pub tokens: Vec<usize>,
    pub logprobs: Vec<f64>,
}

impl Generation {
    pub fn from_text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::default()
        }
    }
}

/// What a policy sees before producing the next step.
pub struct PolicyContext<'a, T> {
    /// Serialized text context from [`super::assemble_context`].
    pub prompt: &'a str,
    /// Full episode state, including the feature store.
    pub state: &'a EpisodeState<T>,
    pub sampling: &'a SamplingConfig,
}

/// Step generator. Must be deterministic given the context and the rng state.
pub trait Policy<T: Scalar> {
    fn generate(&self, ctx: &PolicyContext<'_, T>, rng: &mut ChaCha8Rng) -> Generation;
}

/// Replays fixed step texts, one per round; an empty string once exhausted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ScriptedPolicy {
    steps: Vec<String>,
}

impl ScriptedPolicy {
    pub fn new<S: Into<String>>(steps: impl IntoIterator<Item = S>) -> Self {
        Self {
            steps: steps.into_iter().map(Into::into).collect(),
        }
    }

    pub fn steps(&self) -> &[String] {
        &self.steps
    }
}

impl<T: Scalar> Policy<T> for ScriptedPolicy {
    fn generate(&self, ctx: &PolicyContext<'_, T>, _rng: &mut ChaCha8Rng) -> Generation {
        let text = self.steps.get(ctx.state.rounds_used).cloned().unwrap_or_default();
        Generation::from_text(text)
    }
}
