use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::numerics::{Scalar, Tape, Tensor, Var};

/// Clip bounds and advantage stabilizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    pub epsilon_low: f64,
    pub epsilon_high: f64,
    pub delta: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            epsilon_low: 0.2,
            epsilon_high: 0.3,
            delta: 1e-6,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if !(self.epsilon_low > 0.0 && self.epsilon_low < 1.0) {
            return Err(TrainingError::InvalidConfig("epsilon_low must lie in (0, 1)"));
        }
        if !(self.epsilon_high > 0.0) {
            return Err(TrainingError::InvalidConfig("epsilon_high must be positive"));
        }
        if !(self.delta > 0.0) {
            return Err(TrainingError::InvalidConfig("delta must be positive"));
        }
        Ok(())
    }
}

/// Clipped surrogate on the tape: `rho = exp(new - old)`,
/// `-mean_t min(rho A, clip(rho, 1 - eps_low, 1 + eps_high) A)`.
/// `new_logp` is a `[n]` tape value; `old_logp` is held constant.
pub fn grpo_loss<T: Scalar>(
    tape: &mut Tape<T>,
    new_logp: Var,
    old_logp: &[T],
    advantage: T,
    config: &GrpoConfig,
) -> Result<Var, TrainingError> {
    let n = tape.value(new_logp).numel();
    if n != old_logp.len() {
        return Err(TrainingError::LengthMismatch {
            new: n,
            old: old_logp.len(),
        });
    }
    let old = tape.constant(Tensor::new(tape.value(new_logp).shape().to_vec(), old_logp.to_vec())?);
    let diff = tape.sub(new_logp, old)?;
    let ratio = tape.exp(diff)?;
    let unclipped = tape.scale(ratio, advantage)?;
    let lo = T::one() - T::of(config.epsilon_low);
    let hi = T::one() + T::of(config.epsilon_high);
    let clipped = tape.clamp(ratio, lo, hi)?;
    let clipped = tape.scale(clipped, advantage)?;
    let term = tape.minimum(unclipped, clipped)?;
    let mean = tape.mean(term)?;
    Ok(tape.scale(mean, -T::one())?)
}

/// Value of [`grpo_loss`] without a tape.
pub fn grpo_loss_value(new_logp: &[f64], old_logp: &[f64], advantage: f64, config: &GrpoConfig) -> Result<f64, TrainingError> {
    if new_logp.len() != old_logp.len() {
        return Err(TrainingError::LengthMismatch {
            new: new_logp.len(),
            old: old_logp.len(),
        });
    }
    if new_logp.is_empty() {
        return Err(TrainingError::EmptySequence);
    }
    let terms: Vec<f64> = new_logp
        .iter()
        .zip(old_logp)
        .map(|(&n, &o)| {
            let rho = Float::exp(n - o);
            let clipped = rho.clamp(1.0 - config.epsilon_low, 1.0 + config.epsilon_high);
            (rho * advantage).min(clipped * advantage)
        })
        .collect();
    Ok(-terms.iter().sum::<f64>() / terms.len() as f64)
}
