use crate::numerics::{Scalar, Tape, Var};

use super::TrainingError;

/// `-sum_t log p[t, target_t]` over positions where `mask[t]` holds.
/// `log_probs` is a `[n, vocab]` tape value of log-probabilities.
pub fn masked_nll<T: Scalar>(
    tape: &mut Tape<T>,
    log_probs: Var,
    targets: &[usize],
    mask: &[bool],
) -> Result<Var, TrainingError> {
    let shape = tape.value(log_probs).shape().to_vec();
    if shape.len() != 2 || shape[0] != targets.len() || targets.len() != mask.len() {
        return Err(TrainingError::LengthMismatch {
            new: shape[0],
            old: targets.len().min(mask.len()),
        });
    }
    let picks: alloc::vec::Vec<usize> = targets
        .iter()
        .zip(mask)
        .enumerate()
        .filter(|(_, (_, &m))| m)
        .map(|(t, (&target, _))| t * shape[1] + target)
        .collect();
    if picks.is_empty() {
        return Err(TrainingError::EmptySequence);
    }
    let n = picks.len();
    let picked = tape.gather(log_probs, picks.into(), [n])?;
    let total = tape.sum(picked)?;
    Ok(tape.scale(total, -T::one())?)
}
