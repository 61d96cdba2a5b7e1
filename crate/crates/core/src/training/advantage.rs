use alloc::vec::Vec;

use num_traits::Float;

use super::TrainingError;

/// `(R_i - mean) / (std + delta)` with the population standard deviation.
pub fn group_advantage(rewards: &[f64], delta: f64) -> Result<Vec<f64>, TrainingError> {
    if rewards.len() < 2 {
        return Err(TrainingError::GroupTooSmall { size: rewards.len() });
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = Float::sqrt(var);
    Ok(rewards.iter().map(|r| (r - mean) / (std + delta)).collect())
}
