use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::protocol::{trajectory_format_valid, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MultipleChoice,
    Numeric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_correct: f64,
    pub r_format: f64,
    pub r_total: f64,
}

impl RewardBreakdown {
    /// Correctness gates everything: `1(r_correct > 0) * (r_correct + r_format)`.
    pub fn gated(r_correct: f64, r_format: f64) -> Self {
        let r_total = if r_correct > 0.0 { r_correct + r_format } else { 0.0 };
        Self {
            r_correct,
            r_format,
            r_total,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("relative accuracy is undefined for a zero gold value")]
pub struct GoldZeroError;

/// Trim, uppercase, then drop trailing punctuation.
pub fn normalize_choice(text: &str) -> String {
    let upper = text.trim().to_uppercase();
    String::from(upper.trim_end_matches(|c: char| c.is_ascii_punctuation()).trim_end())
}

pub fn reward_mc(predicted: &str, gold: &str) -> f64 {
    if normalize_choice(predicted) == normalize_choice(gold) {
        1.0
    } else {
        0.0
    }
}

/// Fraction of the thresholds `0.50, 0.55, ..., 0.95` at which the relative
/// error stays below `1 - threshold`. Compared as
/// `20 |p - g| < (10 - k) |g|` so the thresholds are exact.
pub fn reward_mra(predicted: f64, gold: f64) -> Result<f64, GoldZeroError> {
    if gold == 0.0 {
        return Err(GoldZeroError);
    }
    if !predicted.is_finite() {
        return Ok(0.0);
    }
    let err = 20.0 * (predicted - gold).abs();
    let passed = (0..10).filter(|&k| err < f64::from(10 - k) * gold.abs()).count();
    Ok(passed as f64 / 10.0)
}

/// First decimal literal (optional sign, digits, optional fraction) in `text`.
pub fn parse_number(text: &str) -> Option<f64> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let mut start = i;
            if i > 0 && (bytes[i - 1] == b'-' || bytes[i - 1] == b'+') {
                start = i - 1;
            }
            let mut end = i;
            while end < bytes.len() && bytes[end].is_ascii_digit() {
                end += 1;
            }
            if end + 1 < bytes.len() && bytes[end] == b'.' && bytes[end + 1].is_ascii_digit() {
                end += 1;
                while end < bytes.len() && bytes[end].is_ascii_digit() {
                    end += 1;
                }
            }
            return text[start..end].parse().ok();
        }
        i += 1;
    }
    None
}

/// Correctness of a final answer. Numeric answers use relative accuracy; a
/// zero gold value falls back to exact equality.
pub fn answer_score(answer: &str, gold: &str, kind: TaskKind) -> f64 {
    match kind {
        TaskKind::MultipleChoice => reward_mc(answer, gold),
        TaskKind::Numeric => match (parse_number(answer), parse_number(gold)) {
            (Some(p), Some(g)) => reward_mra(p, g).unwrap_or(if p == g { 1.0 } else { 0.0 }),
            _ => 0.0,
        },
    }
}

/// Reward of a finished trajectory. No answer means `r_correct = 0`.
pub fn gated_reward(traj: &Trajectory, originals: &[(usize, usize)], gold: &str, kind: TaskKind) -> RewardBreakdown {
    let r_correct = traj.answer().map_or(0.0, |a| answer_score(a, gold, kind));
    let r_format = if trajectory_format_valid(traj, originals) { 1.0 } else { 0.0 };
    RewardBreakdown::gated(r_correct, r_format)
}
