use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use super::SamplingConfig;

/// One sampled token with its log-probability under the temperature-scaled
/// (untruncated) distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sampled {
    pub index: usize,
    pub logp: f64,
}

/// `log_softmax(logits / temperature)`.
pub fn tempered_log_probs(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scaled.iter().map(|&s| Float::exp(s - max)).sum();
    let log_z = max + Float::ln(sum);
    scaled.iter().map(|&s| s - log_z).collect()
}

/// Nucleus sampling: keep the most probable tokens until their mass
/// reaches `top_p` (ties broken by lower index), renormalize, draw.
pub fn sample_top_p<R: Rng + ?Sized>(logits: &[f64], config: &SamplingConfig, rng: &mut R) -> Sampled {
    let logp = tempered_log_probs(logits, config.temperature);
    let mut order: Vec<usize> = (0..logp.len()).collect();
    order.sort_by(|&a, &b| logp[b].total_cmp(&logp[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for &i in &order {
        kept.push(i);
        mass += Float::exp(logp[i]);
        if mass >= config.top_p {
            break;
        }
    }
    let u: f64 = rng.random::<f64>() * mass;
    let mut acc = 0.0;
    let mut index = *kept.last().expect("non-empty vocabulary");
    for &i in &kept {
        acc += Float::exp(logp[i]);
        if u < acc {
            index = i;
            break;
        }
    }
    Sampled {
        index,
        logp: logp[index],
    }
}
