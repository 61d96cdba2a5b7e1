use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TrainingError, Vocab, EOS};
use crate::encoder::model::gaussian;
use crate::numerics::{inv_sqrt, ParamSet, Scalar, Tape, Tensor, Var};
use crate::orchestrator::{sample_top_p, EpisodeState, Generation, Policy, PolicyContext};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyPolicyConfig {
    pub model_dim: usize,
    pub mlp_dim: usize,
    /// Attention heads of the feature read; must divide `model_dim`.
    pub read_heads: usize,
    /// Longest step the position table covers; later positions share the last row.
    pub max_positions: usize,
    pub max_rounds: usize,
}

impl Default for ToyPolicyConfig {
    fn default() -> Self {
        Self {
            model_dim: 32,
            mlp_dim: 64,
            read_heads: 4,
            max_positions: 64,
            max_rounds: 16,
        }
    }
}

impl ToyPolicyConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if self.model_dim == 0 || self.mlp_dim == 0 || self.max_positions == 0 || self.max_rounds == 0 {
            return Err(TrainingError::InvalidConfig("toy policy dimensions must be positive"));
        }
        if self.read_heads == 0 || !self.model_dim.is_multiple_of(self.read_heads) {
            return Err(TrainingError::InvalidConfig("read_heads must divide model_dim"));
        }
        Ok(())
    }
}

/// One generated step as the decoder saw it.
#[derive(Clone, Debug)]
pub struct PolicyStep<T> {
    /// Encoder outputs visible at this round, stacked as `[N, feature_dim]`.
    pub features: Option<Arc<Tensor<T>>>,
    pub round: usize,
    /// Generated token ids, end-of-step token included.
    pub tokens: Vec<usize>,
}

impl<T: Scalar> PolicyStep<T> {
    /// Steps of a finished episode, paired with the features each one saw.
    pub fn from_episode(state: &EpisodeState<T>) -> Vec<Self> {
        state
            .generations
            .iter()
            .zip(&state.features_at_round)
            .enumerate()
            .map(|(round, (g, &visible))| Self {
                features: stack_features(state, visible).map(Arc::new),
                round,
                tokens: g.tokens.clone(),
            })
            .collect()
    }
}

/// Row-stacks every per-image feature tensor of the first `visible` encoder calls.
pub fn stack_features<T: Scalar>(state: &EpisodeState<T>, visible: usize) -> Option<Tensor<T>> {
    let parts: Vec<&Tensor<T>> = state.features[..visible]
        .iter()
        .flat_map(|e| e.features.per_image.iter())
        .collect();
    let first = parts.first()?;
    let cols = first.cols();
    let rows = parts.iter().map(|t| t.rows()).sum::<usize>();
    let mut data: Vec<T> = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    let mut mean = vec![T::zero(); cols];
    for row in data.chunks(cols) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m = *m + x;
        }
    }
    let inv = T::one() / T::of(rows as f64);
    for m in mean.iter_mut() {
        *m = *m * inv;
    }
    for row in data.chunks_mut(cols) {
        for (x, &m) in row.iter_mut().zip(&mean) {
            *x = *x - m;
        }
    }
    Some(Tensor::new([rows, cols], data).expect("rows sum to the data"))
}

/// Small decoder over [`Vocab`]. Each position sees the previous token, its
/// position, the round number, and an attention-pooled read of the encoder
/// features visible at that round.
#[derive(Clone, Debug)]
pub struct ToyPolicy<T> {
    config: ToyPolicyConfig,
    vocab: Vocab,
    feature_dim: usize,
    params: ParamSet<T>,
}

const TOK_EMB: usize = 0;
const POS_EMB: usize = 1;
const ROUND_EMB: usize = 2;
const W_QUERY: usize = 3;
const W_KEY: usize = 4;
const W_VALUE: usize = 5;
const W_HIDDEN: usize = 6;
const B_HIDDEN: usize = 7;
const W_OUT: usize = 8;
const B_OUT: usize = 9;

impl<T: Scalar> ToyPolicy<T> {
    pub fn new(config: ToyPolicyConfig, feature_dim: usize, seed: u64) -> Result<Self, TrainingError> {
        config.validate()?;
        if feature_dim == 0 {
            return Err(TrainingError::InvalidConfig("feature_dim must be positive"));
        }
        let vocab = Vocab::default();
        let v = vocab.len();
        let d = config.model_dim;
        let m = config.mlp_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        p.push("tok_emb", gaussian(&mut rng, &[v, d], 1.0));
        p.push("pos_emb", gaussian(&mut rng, &[config.max_positions, d], 1.0));
        p.push("round_emb", gaussian(&mut rng, &[config.max_rounds, d], 1.0));
        p.push("attn.query", gaussian(&mut rng, &[d, d], inv_sqrt(d)));
        p.push("attn.key", gaussian(&mut rng, &[feature_dim, d], inv_sqrt(feature_dim)));
        p.push("attn.value", gaussian(&mut rng, &[feature_dim, d], inv_sqrt(feature_dim)));
        p.push("mlp.weight", gaussian(&mut rng, &[d, m], inv_sqrt(d)));
        p.push("mlp.bias", Tensor::zeros([m])?);
        p.push("out.weight", gaussian(&mut rng, &[m, v], inv_sqrt(m)));
        p.push("out.bias", Tensor::zeros([v])?);
        Ok(Self {
            config,
            vocab,
            feature_dim,
            params: p,
        })
    }

    pub fn config(&self) -> &ToyPolicyConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Attention keys and values `[N, d]` of the stacked features.
    pub fn feature_keys(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        features: &Tensor<T>,
    ) -> Result<(Var, Var), TrainingError> {
        let f = tape.constant(features.clone());
        let k = tape.matmul(f, params[W_KEY])?;
        let v = tape.matmul(f, params[W_VALUE])?;
        Ok((k, v))
    }

    /// Teacher-forced logits `[n, |V|]` for a step whose inputs are the
    /// end-of-step token followed by all but the last generated token.
    pub fn step_logits(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        keys: Option<(Var, Var)>,
        round: usize,
        inputs: &[usize],
    ) -> Result<Var, TrainingError> {
        let d = self.config.model_dim;
        let n = inputs.len();
        if n == 0 {
            return Err(TrainingError::EmptySequence);
        }
        let positions: Vec<usize> = (0..n).map(|t| t.min(self.config.max_positions - 1)).collect();
        let rounds = vec![round.min(self.config.max_rounds - 1); n];
        let tok = embed(tape, params[TOK_EMB], inputs, d)?;
        let pos = embed(tape, params[POS_EMB], &positions, d)?;
        let rnd = embed(tape, params[ROUND_EMB], &rounds, d)?;
        let mut x = tape.add(tok, pos)?;
        x = tape.add(x, rnd)?;
        if let Some((k, v)) = keys {
            let q = tape.matmul(x, params[W_QUERY])?;
            let heads = self.config.read_heads;
            let hd = d / heads;
            let mut reads = Vec::with_capacity(heads);
            for h in 0..heads {
                let (qh, kh, vh) = if heads == 1 {
                    (q, k, v)
                } else {
                    (
                        tape.slice_cols(q, h * hd, hd)?,
                        tape.slice_cols(k, h * hd, hd)?,
                        tape.slice_cols(v, h * hd, hd)?,
                    )
                };
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let scores = tape.scale(scores, T::of(inv_sqrt(hd)))?;
                let log_attn = tape.log_softmax(scores)?;
                let attn = tape.exp(log_attn)?;
                reads.push(tape.matmul(attn, vh)?);
            }
            let read = if heads == 1 { reads[0] } else { tape.concat(&reads, 1)? };
            x = tape.add(x, read)?;
        }
        let h = tape.matmul(x, params[W_HIDDEN])?;
        let h = tape.add_row(h, params[B_HIDDEN])?;
        let h = tape.gelu(h)?;
        let logits = tape.matmul(h, params[W_OUT])?;
        Ok(tape.add_row(logits, params[B_OUT])?)
    }

    /// Log-probabilities `[n, |V|]` of `log_softmax(logits / temperature)`.
    pub fn step_log_probs(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        step: &PolicyStep<T>,
        temperature: f64,
    ) -> Result<Var, TrainingError> {
        let inputs = decoder_inputs(&step.tokens);
        let keys = match step.features.as_deref() {
            Some(f) => Some(self.feature_keys(tape, params, f)?),
            None => None,
        };
        let logits = self.step_logits(tape, params, keys, step.round, &inputs)?;
        let logits = if temperature == 1.0 {
            logits
        } else {
            tape.scale(logits, T::of(1.0 / temperature))?
        };
        Ok(tape.log_softmax(logits)?)
    }

    /// Log-probabilities of the generated tokens of every step, concatenated.
    pub fn sequence_log_probs(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        steps: &[PolicyStep<T>],
        temperature: f64,
    ) -> Result<Var, TrainingError> {
        let mut parts = Vec::with_capacity(steps.len());
        for step in steps.iter().filter(|s| !s.tokens.is_empty()) {
            let lp = self.step_log_probs(tape, params, step, temperature)?;
            parts.push(tape.pick(lp, &step.tokens)?);
        }
        if parts.is_empty() {
            return Err(TrainingError::EmptySequence);
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        Ok(tape.concat(&parts, 0)?)
    }
}

/// End-of-step token, then every token but the last.
pub fn decoder_inputs(tokens: &[usize]) -> Vec<usize> {
    let mut inputs = Vec::with_capacity(tokens.len().max(1));
    inputs.push(EOS);
    inputs.extend_from_slice(&tokens[..tokens.len().saturating_sub(1)]);
    inputs
}

fn embed<T: Scalar>(tape: &mut Tape<T>, table: Var, ids: &[usize], d: usize) -> Result<Var, TrainingError> {
    let idx: Arc<[usize]> = ids.iter().flat_map(|&i| (i * d)..(i * d + d)).collect();
    Ok(tape.gather(table, idx, [ids.len(), d])?)
}

impl<T: Scalar> Policy<T> for ToyPolicy<T> {
    fn generate(&self, ctx: &PolicyContext<'_, T>, rng: &mut ChaCha8Rng) -> Generation {
        let state = ctx.state;
        let round = state.generations.len();
        let cached = stack_features(state, state.features.len()).map(|f| {
            let mut tape = Tape::new();
            let params = self.params.register(&mut tape, false);
            let (k, v) = self.feature_keys(&mut tape, &params, &f).expect("feature width fixed at construction");
            (tape.value(k).clone(), tape.value(v).clone())
        });
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        while tokens.len() < ctx.sampling.max_step_tokens {
            let mut inputs = vec![EOS];
            inputs.extend_from_slice(&tokens);
            let mut tape = Tape::new();
            let params = self.params.register(&mut tape, false);
            let keys = cached
                .as_ref()
                .map(|(k, v)| (tape.constant(k.clone()), tape.constant(v.clone())));
            let logits = self
                .step_logits(&mut tape, &params, keys, round, &inputs)
                .expect("decoder shapes are fixed at construction");
            let last: Vec<f64> = tape.value(logits).row(inputs.len() - 1).iter().map(|v| v.to_f64_lossy()).collect();
            let s = sample_top_p(&last, ctx.sampling, rng);
            tokens.push(s.index);
            logprobs.push(s.logp);
            if s.index == EOS {
                break;
            }
        }
        Generation {
            text: self.vocab.detokenize(&tokens),
            tokens,
            logprobs,
        }
    }
}
