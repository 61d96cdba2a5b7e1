use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    gated_reward, group_advantage, grpo_loss, masked_nll, GrpoConfig, PolicyStep, RewardBreakdown, TaskKind,
    ToyPolicy, TrainingError, EOS,
};
use crate::encoder::VisionEncoder;
use crate::image::RgbImage;
use crate::numerics::{Adam, Scalar, Tape, Tensor, Var};
use crate::orchestrator::{run_episode, run_episode_from, OrchestratorConfig, ScriptedPolicy, StopReason};

/// One prompt for rollouts: images, question and the gold answer.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskInstance {
    pub images: Vec<RgbImage>,
    pub question: String,
    pub gold: String,
    pub kind: TaskKind,
}

/// Supervised trajectory: the step texts a policy should reproduce.
#[derive(Clone, Debug, PartialEq)]
pub struct SftExample {
    pub images: Vec<RgbImage>,
    pub question: String,
    pub steps: Vec<String>,
}

/// An [`SftExample`] replayed through the orchestrator, with target tokens
/// and the features each step would have seen at inference.
#[derive(Clone, Debug)]
pub struct PreparedSft<T> {
    pub steps: Vec<PolicyStep<T>>,
}

impl<T> PreparedSft<T> {
    pub fn target_tokens(&self) -> usize {
        self.steps.iter().map(|s| s.tokens.len()).sum()
    }
}

/// Replays the example's steps with a scripted policy so crops and
/// re-encodings happen exactly as they would in an episode.
pub fn prepare_sft<T: Scalar>(
    policy: &ToyPolicy<T>,
    encoder: &VisionEncoder<T>,
    orchestrator: &OrchestratorConfig,
    example: &SftExample,
) -> Result<PreparedSft<T>, TrainingError> {
    if example.steps.is_empty() {
        return Err(TrainingError::Corpus("record has no steps".into()));
    }
    let mut targets = Vec::with_capacity(example.steps.len());
    for s in &example.steps {
        let mut t = policy.vocab().tokenize(s)?;
        t.push(EOS);
        targets.push(t);
    }
    let script = ScriptedPolicy::new(example.steps.iter().cloned());
    let state = run_episode(&script, encoder, example.images.clone(), &example.question, orchestrator, 0)?;
    let stop = state.stop.unwrap_or(StopReason::Malformed);
    if stop == StopReason::Malformed || state.generations.len() != example.steps.len() {
        return Err(TrainingError::Corpus(format!(
            "replay stopped ({stop}) after {} of {} steps",
            state.generations.len(),
            example.steps.len()
        )));
    }
    let mut steps = PolicyStep::from_episode(&state);
    for (step, t) in steps.iter_mut().zip(targets) {
        step.tokens = t;
    }
    Ok(PreparedSft { steps })
}

/// Summed token negative log-likelihood of every step. Only step tokens
/// enter the decoder, so prompt text never contributes.
pub fn sft_loss<T: Scalar>(
    tape: &mut Tape<T>,
    policy: &ToyPolicy<T>,
    params: &[Var],
    example: &PreparedSft<T>,
) -> Result<Var, TrainingError> {
    let mut total: Option<Var> = None;
    for step in &example.steps {
        let lp = policy.step_log_probs(tape, params, step, 1.0)?;
        let mask = vec![true; step.tokens.len()];
        let nll = masked_nll(tape, lp, &step.tokens, &mask)?;
        total = Some(match total {
            Some(t) => tape.add(t, nll)?,
            None => nll,
        });
    }
    total.ok_or(TrainingError::EmptySequence)
}

fn add_into<T: Scalar>(acc: &mut [Tensor<T>], grads: Vec<Tensor<T>>) {
    for (a, g) in acc.iter_mut().zip(grads) {
        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
            *x = *x + *y;
        }
    }
}

fn zeros_like<T: Scalar>(ts: &[Tensor<T>]) -> Vec<Tensor<T>> {
    ts.iter()
        .map(|t| Tensor::zeros(t.shape().to_vec()).expect("existing shape"))
        .collect()
}

/// Full-batch Adam on the mean per-example [`sft_loss`].
#[derive(Clone, Debug)]
pub struct SftTrainer<T> {
    optimizer: Adam<T>,
}

impl<T: Scalar> SftTrainer<T> {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            optimizer: Adam::new(T::of(learning_rate)),
        }
    }

    /// Mean loss over `data` without touching the weights.
    pub fn evaluate(&self, policy: &ToyPolicy<T>, data: &[PreparedSft<T>]) -> Result<f64, TrainingError> {
        let mut total = 0.0;
        for ex in data {
            let mut tape = Tape::new();
            let params = policy.params().register(&mut tape, false);
            let loss = sft_loss(&mut tape, policy, &params, ex)?;
            total += tape.value(loss).item()?.to_f64_lossy();
        }
        Ok(total / data.len().max(1) as f64)
    }

    /// One update; returns the loss before it.
    pub fn step(&mut self, policy: &mut ToyPolicy<T>, data: &[PreparedSft<T>]) -> Result<f64, TrainingError> {
        if data.is_empty() {
            return Err(TrainingError::EmptySequence);
        }
        let scale = T::of(1.0 / data.len() as f64);
        let mut acc = zeros_like(policy.params().tensors());
        let mut total = 0.0;
        for ex in data {
            let mut tape = Tape::new();
            let params = policy.params().register(&mut tape, true);
            let loss = sft_loss(&mut tape, policy, &params, ex)?;
            total += tape.value(loss).item()?.to_f64_lossy();
            let loss = tape.scale(loss, scale)?;
            let grads = tape.backward(loss)?;
            add_into(&mut acc, params.iter().map(|&p| grads.wrt(p)).collect());
        }
        self.optimizer.step(policy.params_mut().tensors_mut(), &acc)?;
        Ok(total / data.len() as f64)
    }
}

/// Runs `steps` SFT updates. The series holds the loss before each update
/// followed by the loss after the last one.
pub fn train_sft<T: Scalar>(
    policy: &mut ToyPolicy<T>,
    data: &[PreparedSft<T>],
    steps: usize,
    learning_rate: f64,
) -> Result<Vec<f64>, TrainingError> {
    let mut trainer = SftTrainer::new(learning_rate);
    let mut series = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        series.push(trainer.step(policy, data)?);
    }
    series.push(trainer.evaluate(policy, data)?);
    Ok(series)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoTrainConfig {
    pub updates: usize,
    pub prompts_per_update: usize,
    /// Rollouts per prompt.
    pub group_size: usize,
    pub learning_rate: f64,
    /// Optimizer passes over each batch of rollouts.
    pub ppo_epochs: usize,
    pub grpo: GrpoConfig,
    pub seed: u64,
}

impl Default for GrpoTrainConfig {
    fn default() -> Self {
        Self {
            updates: 300,
            prompts_per_update: 16,
            group_size: 4,
            learning_rate: 1e-3,
            ppo_epochs: 2,
            grpo: GrpoConfig::default(),
            seed: 0,
        }
    }
}

impl GrpoTrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        self.grpo.validate()?;
        if self.group_size < 2 {
            return Err(TrainingError::GroupTooSmall { size: self.group_size });
        }
        if self.prompts_per_update == 0 || self.ppo_epochs == 0 {
            return Err(TrainingError::InvalidConfig("prompts_per_update and ppo_epochs must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainingError::InvalidConfig("learning_rate must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Per-update averages over every rollout in the batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub mean_reward: f64,
    pub mean_r_correct: f64,
    pub mean_r_format: f64,
    pub mean_response_tokens: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateReport {
    pub metrics: StepMetrics,
    /// Rewards in rollout order: prompt-major, then group member.
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
    /// False when every advantage was zero and the weights were left alone.
    pub applied: bool,
}

struct Rollout<T> {
    steps: Vec<PolicyStep<T>>,
    advantage: f64,
}

/// Rollout, reward, advantage and clipped-objective update, one batch at a time.
#[derive(Clone, Debug)]
pub struct GrpoTrainer<T> {
    config: GrpoTrainConfig,
    optimizer: Adam<T>,
    step: u64,
}

impl<T: Scalar> GrpoTrainer<T> {
    /// `start_step` is the number of updates already done, e.g. from a checkpoint.
    pub fn new(config: GrpoTrainConfig, start_step: u64) -> Result<Self, TrainingError> {
        config.validate()?;
        Ok(Self {
            config,
            optimizer: Adam::new(T::of(config.learning_rate)),
            step: start_step,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &GrpoTrainConfig {
        &self.config
    }

    pub fn update(
        &mut self,
        policy: &mut ToyPolicy<T>,
        encoder: &VisionEncoder<T>,
        orchestrator: &OrchestratorConfig,
        sampler: &mut dyn FnMut(&mut ChaCha8Rng) -> TaskInstance,
    ) -> Result<UpdateReport, TrainingError> {
        let cfg = self.config;
        let temperature = orchestrator.sampling.temperature;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(self.step);

        let mut rollouts = Vec::new();
        let mut rewards = Vec::new();
        let mut advantages = Vec::new();
        let mut tokens = 0usize;
        for _ in 0..cfg.prompts_per_update {
            let task = sampler(&mut rng);
            let initial = if task.images.len() <= orchestrator.termination.visual_input_cap {
                let refs: Vec<&RgbImage> = task.images.iter().collect();
                Some(encoder.encode(&refs, "").map_err(crate::orchestrator::EpisodeError::from)?)
            } else {
                None
            };
            let mut group = Vec::with_capacity(cfg.group_size);
            let mut group_rewards = Vec::with_capacity(cfg.group_size);
            for _ in 0..cfg.group_size {
                let seed: u64 = rng.random();
                let state = run_episode_from(
                    &*policy,
                    encoder,
                    task.images.clone(),
                    &task.question,
                    orchestrator,
                    seed,
                    initial.clone(),
                )?;
                let r = gated_reward(&state.trajectory, &state.original_dims(), &task.gold, task.kind);
                tokens += state.response_tokens();
                group_rewards.push(r.r_total);
                rewards.push(r);
                group.push(PolicyStep::from_episode(&state));
            }
            let adv = group_advantage(&group_rewards, cfg.grpo.delta)?;
            for (steps, a) in group.into_iter().zip(&adv) {
                rollouts.push(Rollout { steps, advantage: *a });
            }
            advantages.extend(adv);
        }

        let n = rewards.len() as f64;
        let metrics = StepMetrics {
            step: self.step,
            mean_reward: rewards.iter().map(|r| r.r_total).sum::<f64>() / n,
            mean_r_correct: rewards.iter().map(|r| r.r_correct).sum::<f64>() / n,
            mean_r_format: rewards.iter().map(|r| r.r_format).sum::<f64>() / n,
            mean_response_tokens: tokens as f64 / n,
        };

        let active: Vec<&Rollout<T>> = rollouts
            .iter()
            .filter(|r| r.advantage != 0.0 && r.steps.iter().any(|s| !s.tokens.is_empty()))
            .collect();
        let applied = !active.is_empty();
        if applied {
            let mut old = Vec::with_capacity(active.len());
            for r in &active {
                let mut tape = Tape::new();
                let params = policy.params().register(&mut tape, false);
                let lp = policy.sequence_log_probs(&mut tape, &params, &r.steps, temperature)?;
                old.push(tape.value(lp).data().to_vec());
            }
            let scale = T::of(1.0 / n);
            for _ in 0..cfg.ppo_epochs {
                let mut acc = zeros_like(policy.params().tensors());
                for (r, old_logp) in active.iter().zip(&old) {
                    let mut tape = Tape::new();
                    let params = policy.params().register(&mut tape, true);
                    let lp = policy.sequence_log_probs(&mut tape, &params, &r.steps, temperature)?;
                    let loss = grpo_loss(&mut tape, lp, old_logp, T::of(r.advantage), &cfg.grpo)?;
                    let loss = tape.scale(loss, scale)?;
                    let grads = tape.backward(loss)?;
                    add_into(&mut acc, params.iter().map(|&p| grads.wrt(p)).collect());
                }
                self.optimizer.step(policy.params_mut().tensors_mut(), &acc)?;
            }
        }
        self.step += 1;
        Ok(UpdateReport {
            metrics,
            rewards,
            advantages,
            applied,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrpoRun {
    pub metrics: Vec<StepMetrics>,
    /// `r_total` of every rollout in generation order.
    pub episode_rewards: Vec<f64>,
}

pub fn train_grpo<T: Scalar>(
    policy: &mut ToyPolicy<T>,
    encoder: &VisionEncoder<T>,
    orchestrator: &OrchestratorConfig,
    config: GrpoTrainConfig,
    sampler: &mut dyn FnMut(&mut ChaCha8Rng) -> TaskInstance,
) -> Result<GrpoRun, TrainingError> {
    let mut trainer = GrpoTrainer::new(config, 0)?;
    let mut run = GrpoRun {
        metrics: Vec::with_capacity(config.updates),
        episode_rewards: Vec::new(),
    };
    for _ in 0..config.updates {
        let report = trainer.update(policy, encoder, orchestrator, sampler)?;
        run.metrics.push(report.metrics);
        run.episode_rewards.extend(report.rewards.iter().map(|r| r.r_total));
    }
    Ok(run)
}
