use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    assemble_context, CropRecord, Generation, OrchestratorConfig, Policy, PolicyContext, TerminationConfig,
    TraceEvent,
};
use crate::encoder::{EncodedFeatures, EncoderError, VisionEncoder};
use crate::image::RgbImage;
use crate::numerics::Scalar;
use crate::protocol::{
    parse_step, validate_regions, ParseError, Provenance, Region, RegionViolation, Step, Trajectory, VisualMemory,
};

/// Why an episode ended. Declaration order is the priority order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Answered,
    Malformed,
    Rounds,
    Budget,
}

impl core::fmt::Display for StopReason {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            StopReason::Answered => "answered",
            StopReason::Malformed => "malformed",
            StopReason::Rounds => "rounds",
            StopReason::Budget => "budget",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Continue,
    Stop(StopReason),
}

/// The step that ended an episode as malformed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepFailure {
    Parse(ParseError),
    Regions(Vec<RegionViolation>),
}

/// Features produced by one encoder call.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEntry<T> {
    /// Memory indices of the encoded images, in encoder input order.
    pub sources: Vec<usize>,
    pub inquiry: String,
    pub features: EncodedFeatures<T>,
}

#[derive(Clone, Debug)]
pub struct EpisodeState<T> {
    pub question: String,
    pub memory: VisualMemory,
    /// `f_0` first, then one entry per processed tool step.
    pub features: Vec<FeatureEntry<T>>,
    pub trajectory: Trajectory,
    pub generations: Vec<Generation>,
    /// Length of `features` when each generation was requested.
    pub features_at_round: Vec<usize>,
    /// Sources created by each entry of `trajectory.raw`.
    pub created_per_step: Vec<usize>,
    pub rounds_used: usize,
    pub visual_inputs_processed: usize,
    pub config: TerminationConfig,
    pub failure: Option<StepFailure>,
    /// Set when a tool call was refused because its crops could not be encoded within limits.
    pub budget_refused: bool,
    pub stop: Option<StopReason>,
    pub trace: Vec<TraceEvent>,
}

impl<T: Scalar> EpisodeState<T> {
    pub fn new(images: Vec<RgbImage>, question: &str, config: TerminationConfig) -> Self {
        Self {
            question: question.to_string(),
            memory: VisualMemory::new(images),
            features: Vec::new(),
            trajectory: Trajectory::new(),
            generations: Vec::new(),
            features_at_round: Vec::new(),
            created_per_step: Vec::new(),
            rounds_used: 0,
            visual_inputs_processed: 0,
            config,
            failure: None,
            budget_refused: false,
            stop: None,
            trace: Vec::new(),
        }
    }

    pub fn answer(&self) -> Option<&str> {
        self.trajectory.answer()
    }

    pub fn original_dims(&self) -> Vec<(usize, usize)> {
        self.memory
            .trace()
            .sources()
            .iter()
            .take_while(|s| s.provenance == Provenance::Original)
            .map(|s| (s.width, s.height))
            .collect()
    }

    /// Total tokens generated over the episode.
    pub fn response_tokens(&self) -> usize {
        self.generations.iter().map(|g| g.tokens.len()).sum()
    }
}

/// Stop test in priority order answered > malformed > rounds > budget.
pub fn check_termination<T: Scalar>(state: &EpisodeState<T>) -> Termination {
    if state.trajectory.is_answered() {
        Termination::Stop(StopReason::Answered)
    } else if state.failure.is_some() {
        Termination::Stop(StopReason::Malformed)
    } else if state.rounds_used >= state.config.t_max {
        Termination::Stop(StopReason::Rounds)
    } else if state.budget_refused {
        Termination::Stop(StopReason::Budget)
    } else {
        Termination::Continue
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EpisodeError {
    #[error("an episode needs at least one image")]
    NoImages,
    #[error("invalid orchestrator config: {0}")]
    InvalidConfig(&'static str),
    #[error("initial encoding failed: {0}")]
    InitialEncode(#[from] EncoderError),
}

/// Runs one episode of the generate / parse / crop / re-encode loop.
///
/// Every failure after the initial encoding becomes a stop reason; errors
/// are returned only for unusable inputs.
pub fn run_episode<T: Scalar, P: Policy<T> + ?Sized>(
    policy: &P,
    encoder: &VisionEncoder<T>,
    images: Vec<RgbImage>,
    question: &str,
    config: &OrchestratorConfig,
    seed: u64,
) -> Result<EpisodeState<T>, EpisodeError> {
    run_episode_from(policy, encoder, images, question, config, seed, None)
}

/// [`run_episode`] with the initial features supplied by the caller, which
/// must equal `encoder.encode(images, "")`. Rollouts that share a prompt
/// use this to encode it once.
pub fn run_episode_from<T: Scalar, P: Policy<T> + ?Sized>(
    policy: &P,
    encoder: &VisionEncoder<T>,
    images: Vec<RgbImage>,
    question: &str,
    config: &OrchestratorConfig,
    seed: u64,
    initial: Option<EncodedFeatures<T>>,
) -> Result<EpisodeState<T>, EpisodeError> {
    if images.is_empty() {
        return Err(EpisodeError::NoImages);
    }
    config.termination.validate().map_err(EpisodeError::InvalidConfig)?;
    config.sampling.validate().map_err(EpisodeError::InvalidConfig)?;
    let mut state = EpisodeState::new(images, question, config.termination);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n = state.memory.len();
    if n > config.termination.visual_input_cap {
        state.trace.push(TraceEvent::Refused {
            round: 0,
            requested: n,
            visual_inputs_processed: 0,
            cap: config.termination.visual_input_cap,
            detail: "initial images exceed the visual input cap".into(),
        });
        state.budget_refused = true;
    } else {
        let f0 = match initial {
            Some(f) if f.num_images() == n => f,
            _ => {
                let refs: Vec<&RgbImage> = state.memory.images().iter().collect();
                encoder.encode(&refs, "")?
            }
        };
        state.visual_inputs_processed = n;
        state.features.push(FeatureEntry {
            sources: (0..n).collect(),
            inquiry: String::new(),
            features: f0,
        });
        state.trace.push(TraceEvent::Encode {
            round: 0,
            sources: (0..n).collect(),
            inquiry: String::new(),
            visual_inputs_processed: n,
        });
    }

    loop {
        if let Termination::Stop(reason) = check_termination(&state) {
            state.stop = Some(reason);
            state.trace.push(TraceEvent::Termination {
                round: state.rounds_used,
                reason,
            });
            return Ok(state);
        }
        let prompt = assemble_context(&state);
        state.features_at_round.push(state.features.len());
        let generation = policy.generate(
            &PolicyContext {
                prompt: &prompt,
                state: &state,
                sampling: &config.sampling,
            },
            &mut rng,
        );
        state.rounds_used += 1;
        let round = state.rounds_used;
        state.trace.push(TraceEvent::Generation {
            round,
            text: generation.text.clone(),
            tokens: generation.tokens.len(),
        });
        let raw = generation.text.clone();
        state.generations.push(generation);
        state.created_per_step.push(0);
        match parse_step(&raw) {
            Err(e) => {
                state.trace.push(TraceEvent::Parse {
                    round,
                    ok: false,
                    step: None,
                    rule: Some(e.rule()),
                    message: Some(e.to_string()),
                });
                state.trajectory.push_unparsed(raw).expect("loop stops after an answer");
                state.failure = Some(StepFailure::Parse(e));
            }
            Ok(step) => {
                state.trace.push(TraceEvent::Parse {
                    round,
                    ok: true,
                    step: Some(if step.is_terminal() { "answer" } else { "tool" }),
                    rule: None,
                    message: None,
                });
                let checked = validate_regions(&step, state.memory.trace());
                let tool = match &step {
                    Step::Tool { inquiry, regions, .. } => Some((inquiry.clone(), regions.clone())),
                    Step::Answer { .. } => None,
                };
                state.trajectory.push(raw, step).expect("loop stops after an answer");
                match (checked, tool) {
                    (Err(violations), _) => {
                        state.trace.push(TraceEvent::RegionsRejected {
                            round,
                            violations: violations.iter().map(ToString::to_string).collect(),
                        });
                        state.failure = Some(StepFailure::Regions(violations));
                    }
                    (Ok(()), Some((inquiry, regions))) => {
                        process_tool_call(&mut state, encoder, round, &inquiry, &regions);
                    }
                    (Ok(()), None) => {}
                }
            }
        }
    }
}

/// Crops, upscales and re-encodes validated regions, or refuses the whole
/// call when it would break the visual-input cap or the encoder's limits.
fn process_tool_call<T: Scalar>(
    state: &mut EpisodeState<T>,
    encoder: &VisionEncoder<T>,
    round: usize,
    inquiry: &str,
    regions: &[Region],
) {
    let cap = state.config.visual_input_cap;
    let requested = regions.len();
    let refuse = |state: &mut EpisodeState<T>, detail: String| {
        state.trace.push(TraceEvent::Refused {
            round,
            requested,
            visual_inputs_processed: state.visual_inputs_processed,
            cap,
            detail,
        });
        state.budget_refused = true;
    };
    if state.visual_inputs_processed + requested > cap {
        refuse(state, "visual input cap".into());
        return;
    }
    // dry run on sizes only so nothing is appended when the encoder would refuse
    let mut dry = state.memory.trace().clone();
    let mut tokens = 0;
    for r in regions {
        let index = dry.append_crop(r).expect("regions validated");
        let info = dry.get(index).expect("just appended");
        match encoder.grid_of(info.width, info.height) {
            Ok((rows, cols)) => tokens += rows * cols,
            Err(e) => {
                refuse(state, e.to_string());
                return;
            }
        }
    }
    if tokens > encoder.config().max_visual_tokens {
        let e = EncoderError::TokenBudgetExceeded {
            tokens,
            budget: encoder.config().max_visual_tokens,
        };
        refuse(state, e.to_string());
        return;
    }

    let mut created = Vec::with_capacity(requested);
    for r in regions {
        let index = state.memory.crop_and_upscale(r).expect("regions validated");
        let info = *state.memory.trace().get(index).expect("just appended");
        if let Provenance::Crop { parent, bbox } = info.provenance {
            created.push(CropRecord {
                index,
                parent,
                bbox,
                width: info.width,
                height: info.height,
            });
        }
    }
    let sources: Vec<usize> = created.iter().map(|c| c.index).collect();
    *state.created_per_step.last_mut().expect("pushed this round") = sources.len();
    state.trace.push(TraceEvent::Crops { round, created });
    let refs: Vec<&RgbImage> = sources
        .iter()
        .map(|&i| state.memory.image(i).expect("just appended"))
        .collect();
    let features = encoder.encode(&refs, inquiry).expect("sizes checked against the encoder above");
    state.visual_inputs_processed += requested;
    state.trace.push(TraceEvent::Encode {
        round,
        sources: sources.clone(),
        inquiry: inquiry.to_string(),
        visual_inputs_processed: state.visual_inputs_processed,
    });
    state.features.push(FeatureEntry {
        sources,
        inquiry: inquiry.to_string(),
        features,
    });
}
