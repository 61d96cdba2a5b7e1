//! The four subcommands. Each writes its files, prints a short report and
//! returns an [`Error`] whose exit code the binary forwards.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vilavt_core::encoder::{attention_heatmap, EncodedFeatures, VisionEncoder};
use vilavt_core::image::RgbImage;
use vilavt_core::numerics::Tensor;
use vilavt_core::orchestrator::{run_episode, trace_to_jsonl, Policy, ScriptedPolicy};
use vilavt_core::synth::{format_warm_start, quadrant_task, zoom_trajectory};
use vilavt_core::training::{gated_reward, prepare_sft, train_sft, GrpoTrainer, SftTrainer, TaskKind, ToyPolicy};

use crate::cli::{Command, EncodeArgs, EpisodeArgs, Mode, SynthArgs, TrainArgs};
use crate::config::RunConfig;
use crate::corpus::{read_corpus, read_script, read_task, write_corpus, CorpusRecord, TaskFile};
use crate::weights::{self, NamedTensor};
use crate::{netpbm, Error};

pub const ENCODER_PREFIX: &str = "encoder.";
pub const POLICY_PREFIX: &str = "policy.";
/// Offset added to the run seed for the warm-start corpus.
pub const WARM_START_SEED_OFFSET: u64 = 1000;

pub fn run(command: &Command, out: &mut dyn Write) -> Result<(), Error> {
    match command {
        Command::Encode(a) => encode(a, out),
        Command::Episode(a) => episode(a, out),
        Command::Train(a) => train(a, out),
        Command::Synth(a) => synth(a, out),
    }
}

fn say(out: &mut dyn Write, line: &str) -> Result<(), Error> {
    writeln!(out, "{line}").map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Encoder and policy built from a config, optionally overwritten by a checkpoint.
#[derive(Clone, Debug)]
pub struct Model {
    pub encoder: VisionEncoder<f32>,
    pub policy: ToyPolicy<f32>,
    /// Update counter of the loaded checkpoint, 0 otherwise.
    pub step: u64,
    /// True once policy tensors were loaded.
    pub trained_policy: bool,
}

impl Model {
    /// Fresh weights seeded by `config.seed`.
    pub fn new(config: &RunConfig) -> Result<Self, Error> {
        let encoder =
            VisionEncoder::new(config.encoder.clone(), config.seed).map_err(|e| Error::Config(e.to_string()))?;
        let policy = ToyPolicy::new(config.policy, config.encoder.hidden_dim, config.seed)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            encoder,
            policy,
            step: 0,
            trained_policy: false,
        })
    }

    /// Fresh weights, then `paths.weights` when set.
    pub fn from_config(config: &RunConfig) -> Result<Self, Error> {
        let mut model = Self::new(config)?;
        if let Some(path) = &config.paths.weights {
            model.load(path)?;
        }
        Ok(model)
    }

    /// Loads whichever of the encoder and policy the checkpoint holds.
    pub fn load(&mut self, path: &Path) -> Result<(), Error> {
        let tensors = weights::load(path)?;
        let has = |prefix: &str| tensors.iter().any(|t| t.name.starts_with(prefix));
        if !has(ENCODER_PREFIX) && !has(POLICY_PREFIX) {
            return Err(Error::format(path, "checkpoint holds no encoder or policy tensors"));
        }
        if has(ENCODER_PREFIX) {
            weights::into_params(ENCODER_PREFIX, self.encoder.params_mut(), &tensors)
                .map_err(|e| Error::format(path, e))?;
        }
        if has(POLICY_PREFIX) {
            weights::into_params(POLICY_PREFIX, self.policy.params_mut(), &tensors)
                .map_err(|e| Error::format(path, e))?;
            self.trained_policy = true;
        }
        self.step = weights::read_step(&tensors).unwrap_or(0);
        Ok(())
    }

    pub fn save(&self, path: &Path, step: u64) -> Result<(), Error> {
        let mut tensors = weights::from_params(ENCODER_PREFIX, self.encoder.params());
        tensors.extend(weights::from_params(POLICY_PREFIX, self.policy.params()));
        tensors.push(weights::step_tensor(step));
        weights::save(path, &tensors)
    }
}

/// Heatmap of one image, accumulated in f64 from the encoder's attention.
pub fn heatmap(feats: &EncodedFeatures<f32>, image: usize) -> Result<Tensor<f64>, Error> {
    let wide = EncodedFeatures::<f64> {
        per_image: Vec::new(),
        grids: feats.grids.clone(),
        layout: feats.layout.clone(),
        last_attention: feats.last_attention.iter().map(Tensor::cast).collect(),
    };
    Ok(attention_heatmap(&wide, image)?)
}

/// Plain PGM of a heatmap, scaled so its largest entry maps to 65535.
pub fn heatmap_pgm(heat: &Tensor<f64>) -> String {
    let max = heat.data().iter().copied().fold(0.0, f64::max);
    let samples: Vec<u16> = heat
        .data()
        .iter()
        .map(|&v| if max > 0.0 { (v / max * 65535.0).round() as u16 } else { 0 })
        .collect();
    netpbm::encode_pgm_plain(heat.cols(), heat.rows(), 65535, &samples)
}

fn encode(args: &EncodeArgs, out: &mut dyn Write) -> Result<(), Error> {
    let config = RunConfig::load(&args.config)?;
    let model = Model::from_config(&config)?;
    let images = args
        .images
        .iter()
        .map(|p| netpbm::read_image(p))
        .collect::<Result<Vec<RgbImage>, _>>()?;
    let refs: Vec<&RgbImage> = images.iter().collect();
    let feats = model.encoder.encode(&refs, &args.inquiry)?;

    let dir = args.out.clone().unwrap_or_else(|| config.paths.output_dir.clone());
    create_dir(&dir)?;
    for (i, f) in feats.per_image.iter().enumerate() {
        let (rows, cols) = feats.grids[i];
        let path = dir.join(format!("features_{i}.bin"));
        let grid = NamedTensor {
            name: "grid".into(),
            shape: vec![2],
            data: vec![rows as f32, cols as f32],
        };
        weights::save(&path, &[NamedTensor::from_tensor("features", f), grid])?;
        say(out, &format!("{}: {} tokens ({rows}x{cols} grid)", path.display(), f.rows()))?;
    }
    if args.heatmaps {
        for i in 0..feats.num_images() {
            let heat = heatmap(&feats, i)?;
            let bin = dir.join(format!("heatmap_{i}.bin"));
            weights::save(&bin, &[NamedTensor::from_tensor("heatmap", &heat)])?;
            let pgm = dir.join(format!("heatmap_{i}.pgm"));
            write_file(&pgm, heatmap_pgm(&heat))?;
            say(out, &format!("{}", pgm.display()))?;
        }
    }
    Ok(())
}

fn episode(args: &EpisodeArgs, out: &mut dyn Write) -> Result<(), Error> {
    let config = RunConfig::load(&args.config)?;
    let (_, task) = read_task(&args.task)?;
    let mut model = Model::from_config(&config)?;
    let policy: Box<dyn Policy<f32>> = match args.policy.split_once(':') {
        Some(("scripted", path)) => Box::new(ScriptedPolicy::new(read_script(Path::new(path))?)),
        Some(("checkpoint", path)) => {
            model.load(Path::new(path))?;
            if !model.trained_policy {
                return Err(Error::format(Path::new(path), "checkpoint holds no policy tensors"));
            }
            Box::new(model.policy.clone())
        }
        _ => {
            return Err(Error::Usage(format!(
                "policy must be scripted:<file> or checkpoint:<file>, got {:?}",
                args.policy
            )))
        }
    };
    let seed = args.seed.unwrap_or(config.seed);
    let state = run_episode(
        policy.as_ref(),
        &model.encoder,
        task.images.clone(),
        &task.question,
        &config.orchestrator,
        seed,
    )?;
    let reward = gated_reward(&state.trajectory, &state.original_dims(), &task.gold, task.kind);

    let trace = args
        .trace
        .clone()
        .unwrap_or_else(|| config.paths.output_dir.join("trace.jsonl"));
    if let Some(parent) = trace.parent() {
        create_dir(parent)?;
    }
    write_file(&trace, trace_to_jsonl(&state.trace))?;

    let stop = state.stop.map_or_else(|| "none".to_string(), |s| s.to_string());
    say(out, &format!("stop: {stop}"))?;
    say(out, &format!("rounds: {}", state.rounds_used))?;
    say(out, &format!("answer: {}", state.answer().unwrap_or("none")))?;
    say(out, &format!("r_correct: {:?}", reward.r_correct))?;
    say(out, &format!("r_format: {:?}", reward.r_format))?;
    say(out, &format!("r_total: {:?}", reward.r_total))?;
    say(out, &format!("trace: {}", trace.display()))
}

fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("checkpoint_{step:06}.bin"))
}

fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<(), Error> {
    let config = RunConfig::load(&args.config)?;
    let mut model = Model::new(&config)?;
    let start = match (&args.resume, &config.paths.weights) {
        (Some(path), _) => {
            model.load(path)?;
            model.step
        }
        (None, Some(path)) => {
            model.load(path)?;
            0
        }
        (None, None) => 0,
    };
    let dir = config.paths.output_dir.clone();
    create_dir(&dir)?;
    let metrics_path = dir.join("metrics.jsonl");
    let file = if args.resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&metrics_path)
    } else {
        File::create(&metrics_path)
    }
    .map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = MetricsWriter {
        path: metrics_path,
        inner: BufWriter::new(file),
    };

    let interval = config.training.checkpoint_interval as u64;
    let total = config.training.steps as u64;
    let save_interval = |model: &Model, step: u64| -> Result<(), Error> {
        if interval > 0 && step.is_multiple_of(interval) && step < total {
            model.save(&checkpoint_path(&dir, step), step)?;
        }
        Ok(())
    };

    let end = match args.mode {
        Mode::Sft => {
            let corpus = config
                .paths
                .corpus
                .as_ref()
                .ok_or_else(|| Error::Config("sft needs paths.corpus".into()))?;
            let mut data = Vec::new();
            for record in read_corpus(corpus)? {
                let example = record.to_example(corpus)?;
                let prepared = prepare_sft(&model.policy, &model.encoder, &config.orchestrator, &example)
                    .map_err(|e| Error::format(corpus, format!("record {}: {e}", record.task_id)))?;
                data.push(prepared);
            }
            let mut trainer = SftTrainer::new(config.training.sft_learning_rate);
            let mut step = start;
            while step < total {
                let loss = trainer.step(&mut model.policy, &data)?;
                metrics.line(&serde_json::json!({ "step": step, "loss": loss }))?;
                step += 1;
                save_interval(&model, step)?;
            }
            let loss = trainer.evaluate(&model.policy, &data)?;
            if start < total {
                metrics.line(&serde_json::json!({ "step": step, "loss": loss }))?;
            }
            say(out, &format!("sft: {} records, step {step}, loss {loss:.6}", data.len()))?;
            step
        }
        Mode::Grpo => {
            if !model.trained_policy && config.training.warm_start_steps > 0 && config.training.warm_start_examples > 0
            {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(WARM_START_SEED_OFFSET));
                let data = format_warm_start(&mut rng, config.training.warm_start_examples)
                    .iter()
                    .map(|ex| prepare_sft(&model.policy, &model.encoder, &config.orchestrator, ex))
                    .collect::<Result<Vec<_>, _>>()?;
                let series = train_sft(
                    &mut model.policy,
                    &data,
                    config.training.warm_start_steps,
                    config.training.warm_start_learning_rate,
                )?;
                say(
                    out,
                    &format!(
                        "warm start: loss {:.4} -> {:.4}",
                        series[0],
                        series[series.len() - 1]
                    ),
                )?;
            }
            let mut trainer = GrpoTrainer::new(config.training.grpo(config.seed), start)?;
            let mut sampler = |rng: &mut ChaCha8Rng| quadrant_task(rng).instance();
            let mut last = None;
            while trainer.step() < total {
                let report = trainer.update(&mut model.policy, &model.encoder, &config.orchestrator, &mut sampler)?;
                metrics.line(&report.metrics)?;
                last = Some(report.metrics);
                save_interval(&model, trainer.step())?;
            }
            match last {
                Some(m) => say(out, &format!("grpo: step {}, mean reward {:.4}", trainer.step(), m.mean_reward))?,
                None => say(out, &format!("grpo: already at step {}", trainer.step()))?,
            }
            trainer.step()
        }
    };
    metrics.finish()?;
    let path = dir.join("checkpoint.bin");
    model.save(&path, end)?;
    say(out, &format!("checkpoint: {}", path.display()))
}

struct MetricsWriter {
    path: PathBuf,
    inner: BufWriter<File>,
}

impl MetricsWriter {
    fn line<S: serde::Serialize>(&mut self, value: &S) -> Result<(), Error> {
        let text = serde_json::to_string(value).expect("metrics serialize");
        writeln!(self.inner, "{text}").map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<(), Error> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn synth(args: &SynthArgs, out: &mut dyn Write) -> Result<(), Error> {
    let config = RunConfig::load(&args.config)?;
    if args.count == 0 {
        return Err(Error::Usage("--count must be at least 1".into()));
    }
    let dir = args.out.clone().unwrap_or_else(|| config.paths.output_dir.clone());
    create_dir(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.unwrap_or(config.seed));
    let mut corpus = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let task = quadrant_task(&mut rng);
        let stem = format!("task_{i:04}");
        let image = format!("{stem}.ppm");
        netpbm::write_ppm(&dir.join(&image), &task.image)?;
        corpus.push(CorpusRecord {
            task_id: stem.clone(),
            images: vec![PathBuf::from(&image)],
            question: task.question.clone(),
            steps: zoom_trajectory(&task),
            answer: task.answer.clone(),
        });
        let sidecar = TaskFile {
            task_id: stem.clone(),
            images: vec![PathBuf::from(image)],
            question: task.question,
            answer: task.answer,
            kind: TaskKind::MultipleChoice,
            region: Some(task.region),
        };
        let mut text = serde_json::to_string_pretty(&sidecar).expect("task serializes");
        text.push('\n');
        write_file(&dir.join(format!("{stem}.json")), text)?;
    }
    write_corpus(&dir.join("corpus.jsonl"), &corpus)?;
    say(out, &format!("{} tasks in {}", args.count, dir.display()))
}
