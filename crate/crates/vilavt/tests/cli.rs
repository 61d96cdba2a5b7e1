use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vilavt::commands::Model;
use vilavt::corpus::TaskFile;
use vilavt::{netpbm, weights, RunConfig};
use vilavt_core::encoder::{EncoderConfig, VisionEncoder};
use vilavt_core::image::RgbImage;
use vilavt_core::synth::{quadrant_of, CELL_PIXELS, TARGET_COLOR};
use vilavt_core::training::StepMetrics;

fn vilavt(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vilavt"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stdout:\n{}\nstderr:\n{}", stdout(o), stderr(o));
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn synth(dir: &Path, count: usize, seed: u64, out: &str) {
    write(dir, "empty.toml", "");
    ok(&vilavt(
        &["synth", "--config", "empty.toml", "--count", &count.to_string(), "--seed", &seed.to_string(), "--out", out],
        dir,
    ));
}

fn read_task(path: &Path) -> TaskFile {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn checker(w: usize, h: usize) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| [(x * 7 % 256) as u8, (y * 13 % 256) as u8, ((x + y) * 5 % 256) as u8])
}

#[test]
fn encode_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let img = checker(24, 16);
    netpbm::write_ppm(&tmp.path().join("a.ppm"), &img).unwrap();
    write(tmp.path(), "c.toml", "seed = 3");
    ok(&vilavt(&["encode", "--config", "c.toml", "--image", "a.ppm", "--out", "enc"], tmp.path()));

    let enc = VisionEncoder::<f32>::new(EncoderConfig::default(), 3).unwrap();
    let want = enc.encode(&[&img], "").unwrap();
    let dump = weights::load(&tmp.path().join("enc/features_0.bin")).unwrap();
    assert_eq!(dump[0].name, "features");
    assert_eq!(dump[0].to_tensor::<f32>(), want.per_image[0]);
    assert_eq!(dump[1].data, vec![4.0, 6.0]);
    assert!(!tmp.path().join("enc/heatmap_0.pgm").exists());
}

#[test]
fn encode_two_images_with_heatmaps() {
    let tmp = tempfile::tempdir().unwrap();
    netpbm::write_ppm(&tmp.path().join("a.ppm"), &checker(16, 16)).unwrap();
    // plain PGM input is accepted and replicated to three channels
    write(tmp.path(), "b.pgm", &("P2\n8 12\n15\n".to_owned() + &"3 9 ".repeat(48)));
    write(tmp.path(), "c.toml", "");
    let o = vilavt(
        &["encode", "--config", "c.toml", "--image", "a.ppm", "--image", "b.pgm", "--inquiry", "find the red cell", "--heatmaps", "--out", "enc"],
        tmp.path(),
    );
    ok(&o);
    let dir = tmp.path().join("enc");
    for (i, (rows, cols)) in [(4usize, 4usize), (3, 2)].into_iter().enumerate() {
        let f = weights::load(&dir.join(format!("features_{i}.bin"))).unwrap();
        assert_eq!(f[0].shape, vec![rows * cols, 64]);
        let h = weights::load(&dir.join(format!("heatmap_{i}.bin"))).unwrap();
        assert_eq!(h[0].shape, vec![rows, cols]);
        let sum: f64 = h[0].data.iter().map(|&v| f64::from(v)).sum();
        assert!((sum - 1.0).abs() < 1e-6);
        let pgm = netpbm::decode(&fs::read(dir.join(format!("heatmap_{i}.pgm"))).unwrap()).unwrap();
        assert_eq!((pgm.width(), pgm.height()), (cols, rows));
    }
    assert!(!dir.join("features_2.bin").exists());
}

#[test]
fn encode_over_budget_fails() {
    let tmp = tempfile::tempdir().unwrap();
    netpbm::write_ppm(&tmp.path().join("big.ppm"), &checker(64, 64)).unwrap();
    write(tmp.path(), "c.toml", "[encoder]\nmax_visual_tokens = 100");
    let o = vilavt(&["encode", "--config", "c.toml", "--image", "big.ppm"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("budget"), "{}", stderr(&o));
}

#[test]
fn encode_reports_unreadable_images_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "c.toml", "");
    write(tmp.path(), "bad.ppm", "P7 nope");
    let o = vilavt(&["encode", "--config", "c.toml", "--image", "bad.ppm"], tmp.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("bad.ppm"));
    let o = vilavt(&["encode", "--config", "c.toml", "--image", "missing.ppm"], tmp.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("missing.ppm"));
}

#[test]
fn scripted_episodes() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 1, 4, "tasks");
    write(tmp.path(), "c.toml", "");
    let task = read_task(&tmp.path().join("tasks/task_0000.json"));
    let good = serde_json::to_string(&[format!("<think>look</think><answer>{}</answer>", task.answer)]).unwrap();
    write(tmp.path(), "good.json", &good);
    let o = vilavt(
        &["episode", "--config", "c.toml", "--task", "tasks/task_0000.json", "--policy", "scripted:good.json", "--trace", "good.jsonl"],
        tmp.path(),
    );
    ok(&o);
    let text = stdout(&o);
    assert!(text.contains("stop: answered"));
    assert!(text.contains("r_correct: 1.0"));
    assert!(text.contains("r_format: 1.0"));
    assert!(text.contains("r_total: 2.0"));

    write(tmp.path(), "bad.json", r#"["<think>no closing tag"]"#);
    let o = vilavt(
        &["episode", "--config", "c.toml", "--task", "tasks/task_0000.json", "--policy", "scripted:bad.json", "--trace", "bad.jsonl"],
        tmp.path(),
    );
    ok(&o);
    assert!(stdout(&o).contains("r_total: 0.0"));
    let trace = fs::read_to_string(tmp.path().join("bad.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(trace.lines().last().unwrap()).unwrap();
    assert_eq!(last["phase"], "termination");
    assert_eq!(last["reason"], "malformed");
}

#[test]
fn checkpoint_episodes_are_seed_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 1, 2, "tasks");
    write(tmp.path(), "c.toml", "");
    Model::new(&RunConfig::default())
        .unwrap()
        .save(&tmp.path().join("w.bin"), 0)
        .unwrap();
    let run = |seed: &str, trace: &str| {
        ok(&vilavt(
            &["episode", "--config", "c.toml", "--task", "tasks/task_0000.json", "--policy", "checkpoint:w.bin", "--seed", seed, "--trace", trace],
            tmp.path(),
        ));
        fs::read(tmp.path().join(trace)).unwrap()
    };
    let a = run("11", "a.jsonl");
    assert_eq!(a, run("11", "b.jsonl"));
    assert_ne!(a, run("12", "c.jsonl"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 1, 0, "tasks");
    write(tmp.path(), "c.toml", "");
    write(tmp.path(), "s.json", "[]");
    let code = |args: &[&str]| vilavt(args, tmp.path()).status.code();
    let task = "tasks/task_0000.json";
    assert_eq!(code(&["episode", "--config", "c.toml", "--task", task, "--policy", "scripted:s.json"]), Some(0));
    assert_eq!(code(&["episode", "--config", "c.toml", "--task", task, "--policy", "oracle"]), Some(2));
    assert_eq!(code(&["episode", "--config", "c.toml", "--task", "nope.json", "--policy", "scripted:s.json"]), Some(3));
    assert_eq!(code(&["episode", "--config", "c.toml", "--task", task, "--policy", "scripted:nope.json"]), Some(3));
    assert_eq!(code(&["episode", "--config", "c.toml", "--task", task, "--policy", "checkpoint:s.json"]), Some(3));
    assert_eq!(code(&["episode", "--config", "missing.toml", "--task", task, "--policy", "scripted:s.json"]), Some(3));
    write(tmp.path(), "typo.toml", "[orchestrator.termination]\ntmax = 3");
    assert_eq!(code(&["synth", "--config", "typo.toml", "--count", "1"]), Some(2));
    write(tmp.path(), "bad.toml", "[training]\ngroup_size = 1");
    assert_eq!(code(&["synth", "--config", "bad.toml", "--count", "1"]), Some(2));
    assert_eq!(code(&["synth", "--config", "c.toml", "--count", "0"]), Some(2));
    assert_eq!(code(&["train", "--config", "c.toml", "--mode", "sft"]), Some(2));
    assert_eq!(code(&["train", "--config", "c.toml"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
}

#[test]
fn synth_is_deterministic_and_self_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 5, 0, "a");
    synth(tmp.path(), 5, 0, "b");
    let mut names: Vec<_> = fs::read_dir(tmp.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 11);
    for n in &names {
        assert_eq!(fs::read(tmp.path().join("a").join(n)).unwrap(), fs::read(tmp.path().join("b").join(n)).unwrap());
    }
    for i in 0..5 {
        let task = read_task(&tmp.path().join(format!("a/task_{i:04}.json")));
        assert!(["A", "B", "C", "D"].contains(&task.answer.as_str()));
        let img = netpbm::read_image(&tmp.path().join("a").join(&task.images[0])).unwrap();
        let [x1, y1, x2, y2] = task.region.unwrap();
        assert!((y1..y2).all(|y| (x1..x2).all(|x| img.pixel(x, y) == TARGET_COLOR)));
        assert_eq!(quadrant_of(y1 / CELL_PIXELS, x1 / CELL_PIXELS), task.answer);
        let targets = (0..img.height())
            .flat_map(|y| (0..img.width()).map(move |x| (x, y)))
            .filter(|&(x, y)| img.pixel(x, y) == TARGET_COLOR)
            .count();
        assert_eq!(targets, CELL_PIXELS * CELL_PIXELS);
    }
}

fn read_metrics(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn sft_training_writes_metrics_and_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 4, 0, "tasks");
    write(
        tmp.path(),
        "sft.toml",
        "[training]\nsteps = 20\ncheckpoint_interval = 10\n[paths]\ncorpus = \"tasks/corpus.jsonl\"\noutput_dir = \"run\"\n",
    );
    ok(&vilavt(&["train", "--config", "sft.toml", "--mode", "sft"], tmp.path()));
    let m = read_metrics(&tmp.path().join("run/metrics.jsonl"));
    assert_eq!(m.len(), 21);
    assert_eq!(m[20]["step"], 20);
    assert!(m[20]["loss"].as_f64().unwrap() < 0.5 * m[0]["loss"].as_f64().unwrap());
    assert!(tmp.path().join("run/checkpoint_000010.bin").exists());
    let ckpt = weights::load(&tmp.path().join("run/checkpoint.bin")).unwrap();
    assert_eq!(weights::read_step(&ckpt), Some(20));
    assert!(ckpt.iter().any(|t| t.name.starts_with("encoder.")));
    assert!(ckpt.iter().any(|t| t.name.starts_with("policy.")));
}

const SMALL_GRPO: &str = "[training]
steps = 4
prompts_per_update = 2
group_size = 2
checkpoint_interval = 2
warm_start_examples = 8
warm_start_steps = 3
";

#[test]
fn grpo_resume_continues_the_step_counter() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "a.toml", &format!("{SMALL_GRPO}[paths]\noutput_dir = \"a\"\n"));
    write(tmp.path(), "b.toml", &format!("{SMALL_GRPO}[paths]\noutput_dir = \"b\"\n"));
    ok(&vilavt(&["train", "--config", "a.toml", "--mode", "grpo"], tmp.path()));
    ok(&vilavt(&["train", "--config", "b.toml", "--mode", "grpo", "--resume", "a/checkpoint_000002.bin"], tmp.path()));
    let full = read_metrics(&tmp.path().join("a/metrics.jsonl"));
    let resumed = read_metrics(&tmp.path().join("b/metrics.jsonl"));
    let steps: Vec<u64> = resumed.iter().map(|m| m["step"].as_u64().unwrap()).collect();
    assert_eq!(steps, vec![2, 3]);
    // same weights and same per-step sampling stream
    assert_eq!(resumed[0], full[2]);
    for m in &full {
        let parsed: StepMetrics = serde_json::from_value(m.clone()).unwrap();
        assert!(parsed.mean_response_tokens > 0.0);
    }
    let end = weights::load(&tmp.path().join("b/checkpoint.bin")).unwrap();
    assert_eq!(weights::read_step(&end), Some(4));
}

#[test]
fn grpo_with_zero_learning_rate_keeps_the_policy() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{SMALL_GRPO}learning_rate = 0.0\n[paths]\noutput_dir = \"z\"\nweights = \"w.bin\"\n");
    write(tmp.path(), "z.toml", &text);
    let start = Model::new(&RunConfig::default()).unwrap();
    start.save(&tmp.path().join("w.bin"), 0).unwrap();
    ok(&vilavt(&["train", "--config", "z.toml", "--mode", "grpo"], tmp.path()));
    let end = weights::load(&tmp.path().join("z/checkpoint.bin")).unwrap();
    for t in weights::from_params("policy.", start.policy.params()) {
        assert_eq!(end.iter().find(|e| e.name == t.name).unwrap(), &t);
    }
    assert_eq!(read_metrics(&tmp.path().join("z/metrics.jsonl")).len(), 4);
}

#[test]
fn help_lists_every_flag() {
    let tmp = tempfile::tempdir().unwrap();
    for (cmd, flags) in [
        ("encode", &["--config", "--image", "--inquiry", "--heatmaps", "--out"][..]),
        ("episode", &["--config", "--task", "--policy", "--seed", "--trace"]),
        ("train", &["--config", "--mode", "--resume"]),
        ("synth", &["--config", "--count", "--seed", "--out"]),
    ] {
        let o = vilavt(&[cmd, "--help"], tmp.path());
        ok(&o);
        for f in flags {
            assert!(stdout(&o).contains(f), "{cmd} {f}");
        }
    }
}
