//! JSON file formats: SFT corpus lines, task sidecars and step scripts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vilavt_core::training::{SftExample, TaskInstance, TaskKind};

use crate::{netpbm, Error};

/// One line of the SFT corpus. Image paths are relative to the corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub task_id: String,
    pub images: Vec<PathBuf>,
    pub question: String,
    pub steps: Vec<String>,
    pub answer: String,
}

/// A single task, as written by `synth` and read by `episode`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub task_id: String,
    pub images: Vec<PathBuf>,
    pub question: String,
    pub answer: String,
    #[serde(default = "multiple_choice")]
    pub kind: TaskKind,
    /// Gold region `[x1, y1, x2, y2]` in image 0, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<[usize; 4]>,
}

fn multiple_choice() -> TaskKind {
    TaskKind::MultipleChoice
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new(""))
}

fn load_images(base: &Path, images: &[PathBuf]) -> Result<Vec<vilavt_core::image::RgbImage>, Error> {
    images.iter().map(|p| netpbm::read_image(&base.join(p))).collect()
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord =
            serde_json::from_str(line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::format(path, "corpus has no records"));
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> Result<(), Error> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl CorpusRecord {
    pub fn to_example(&self, corpus_path: &Path) -> Result<SftExample, Error> {
        Ok(SftExample {
            images: load_images(base_dir(corpus_path), &self.images)?,
            question: self.question.clone(),
            steps: self.steps.clone(),
        })
    }
}

pub fn read_task(path: &Path) -> Result<(TaskFile, TaskInstance), Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let task: TaskFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    if task.images.is_empty() {
        return Err(Error::format(path, "task lists no images"));
    }
    let instance = TaskInstance {
        images: load_images(base_dir(path), &task.images)?,
        question: task.question.clone(),
        gold: task.answer.clone(),
        kind: task.kind,
    };
    Ok((task, instance))
}

/// A scripted policy file: a JSON array of raw step texts.
pub fn read_script(path: &Path) -> Result<Vec<String>, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}
