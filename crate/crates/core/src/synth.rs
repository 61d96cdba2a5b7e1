//! Synthetic visual-search tasks: a grid of colored cells with one red
//! target, asked by quadrant.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::image::RgbImage;
use crate::training::{SftExample, TaskInstance, TaskKind};

pub const GRID_CELLS: usize = 4;
pub const CELL_PIXELS: usize = 8;
pub const IMAGE_PIXELS: usize = GRID_CELLS * CELL_PIXELS;

pub const TARGET_COLOR: [u8; 3] = [220, 30, 30];

const PALETTE: [[u8; 3]; 6] = [
    [40, 90, 200],
    [40, 170, 70],
    [230, 210, 60],
    [120, 120, 120],
    [60, 190, 200],
    [140, 70, 170],
];

pub const QUADRANT_QUESTION: &str =
    "Which quadrant contains the target: A/B/C/D? (A top-left, B top-right, C bottom-left, D bottom-right)";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthTask {
    pub image: RgbImage,
    pub question: String,
    pub answer: String,
    /// Pixel box `[x1, y1, x2, y2]` of the target cell, end-exclusive.
    pub region: [usize; 4],
    /// Target cell as `(row, col)`.
    pub target: (usize, usize),
}

/// Answer letter of a grid cell.
pub fn quadrant_of(row: usize, col: usize) -> &'static str {
    let half = GRID_CELLS / 2;
    match (row < half, col < half) {
        (true, true) => "A",
        (true, false) => "B",
        (false, true) => "C",
        (false, false) => "D",
    }
}

pub fn quadrant_task<R: Rng + ?Sized>(rng: &mut R) -> SynthTask {
    let row = rng.random_range(0..GRID_CELLS);
    let col = rng.random_range(0..GRID_CELLS);
    let mut colors = [[0u8; 3]; GRID_CELLS * GRID_CELLS];
    for (i, c) in colors.iter_mut().enumerate() {
        *c = if i == row * GRID_CELLS + col {
            TARGET_COLOR
        } else {
            PALETTE[rng.random_range(0..PALETTE.len())]
        };
    }
    let image = RgbImage::from_fn(IMAGE_PIXELS, IMAGE_PIXELS, |x, y| {
        colors[(y / CELL_PIXELS) * GRID_CELLS + x / CELL_PIXELS]
    });
    SynthTask {
        image,
        question: QUADRANT_QUESTION.into(),
        answer: quadrant_of(row, col).into(),
        region: [
            col * CELL_PIXELS,
            row * CELL_PIXELS,
            (col + 1) * CELL_PIXELS,
            (row + 1) * CELL_PIXELS,
        ],
        target: (row, col),
    }
}

impl SynthTask {
    pub fn instance(&self) -> TaskInstance {
        TaskInstance {
            images: vec![self.image.clone()],
            question: self.question.clone(),
            gold: self.answer.clone(),
            kind: TaskKind::MultipleChoice,
        }
    }

    /// Re-derives target and answer from the pixels: exactly one cell is
    /// the target color, it fills `region`, and its quadrant is `answer`.
    pub fn verify(&self) -> bool {
        if self.image.width() != IMAGE_PIXELS || self.image.height() != IMAGE_PIXELS {
            return false;
        }
        let mut found = None;
        for row in 0..GRID_CELLS {
            for col in 0..GRID_CELLS {
                let corner = self.image.pixel(col * CELL_PIXELS, row * CELL_PIXELS);
                if corner == TARGET_COLOR {
                    if found.is_some() {
                        return false;
                    }
                    found = Some((row, col));
                }
            }
        }
        let Some((row, col)) = found else {
            return false;
        };
        let [x1, y1, x2, y2] = self.region;
        let filled = (y1..y2).all(|y| (x1..x2).all(|x| self.image.pixel(x, y) == TARGET_COLOR));
        filled
            && (row, col) == self.target
            && x1 == col * CELL_PIXELS
            && y1 == row * CELL_PIXELS
            && x2 - x1 == CELL_PIXELS
            && y2 - y1 == CELL_PIXELS
            && self.answer == quadrant_of(row, col)
    }
}

/// Gold two-step trajectory: zoom on the target cell, then answer.
pub fn zoom_trajectory(task: &SynthTask) -> Vec<String> {
    let [x1, y1, x2, y2] = task.region;
    vec![
        format!(
            r#"<think>zoom</think><tool>{{"region":[{{"index":0,"bbox_2d":[{x1},{y1},{x2},{y2}]}}],"query":"find the red target"}}</tool>"#
        ),
        format!("<think>the target is in quadrant {0}</think><answer>{0}</answer>", task.answer),
    ]
}

/// Format-only warm start: single-step answers with uniformly random
/// letters, so a policy learns the step grammar but not the task.
pub fn format_warm_start<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<SftExample> {
    (0..count)
        .map(|_| {
            let task = quadrant_task(rng);
            let letter = ["A", "B", "C", "D"][rng.random_range(0..4)];
            SftExample {
                images: vec![task.image],
                question: task.question,
                steps: vec![format!("<think>look</think><answer>{letter}</answer>")],
            }
        })
        .collect()
}
