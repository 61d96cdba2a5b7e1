use alloc::string::String;
use alloc::vec::Vec;

/// A box on one visual source. Coordinates are kept as parsed (possibly
/// negative or out of bounds) until [`super::validate_regions`] runs.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Region {
    pub index: i64,
    /// `[x1, y1, x2, y2]`, top-left inclusive, bottom-right exclusive.
    pub bbox: [i64; 4],
}

impl Region {
    pub fn new(index: i64, bbox: [i64; 4]) -> Self {
        Self { index, bbox }
    }

    pub fn width(&self) -> i64 {
        self.bbox[2] - self.bbox[0]
    }

    pub fn height(&self) -> i64 {
        self.bbox[3] - self.bbox[1]
    }
}

/// One reasoning step: a zoom-in tool call or the final answer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Step {
    Tool {
        thought: String,
        inquiry: String,
        regions: Vec<Region>,
    },
    Answer {
        thought: String,
        answer: String,
    },
}

impl Step {
    pub fn thought(&self) -> &str {
        match self {
            Step::Tool { thought, .. } | Step::Answer { thought, .. } => thought,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Step::Answer { .. })
    }

    pub fn regions(&self) -> &[Region] {
        match self {
            Step::Tool { regions, .. } => regions,
            Step::Answer { .. } => &[],
        }
    }

    pub fn answer(&self) -> Option<&str> {
        match self {
            Step::Answer { answer, .. } => Some(answer),
            Step::Tool { .. } => None,
        }
    }
}

/// Raw generations of one episode and the steps parsed from them.
///
/// `raw` may hold one more entry than `steps`: the text that failed to parse.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trajectory {
    pub raw: Vec<String>,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parsed step. Refused once a terminal step is present.
    pub fn push(&mut self, raw: String, step: Step) -> Result<(), Step> {
        if self.is_answered() {
            return Err(step);
        }
        self.raw.push(raw);
        self.steps.push(step);
        Ok(())
    }

    /// Records an output that did not parse. Refused once a terminal step is present.
    pub fn push_unparsed(&mut self, raw: String) -> Result<(), String> {
        if self.is_answered() {
            return Err(raw);
        }
        self.raw.push(raw);
        Ok(())
    }

    pub fn is_answered(&self) -> bool {
        self.steps.last().is_some_and(Step::is_terminal)
    }

    pub fn answer(&self) -> Option<&str> {
        self.steps.last().and_then(Step::answer)
    }

    pub fn has_unparsed(&self) -> bool {
        self.raw.len() > self.steps.len()
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}
