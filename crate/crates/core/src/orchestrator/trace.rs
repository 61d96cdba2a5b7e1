use alloc::string::String;
use alloc::vec::Vec;

use serde::Serialize;

use super::StopReason;

/// A crop created during a tool step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CropRecord {
    pub index: usize,
    pub parent: usize,
    pub bbox: [usize; 4],
    pub width: usize,
    pub height: usize,
}

/// One record per episode phase.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum TraceEvent {
    Encode {
        round: usize,
        sources: Vec<usize>,
        inquiry: String,
        visual_inputs_processed: usize,
    },
    Generation {
        round: usize,
        text: String,
        tokens: usize,
    },
    Parse {
        round: usize,
        ok: bool,
        step: Option<&'static str>,
        rule: Option<&'static str>,
        message: Option<String>,
    },
    RegionsRejected {
        round: usize,
        violations: Vec<String>,
    },
    Crops {
        round: usize,
        created: Vec<CropRecord>,
    },
    Refused {
        round: usize,
        requested: usize,
        visual_inputs_processed: usize,
        cap: usize,
        detail: String,
    },
    Termination {
        round: usize,
        reason: StopReason,
    },
}

/// Line-delimited JSON, one event per line, trailing newline included.
pub fn trace_to_jsonl(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
        out.push('\n');
    }
    out
}
