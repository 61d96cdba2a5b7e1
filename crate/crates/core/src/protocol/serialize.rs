use alloc::format;
use alloc::string::String;
use core::fmt::Write;

use super::parse::{ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN, TOOL_CLOSE, TOOL_OPEN};
use super::{Region, Step};

/// JSON string literal with `<` and `>` escaped so a query can never close a tag.
fn json_string(s: &str) -> String {
    serde_json::to_string(s)
        .expect("strings always serialize")
        .replace('<', "\\u003c")
        .replace('>', "\\u003e")
}

/// `{"region":[...],"query":"..."}` with no insignificant whitespace.
pub fn tool_payload(inquiry: &str, regions: &[Region]) -> String {
    let mut out = String::from("{\"region\":[");
    for (i, r) in regions.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let [x1, y1, x2, y2] = r.bbox;
        let _ = write!(out, "{{\"index\":{},\"bbox_2d\":[{x1},{y1},{x2},{y2}]}}", r.index);
    }
    out.push_str("],\"query\":");
    out.push_str(&json_string(inquiry));
    out.push('}');
    out
}

/// Canonical wire form of a step.
pub fn serialize_step(step: &Step) -> String {
    match step {
        Step::Tool {
            thought,
            inquiry,
            regions,
        } => format!(
            "{THINK_OPEN}{thought}{THINK_CLOSE}{TOOL_OPEN}{}{TOOL_CLOSE}",
            tool_payload(inquiry, regions)
        ),
        Step::Answer { thought, answer } => {
            format!("{THINK_OPEN}{thought}{THINK_CLOSE}{ANSWER_OPEN}{answer}{ANSWER_CLOSE}")
        }
    }
}
