use alloc::format;
use alloc::string::String;
use core::fmt::Write;

use super::EpisodeState;
use crate::numerics::Scalar;
use crate::protocol::Provenance;

/// Fixed instructions placed at the head of every context.
pub const SYSTEM_PROMPT: &str = "You are a helpful assistant.\n\
Your goal is to solve the problem in the provided image(s) based on the user's instruction. \
Proceed step by step, optionally using the zoom-in tool one or more times to examine key areas closely. \
Selected regions will be cropped and processed externally, then re-encoded with your query to extract critical details.\n\
\n\
Tools\n\
If needed, use the zoom-in tool one or more times to examine specific areas in detail.\n\
\n\
Tool Format\n\
{\"region\": [{\"index\": int, \"bbox_2d\": [x1, y1, x2, y2]}, ...], \"query\": str}\n\
index: 0-based image index; bbox_2d: 4 integers, (x1, y1) top-left and (x2, y2) bottom-right.\n\
\n\
Constraints:\n\
- At least one region must be specified\n\
- All coordinates must be within image boundaries\n\
- x1 < x2 and y1 < y2 must be satisfied\n\
\n\
Example:\n\
<tool>{\"region\": [{\"index\": 0, \"bbox_2d\": [100, 200, 300, 400]}], \"query\": \"Look for the red button\"}</tool>";

const FORMAT_REMINDER: &str = "To zoom in, reply with:\n\
<think>reasoning</think><tool>{\"region\": [{\"index\": int, \"bbox_2d\": [x1, y1, x2, y2]}], \"query\": str}</tool>\n\
To answer, reply with:\n\
<think>reasoning</think><answer>final answer</answer>";

/// Marker standing in for the features of one newly created source.
pub fn source_marker(index: usize, parent: usize, bbox: [usize; 4], width: usize, height: usize) -> String {
    let [x1, y1, x2, y2] = bbox;
    format!("[source {index}: crop of {parent} at [{x1},{y1},{x2},{y2}], {width}x{height}]")
}

/// Deterministic text context: instructions, image headers, question, then
/// each raw step followed by markers for the sources it created.
pub fn assemble_context<T: Scalar>(state: &EpisodeState<T>) -> String {
    let mut out = String::from(SYSTEM_PROMPT);
    out.push_str("\n\n");
    let trace = state.memory.trace();
    let originals: usize = trace
        .sources()
        .iter()
        .take_while(|s| s.provenance == Provenance::Original)
        .count();
    for i in 0..originals {
        let _ = writeln!(out, "The index of the provided image is {i}");
    }
    let _ = writeln!(
        out,
        "These are {originals} images indexed from 0 to {}.",
        originals.saturating_sub(1)
    );
    let first = trace.sources().first().map(|s| (s.width, s.height));
    if trace.sources()[..originals].iter().all(|s| Some((s.width, s.height)) == first) {
        if let Some((w, h)) = first {
            let _ = writeln!(out, "All images have size: width {w}, height {h}.");
        }
    } else {
        for (i, s) in trace.sources()[..originals].iter().enumerate() {
            let _ = writeln!(out, "Image {i} has size: width {}, height {}.", s.width, s.height);
        }
    }
    let _ = write!(out, "\nQuestion: {}\n\n{FORMAT_REMINDER}\n", state.question);

    let mut crops = trace.sources().iter().enumerate().skip(originals);
    for (k, raw) in state.trajectory.raw.iter().enumerate() {
        out.push('\n');
        out.push_str(raw);
        out.push('\n');
        let created = state.created_per_step.get(k).copied().unwrap_or(0);
        for (index, s) in crops.by_ref().take(created) {
            if let Provenance::Crop { parent, bbox } = s.provenance {
                out.push_str(&source_marker(index, parent, bbox, s.width, s.height));
                out.push('\n');
            }
        }
    }
    out
}
