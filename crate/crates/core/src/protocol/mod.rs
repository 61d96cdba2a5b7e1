//! Wire format of reasoning steps, the visual memory they address, and
//! the crop-and-upscale transform applied to selected regions.

mod format;
mod memory;
mod parse;
mod serialize;
mod step;

pub use format::trajectory_format_valid;
pub use memory::{
    resize_bilinear, upscaled_size, validate_regions, MemoryTrace, Provenance, RegionViolation, SourceInfo,
    ViolationKind, VisualMemory,
};
pub use parse::{
    parse_step, parse_tool_payload, ParseError, ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN, TOOL_CLOSE,
    TOOL_OPEN,
};
pub use serialize::{serialize_step, tool_payload};
pub use step::{Region, Step, Trajectory};
