//! Dynamic vision encoder: joint encoding of a variable set of images
//! conditioned on a textual inquiry, with a per-layer hybrid attention
//! schedule.

mod config;
mod heatmap;
mod inquiry;
mod mask;
pub(crate) mod model;
mod sequence;

pub use config::{EncoderConfig, InquiryConfig, LayerKind};
pub use heatmap::attention_heatmap;
pub use inquiry::{tokenize as tokenize_inquiry, InquiryEmbedding, InquiryEncoder};
pub use mask::build_attention_mask;
pub use model::{EncodedFeatures, PixelInput, TapeFeatures, VisionEncoder};
pub use sequence::{
    build_unified_sequence, positional_encoding, sinusoid, ImageSpan, Membership, PatchSequence, SequenceLayout,
    UnifiedSequence,
};

use alloc::string::String;

use crate::numerics::NumericsError;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("image {width}x{height} is smaller than one {patch}x{patch} patch")]
    ImageSmallerThanPatch { width: usize, height: usize, patch: usize },
    #[error("visual token budget exceeded: {tokens} tokens > {budget}")]
    TokenBudgetExceeded { tokens: usize, budget: usize },
    #[error("encoder needs at least one image")]
    NoImages,
    #[error("unknown image id {image_id}")]
    UnknownImage { image_id: usize },
    #[error("no last-layer attention retained")]
    AttentionNotRetained,
    #[error("image {image_id} receives no attention mass")]
    DegenerateHeatmap { image_id: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[cfg(test)]
mod tests;
