use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::EncoderError;

/// Attention reachability rule applied by one transformer layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Non-overlapping `window_size x window_size` patch tiles within one image.
    Window,
    /// Every patch of one image, never across images.
    IntraFull,
    /// Every token in the sequence, inquiry included.
    InterFull,
}

/// Frozen inquiry-encoder settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InquiryConfig {
    /// Rows in the hashed token table.
    pub table_rows: usize,
    /// Internal width of the frozen text block.
    pub width: usize,
    pub seed: u64,
}

impl Default for InquiryConfig {
    fn default() -> Self {
        Self {
            table_rows: 4096,
            width: 32,
            seed: 0x5eed_7e47,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub mlp_dim: usize,
    /// Patch edge in pixels.
    pub patch_size: usize,
    /// Window edge in patches.
    pub window_size: usize,
    pub layer_kinds: Vec<LayerKind>,
    /// Upper bound on visual tokens per encoder call.
    pub max_visual_tokens: usize,
    /// Add 2-D sinusoidal positions to the unified sequence.
    pub positional_encoding: bool,
    pub inquiry: InquiryConfig,
}

impl Default for EncoderConfig {
    /// Desk-scale defaults: 4 layers, 4 heads, hidden 64, patch 4, window 2.
    fn default() -> Self {
        use LayerKind::*;
        Self {
            num_layers: 4,
            num_heads: 4,
            hidden_dim: 64,
            mlp_dim: 128,
            patch_size: 4,
            window_size: 2,
            layer_kinds: [Window, IntraFull, Window, InterFull].to_vec(),
            max_visual_tokens: 8192,
            positional_encoding: true,
            inquiry: InquiryConfig::default(),
        }
    }
}

impl EncoderConfig {
    /// Layer schedule of the full-size encoder: 32 layers, 16 heads, hidden
    /// 1280; intra-image layers 8 and 16, inter-image layers 17..=32 and
    /// windowed attention elsewhere (1-based layer numbers).
    pub fn full_scale() -> Self {
        let layer_kinds = (1..=32)
            .map(|l| match l {
                8 | 16 => LayerKind::IntraFull,
                17..=32 => LayerKind::InterFull,
                _ => LayerKind::Window,
            })
            .collect();
        Self {
            num_layers: 32,
            num_heads: 16,
            hidden_dim: 1280,
            mlp_dim: 5120,
            patch_size: 14,
            window_size: 8,
            layer_kinds,
            max_visual_tokens: 8192,
            positional_encoding: true,
            inquiry: InquiryConfig::default(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |msg: alloc::string::String| Err(EncoderError::InvalidConfig(msg));
        if self.num_layers == 0 || self.num_heads == 0 || self.hidden_dim == 0 {
            return bad(format!(
                "num_layers, num_heads and hidden_dim must be positive (got {}, {}, {})",
                self.num_layers, self.num_heads, self.hidden_dim
            ));
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if !self.hidden_dim.is_multiple_of(4) {
            return bad(format!(
                "hidden_dim {} must be a multiple of 4 for 2-D sinusoidal positions",
                self.hidden_dim
            ));
        }
        if self.layer_kinds.len() != self.num_layers {
            return bad(format!(
                "layer_kinds has {} entries but num_layers is {}",
                self.layer_kinds.len(),
                self.num_layers
            ));
        }
        if !self.layer_kinds.contains(&LayerKind::InterFull) {
            return bad("at least one inter_full layer is required for multi-image input".into());
        }
        if self.patch_size == 0 || self.window_size == 0 || self.mlp_dim == 0 {
            return bad("patch_size, window_size and mlp_dim must be positive".into());
        }
        if self.max_visual_tokens == 0 {
            return bad("max_visual_tokens must be positive".into());
        }
        if self.inquiry.table_rows == 0 || self.inquiry.width == 0 || !self.inquiry.width.is_multiple_of(2) {
            return bad("inquiry.table_rows must be positive and inquiry.width a positive even number".into());
        }
        Ok(())
    }
}
