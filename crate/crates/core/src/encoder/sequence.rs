use alloc::vec::Vec;

use num_traits::Float;

use super::{EncoderError, InquiryEmbedding};
use crate::numerics::{ops, Scalar, Tensor};

/// Projected patch tokens of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence<T> {
    pub image_id: usize,
    /// `(rows, cols)` in patches.
    pub grid: (usize, usize),
    /// `[rows * cols, hidden_dim]`, raster order.
    pub tokens: Tensor<T>,
}

/// Which input a sequence position came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Membership {
    Image(usize),
    Text,
}

/// Contiguous run of one image's tokens inside the unified sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageSpan {
    pub image: usize,
    pub start: usize,
    pub rows: usize,
    pub cols: usize,
    /// Horizontal offset applied to this image's 2-D positions.
    pub col_offset: usize,
}

impl ImageSpan {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.start..self.start + self.len()
    }
}

/// Token bookkeeping of a unified sequence, independent of token values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceLayout {
    pub positions: Vec<(usize, usize)>,
    pub membership: Vec<Membership>,
    pub spans: Vec<ImageSpan>,
    pub text_len: usize,
}

impl SequenceLayout {
    /// Images laid side by side in input order; the inquiry takes a fresh
    /// row under the tallest image, columns `0..m`.
    pub fn new(grids: &[(usize, usize)], text_len: usize) -> Self {
        let total: usize = grids.iter().map(|&(r, c)| r * c).sum::<usize>() + text_len;
        let mut positions = Vec::with_capacity(total);
        let mut membership = Vec::with_capacity(total);
        let mut spans = Vec::with_capacity(grids.len());
        let mut col_offset = 0;
        for (image, &(rows, cols)) in grids.iter().enumerate() {
            spans.push(ImageSpan {
                image,
                start: positions.len(),
                rows,
                cols,
                col_offset,
            });
            for r in 0..rows {
                for c in 0..cols {
                    positions.push((r, col_offset + c));
                    membership.push(Membership::Image(image));
                }
            }
            col_offset += cols;
        }
        let text_row = grids.iter().map(|&(r, _)| r).max().unwrap_or(0);
        for c in 0..text_len {
            positions.push((text_row, c));
            membership.push(Membership::Text);
        }
        Self {
            positions,
            membership,
            spans,
            text_len,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn visual_tokens(&self) -> usize {
        self.len() - self.text_len
    }

    pub fn text_start(&self) -> usize {
        self.visual_tokens()
    }

    /// `(row, col)` of sequence position `i` relative to its own image.
    pub fn local_position(&self, i: usize) -> Option<(usize, usize)> {
        match self.membership[i] {
            Membership::Image(u) => {
                let (r, c) = self.positions[i];
                Some((r, c - self.spans[u].col_offset))
            }
            Membership::Text => None,
        }
    }
}

/// Encoder input: concatenated patch tokens followed by inquiry tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct UnifiedSequence<T> {
    pub tokens: Tensor<T>,
    pub layout: SequenceLayout,
}

/// Concatenates patch sequences in input order and appends the inquiry.
pub fn build_unified_sequence<T: Scalar>(
    patches: &[PatchSequence<T>],
    inquiry: &InquiryEmbedding<T>,
    max_visual_tokens: usize,
) -> Result<UnifiedSequence<T>, EncoderError> {
    if patches.is_empty() {
        return Err(EncoderError::NoImages);
    }
    let visual: usize = patches.iter().map(|p| p.tokens.rows()).sum();
    if visual > max_visual_tokens {
        return Err(EncoderError::TokenBudgetExceeded {
            tokens: visual,
            budget: max_visual_tokens,
        });
    }
    let grids: Vec<(usize, usize)> = patches.iter().map(|p| p.grid).collect();
    let layout = SequenceLayout::new(&grids, inquiry.len());
    let mut parts: Vec<&Tensor<T>> = patches.iter().map(|p| &p.tokens).collect();
    if let Some(t) = &inquiry.tokens {
        parts.push(t);
    }
    let tokens = ops::concat(&parts, 0)?;
    Ok(UnifiedSequence { tokens, layout })
}

/// 1-D sinusoidal code of length `width` (even) for position `pos`.
pub fn sinusoid<T: Scalar>(pos: usize, width: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(width);
    let p = pos as f64;
    for i in 0..width / 2 {
        let freq = Float::powf(10000.0, -(2.0 * i as f64) / width as f64);
        out.push(T::of(Float::sin(p * freq)));
        out.push(T::of(Float::cos(p * freq)));
    }
    out
}

/// Additive 2-D code: the first half of the width encodes the row, the second the column.
pub fn positional_encoding<T: Scalar>(positions: &[(usize, usize)], hidden: usize) -> Tensor<T> {
    let half = hidden / 2;
    let mut data = Vec::with_capacity(positions.len() * hidden);
    for &(r, c) in positions {
        data.extend(sinusoid::<T>(r, half));
        data.extend(sinusoid::<T>(c, half));
    }
    Tensor::new([positions.len(), hidden], data).expect("non-empty sequence")
}
