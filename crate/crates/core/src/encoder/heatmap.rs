use alloc::vec;

use super::{EncodedFeatures, EncoderError};
use crate::numerics::{Scalar, Tensor};

/// Last-layer attention averaged over heads, summed over every query token
/// onto the patches of `image_id`, and normalized to sum to one.
pub fn attention_heatmap<T: Scalar>(feats: &EncodedFeatures<T>, image_id: usize) -> Result<Tensor<T>, EncoderError> {
    let span = *feats
        .layout
        .spans
        .get(image_id)
        .ok_or(EncoderError::UnknownImage { image_id })?;
    let heads = feats.last_attention.len();
    if heads == 0 {
        return Err(EncoderError::AttentionNotRetained);
    }
    let n = feats.layout.len();
    let mut mass = vec![T::zero(); span.len()];
    for a in &feats.last_attention {
        if a.shape() != [n, n] {
            return Err(EncoderError::Numerics(crate::numerics::NumericsError::ShapeMismatch {
                op: "attention_heatmap",
                left: a.shape().to_vec(),
                right: vec![n, n],
            }));
        }
        for i in 0..n {
            let row = a.row(i);
            for (m, &v) in mass.iter_mut().zip(&row[span.range()]) {
                *m = *m + v;
            }
        }
    }
    let inv_heads = T::one() / T::of(heads as f64);
    for m in mass.iter_mut() {
        *m = *m * inv_heads;
    }
    let total = mass.iter().fold(T::zero(), |acc, &v| acc + v);
    if !(total > T::zero()) {
        return Err(EncoderError::DegenerateHeatmap { image_id });
    }
    for m in mass.iter_mut() {
        *m = *m / total;
    }
    Ok(Tensor::new([span.rows, span.cols], mass)?)
}
