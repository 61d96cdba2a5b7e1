use alloc::vec::Vec;

use super::{LayerKind, Membership, SequenceLayout};
use crate::numerics::Tensor;

/// `[N, N]` reachability matrix; entry `(i, j)` is true when token `i` may attend to token `j`.
///
/// * `Window`: same image and same `window_size` tile of that image's grid
///   (tiles anchored at the image origin, ragged edge tiles kept smaller);
///   text attends to text only.
/// * `IntraFull`: same image; text attends to text only.
/// * `InterFull`: everything.
pub fn build_attention_mask(kind: LayerKind, layout: &SequenceLayout, window_size: usize) -> Tensor<bool> {
    let n = layout.len();
    let tile = |i: usize| layout.local_position(i).map(|(r, c)| (r / window_size, c / window_size));
    let tiles: Vec<Option<(usize, usize)>> = (0..n).map(tile).collect();
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (mi, mj) = (layout.membership[i], layout.membership[j]);
            let allowed = match kind {
                LayerKind::InterFull => true,
                LayerKind::IntraFull => mi == mj,
                LayerKind::Window => match (mi, mj) {
                    (Membership::Text, Membership::Text) => true,
                    (Membership::Image(a), Membership::Image(b)) => a == b && tiles[i] == tiles[j],
                    _ => false,
                },
            };
            data.push(allowed);
        }
    }
    Tensor::new([n, n], data).expect("non-empty layout")
}
