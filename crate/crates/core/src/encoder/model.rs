use alloc::collections::BTreeMap;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    build_attention_mask, build_unified_sequence, positional_encoding, EncoderConfig, EncoderError,
    InquiryEmbedding, InquiryEncoder, LayerKind, PatchSequence, SequenceLayout,
};
use crate::image::RgbImage;
use crate::numerics::{ParamId, ParamSet, Scalar, Tape, Tensor, Var, LAYER_NORM_EPS};

const CHANNELS: usize = 3;

#[derive(Clone, Debug)]
struct LayerParams {
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    q_weight: ParamId,
    q_bias: ParamId,
    k_weight: ParamId,
    k_bias: ParamId,
    v_weight: ParamId,
    v_bias: ParamId,
    out_weight: ParamId,
    out_bias: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
    fc1_weight: ParamId,
    fc1_bias: ParamId,
    fc2_weight: ParamId,
    fc2_bias: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    patch_weight: ParamId,
    patch_bias: ParamId,
    layers: Vec<LayerParams>,
    final_gain: ParamId,
    final_bias: ParamId,
}

/// Encoder output for one call.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedFeatures<T> {
    /// One `[rows * cols, hidden_dim]` tensor per input image, in input order.
    pub per_image: Vec<Tensor<T>>,
    pub grids: Vec<(usize, usize)>,
    pub layout: SequenceLayout,
    /// Last-layer attention probabilities, one `[N, N]` matrix per head.
    pub last_attention: Vec<Tensor<T>>,
}

impl<T: Scalar> EncodedFeatures<T> {
    pub fn num_images(&self) -> usize {
        self.per_image.len()
    }

    pub fn total_tokens(&self) -> usize {
        self.per_image.iter().map(Tensor::rows).sum()
    }
}

/// Pixel input already on a tape, shaped `[height, width, 3]`.
#[derive(Clone, Copy, Debug)]
pub struct PixelInput {
    pub pixels: Var,
    pub height: usize,
    pub width: usize,
}

/// Result of a forward pass recorded on a tape.
#[derive(Clone, Debug)]
pub struct TapeFeatures {
    pub per_image: Vec<Var>,
    pub layout: SequenceLayout,
    pub last_attention: Vec<Var>,
}

/// The dynamic vision encoder: trainable transformer weights plus the
/// frozen inquiry encoder.
#[derive(Clone, Debug)]
pub struct VisionEncoder<T> {
    config: EncoderConfig,
    params: ParamSet<T>,
    layout: Layout,
    inquiry: InquiryEncoder<T>,
}

pub(crate) fn gaussian<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * std)
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

impl<T: Scalar> VisionEncoder<T> {
    /// Fresh encoder with seeded Gaussian weights.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden_dim;
        let m = config.mlp_dim;
        let patch_in = config.patch_size * config.patch_size * CHANNELS;
        let mut p = ParamSet::new();
        let std_d = crate::numerics::inv_sqrt(d);
        let patch_weight = p.push("patch.weight", gaussian(&mut rng, &[patch_in, d], crate::numerics::inv_sqrt(patch_in)));
        let patch_bias = p.push("patch.bias", Tensor::zeros([d])?);
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let name = |s: &str| format!("layers.{l}.{s}");
            layers.push(LayerParams {
                ln1_gain: p.push(name("ln1.gain"), Tensor::ones([d])?),
                ln1_bias: p.push(name("ln1.bias"), Tensor::zeros([d])?),
                q_weight: p.push(name("attn.q.weight"), gaussian(&mut rng, &[d, d], std_d)),
                q_bias: p.push(name("attn.q.bias"), Tensor::zeros([d])?),
                k_weight: p.push(name("attn.k.weight"), gaussian(&mut rng, &[d, d], std_d)),
                k_bias: p.push(name("attn.k.bias"), Tensor::zeros([d])?),
                v_weight: p.push(name("attn.v.weight"), gaussian(&mut rng, &[d, d], std_d)),
                v_bias: p.push(name("attn.v.bias"), Tensor::zeros([d])?),
                out_weight: p.push(name("attn.out.weight"), gaussian(&mut rng, &[d, d], std_d)),
                out_bias: p.push(name("attn.out.bias"), Tensor::zeros([d])?),
                ln2_gain: p.push(name("ln2.gain"), Tensor::ones([d])?),
                ln2_bias: p.push(name("ln2.bias"), Tensor::zeros([d])?),
                fc1_weight: p.push(name("mlp.fc1.weight"), gaussian(&mut rng, &[d, m], std_d)),
                fc1_bias: p.push(name("mlp.fc1.bias"), Tensor::zeros([m])?),
                fc2_weight: p.push(name("mlp.fc2.weight"), gaussian(&mut rng, &[m, d], crate::numerics::inv_sqrt(m))),
                fc2_bias: p.push(name("mlp.fc2.bias"), Tensor::zeros([d])?),
            });
        }
        let final_gain = p.push("final.gain", Tensor::ones([d])?);
        let final_bias = p.push("final.bias", Tensor::zeros([d])?);
        let inquiry = InquiryEncoder::new(&config.inquiry, d);
        Ok(Self {
            config,
            params: p,
            layout: Layout {
                patch_weight,
                patch_bias,
                layers,
                final_gain,
                final_bias,
            },
            inquiry,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn inquiry_encoder(&self) -> &InquiryEncoder<T> {
        &self.inquiry
    }

    /// Frozen embedding of `q`; gradients never reach it.
    pub fn encode_inquiry(&self, q: &str) -> InquiryEmbedding<T> {
        self.inquiry.encode(q)
    }

    /// Patch grid of an image, trailing pixels beyond whole patches dropped.
    pub fn grid_of(&self, width: usize, height: usize) -> Result<(usize, usize), EncoderError> {
        let p = self.config.patch_size;
        if width < p || height < p {
            return Err(EncoderError::ImageSmallerThanPatch { width, height, patch: p });
        }
        Ok((height / p, width / p))
    }

    /// Linear projection of each `p x p` patch of `image`.
    pub fn patchify(&self, image_id: usize, image: &RgbImage) -> Result<PatchSequence<T>, EncoderError> {
        let grid = self.grid_of(image.width(), image.height())?;
        let mut tape = Tape::new();
        let params = self.params.register(&mut tape, false);
        let pixels = tape.constant(image.to_tensor());
        let input = PixelInput { pixels, height: image.height(), width: image.width() };
        let tokens = self.project_patches(&mut tape, &params, input)?;
        Ok(PatchSequence {
            image_id,
            grid,
            tokens: tape.value(tokens).clone(),
        })
    }

    fn project_patches(&self, tape: &mut Tape<T>, params: &[Var], input: PixelInput) -> Result<Var, EncoderError> {
        let p = self.config.patch_size;
        let (rows, cols) = self.grid_of(input.width, input.height)?;
        let width = input.width;
        let mut idx = Vec::with_capacity(rows * cols * p * p * CHANNELS);
        for pr in 0..rows {
            for pc in 0..cols {
                for dy in 0..p {
                    for dx in 0..p {
                        let base = ((pr * p + dy) * width + pc * p + dx) * CHANNELS;
                        idx.extend(base..base + CHANNELS);
                    }
                }
            }
        }
        let raw = tape.gather(input.pixels, idx.into(), [rows * cols, p * p * CHANNELS])?;
        let proj = tape.matmul(raw, params[self.layout.patch_weight.0])?;
        Ok(tape.add_row(proj, params[self.layout.patch_bias.0])?)
    }

    /// Encodes `images` jointly, conditioned on the inquiry `q`.
    pub fn encode(&self, images: &[&RgbImage], q: &str) -> Result<EncodedFeatures<T>, EncoderError> {
        let inquiry = self.encode_inquiry(q);
        self.encode_with(images, &inquiry)
    }

    pub fn encode_with(
        &self,
        images: &[&RgbImage],
        inquiry: &InquiryEmbedding<T>,
    ) -> Result<EncodedFeatures<T>, EncoderError> {
        let mut tape = Tape::new();
        let params = self.params.register(&mut tape, false);
        let inputs: Vec<PixelInput> = images
            .iter()
            .map(|img| PixelInput {
                pixels: tape.constant(img.to_tensor()),
                height: img.height(),
                width: img.width(),
            })
            .collect();
        let out = self.forward(&mut tape, &params, &inputs, inquiry)?;
        Ok(EncodedFeatures {
            per_image: out.per_image.iter().map(|&v| tape.value(v).clone()).collect(),
            grids: out.layout.spans.iter().map(|s| (s.rows, s.cols)).collect(),
            layout: out.layout,
            last_attention: out.last_attention.iter().map(|&v| tape.value(v).clone()).collect(),
        })
    }

    /// Full forward pass recorded on `tape`. `params` must come from
    /// [`ParamSet::register`] on this encoder's parameters.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        images: &[PixelInput],
        inquiry: &InquiryEmbedding<T>,
    ) -> Result<TapeFeatures, EncoderError> {
        if images.is_empty() {
            return Err(EncoderError::NoImages);
        }
        let mut grids = Vec::with_capacity(images.len());
        for img in images {
            grids.push(self.grid_of(img.width, img.height)?);
        }
        let visual: usize = grids.iter().map(|&(r, c)| r * c).sum();
        if visual > self.config.max_visual_tokens {
            return Err(EncoderError::TokenBudgetExceeded {
                tokens: visual,
                budget: self.config.max_visual_tokens,
            });
        }
        let mut parts = Vec::with_capacity(images.len() + 1);
        for &img in images {
            parts.push(self.project_patches(tape, params, img)?);
        }
        if let Some(t) = &inquiry.tokens {
            parts.push(tape.constant(t.clone()));
        }
        let layout = SequenceLayout::new(&grids, inquiry.len());
        let tokens = if parts.len() == 1 { parts[0] } else { tape.concat(&parts, 0)? };
        let mut masks: BTreeMap<u8, Arc<Tensor<bool>>> = BTreeMap::new();
        let kinds = self.config.layer_kinds.clone();
        let ws = self.config.window_size;
        let mask_for = |kind: LayerKind| Arc::new(build_attention_mask(kind, &layout, ws));
        let mut layer_masks = Vec::with_capacity(kinds.len());
        for kind in kinds {
            let key = kind as u8;
            let m = masks.entry(key).or_insert_with(|| mask_for(kind)).clone();
            layer_masks.push(m);
        }
        let (hidden, last_attention) = self.run_stack(tape, params, tokens, &layout.positions, &layer_masks)?;
        let per_image = layout
            .spans
            .iter()
            .map(|s| tape.slice_rows(hidden, s.start, s.len()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TapeFeatures {
            per_image,
            layout,
            last_attention,
        })
    }

    /// Adds positions, runs every block with its mask, applies the final norm.
    fn run_stack(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        tokens: Var,
        positions: &[(usize, usize)],
        masks: &[Arc<Tensor<bool>>],
    ) -> Result<(Var, Vec<Var>), EncoderError> {
        let mut x = tokens;
        if self.config.positional_encoding {
            let pe = tape.constant(positional_encoding(positions, self.config.hidden_dim));
            x = tape.add(tokens, pe)?;
        }
        let mut last_attention = Vec::new();
        for (layer, mask) in self.layout.layers.iter().zip(masks) {
            let (next, attn) = self.block(tape, params, layer, x, mask)?;
            x = next;
            last_attention = attn;
        }
        let eps = T::of(LAYER_NORM_EPS);
        let out = tape.layer_norm(x, params[self.layout.final_gain.0], params[self.layout.final_bias.0], eps)?;
        Ok((out, last_attention))
    }

    fn block(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        l: &LayerParams,
        x: Var,
        mask: &Arc<Tensor<bool>>,
    ) -> Result<(Var, Vec<Var>), EncoderError> {
        let p = |id: ParamId| params[id.0];
        let eps = T::of(LAYER_NORM_EPS);
        let heads = self.config.num_heads;
        let dh = self.config.head_dim();
        let h = tape.layer_norm(x, p(l.ln1_gain), p(l.ln1_bias), eps)?;
        let linear = |tape: &mut Tape<T>, input: Var, w: ParamId, b: ParamId| -> Result<Var, EncoderError> {
            let y = tape.matmul(input, p(w))?;
            Ok(tape.add_row(y, p(b))?)
        };
        let q = linear(tape, h, l.q_weight, l.q_bias)?;
        let k = linear(tape, h, l.k_weight, l.k_bias)?;
        let v = linear(tape, h, l.v_weight, l.v_bias)?;
        let inv_sqrt = T::one() / T::of(dh as f64).sqrt();
        let mut head_out = Vec::with_capacity(heads);
        let mut attn = Vec::with_capacity(heads);
        for hd in 0..heads {
            let qh = tape.slice_cols(q, hd * dh, dh)?;
            let kh = tape.slice_cols(k, hd * dh, dh)?;
            let vh = tape.slice_cols(v, hd * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let s = tape.matmul(qh, kt)?;
            let s = tape.scale(s, inv_sqrt)?;
            let a = tape.masked_softmax(s, mask.clone())?;
            head_out.push(tape.matmul(a, vh)?);
            attn.push(a);
        }
        let o = if heads == 1 { head_out[0] } else { tape.concat(&head_out, 1)? };
        let o = linear(tape, o, l.out_weight, l.out_bias)?;
        let x = tape.add(x, o)?;
        let h2 = tape.layer_norm(x, p(l.ln2_gain), p(l.ln2_bias), eps)?;
        let f = linear(tape, h2, l.fc1_weight, l.fc1_bias)?;
        let f = tape.gelu(f)?;
        let f = linear(tape, f, l.fc2_weight, l.fc2_bias)?;
        Ok((tape.add(x, f)?, attn))
    }

    /// Plain single-image transformer with the same weights and layer
    /// stack: raster positions, window tiles or full attention per layer,
    /// no inquiry. The reference the dynamic encoder must reduce to.
    pub fn vanilla_forward(&self, image: &RgbImage) -> Result<(Tensor<T>, Vec<Tensor<T>>), EncoderError> {
        let (rows, cols) = self.grid_of(image.width(), image.height())?;
        let mut tape = Tape::new();
        let params = self.params.register(&mut tape, false);
        let pixels = tape.constant(image.to_tensor());
        let input = PixelInput { pixels, height: image.height(), width: image.width() };
        let tokens = self.project_patches(&mut tape, &params, input)?;
        let n = rows * cols;
        let positions: Vec<(usize, usize)> = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).collect();
        let ws = self.config.window_size;
        let full = Arc::new(Tensor::filled([n, n], true)?);
        let windowed = {
            let mut data = Vec::with_capacity(n * n);
            for &(ri, ci) in &positions {
                for &(rj, cj) in &positions {
                    data.push(ri / ws == rj / ws && ci / ws == cj / ws);
                }
            }
            Arc::new(Tensor::new([n, n], data)?)
        };
        let masks: Vec<Arc<Tensor<bool>>> = self
            .config
            .layer_kinds
            .iter()
            .map(|k| match k {
                LayerKind::Window => windowed.clone(),
                LayerKind::IntraFull | LayerKind::InterFull => full.clone(),
            })
            .collect();
        let (out, attn) = self.run_stack(&mut tape, &params, tokens, &positions, &masks)?;
        Ok((
            tape.value(out).clone(),
            attn.iter().map(|&a| tape.value(a).clone()).collect(),
        ))
    }

    /// Unified-sequence view of the inputs before positions and blocks are applied.
    pub fn unified_sequence(&self, images: &[&RgbImage], q: &str) -> Result<super::UnifiedSequence<T>, EncoderError> {
        let patches = images
            .iter()
            .enumerate()
            .map(|(i, img)| self.patchify(i, img))
            .collect::<Result<Vec<_>, _>>()?;
        build_unified_sequence(&patches, &self.encode_inquiry(q), self.config.max_visual_tokens)
    }
}
