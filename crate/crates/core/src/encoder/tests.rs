use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::image::RgbImage;
use crate::numerics::{finite_difference_check, NumericsError, Tape, Tensor, Var};

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RgbImage {
    let data = (0..w * h * 3).map(|_| rng.random::<u8>()).collect();
    RgbImage::new(w, h, data).unwrap()
}

fn tiny_config(kinds: Vec<LayerKind>) -> EncoderConfig {
    EncoderConfig {
        num_layers: kinds.len(),
        num_heads: 2,
        hidden_dim: 8,
        mlp_dim: 8,
        patch_size: 2,
        window_size: 1,
        layer_kinds: kinds,
        max_visual_tokens: 64,
        positional_encoding: true,
        inquiry: InquiryConfig {
            table_rows: 64,
            width: 8,
            seed: 3,
        },
    }
}

fn patch14() -> VisionEncoder<f64> {
    let config = EncoderConfig {
        patch_size: 14,
        ..EncoderConfig::default()
    };
    VisionEncoder::new(config, 0).unwrap()
}

#[test]
fn patchify_floor_grid() {
    let enc = patch14();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = enc.patchify(0, &random_image(&mut rng, 28, 28)).unwrap();
    assert_eq!(p.grid, (2, 2));
    assert_eq!(p.tokens.shape(), &[4, 64]);
    let p = enc.patchify(0, &random_image(&mut rng, 14, 14)).unwrap();
    assert_eq!(p.grid, (1, 1));
    assert_eq!(p.tokens.rows(), 1);
}

#[test]
fn patchify_drops_trailing_pixels() {
    let enc = patch14();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = random_image(&mut rng, 30, 30);
    let mut other = img.clone();
    for i in 0..30 {
        for j in 28..30 {
            other.set_pixel(j, i, [255, 0, 255]);
            other.set_pixel(i, j, [0, 255, 0]);
        }
    }
    let a = enc.patchify(0, &img).unwrap();
    let b = enc.patchify(0, &other).unwrap();
    assert_eq!(a.grid, (2, 2));
    assert_eq!(a.tokens, b.tokens);
}

#[test]
fn patchify_rejects_small_image() {
    let enc = patch14();
    let err = enc.patchify(0, &RgbImage::filled(13, 20, [0; 3])).unwrap_err();
    assert_eq!(
        err,
        EncoderError::ImageSmallerThanPatch {
            width: 13,
            height: 20,
            patch: 14
        }
    );
}

#[test]
fn patch_token_is_linear_projection() {
    let enc: VisionEncoder<f64> = VisionEncoder::new(tiny_config(vec![LayerKind::InterFull]), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = random_image(&mut rng, 4, 2);
    let p = enc.patchify(0, &img).unwrap();
    let w = enc.params().tensors()[0].clone();
    // second patch (row 0, col 1) covers x in 2..4, y in 0..2
    let mut raw = Vec::new();
    for y in 0..2 {
        for x in 2..4 {
            raw.extend(img.pixel(x, y).iter().map(|&v| f64::from(v) / 255.0));
        }
    }
    for d in 0..8 {
        let expect: f64 = (0..12).map(|k| raw[k] * w.at(k, d)).sum();
        assert!((p.tokens.at(1, d) - expect).abs() < 1e-12);
    }
}

#[test]
fn inquiry_examples() {
    let enc: VisionEncoder<f64> = VisionEncoder::new(EncoderConfig::default(), 0).unwrap();
    assert_eq!(enc.encode_inquiry("").len(), 0);
    assert_eq!(enc.encode_inquiry("   ").len(), 0);
    let a = enc.encode_inquiry("find the red chair");
    let b = enc.encode_inquiry("find the red chair");
    assert_eq!(a.len(), 4);
    assert_eq!(a, b);
    let c = enc.encode_inquiry("find the blue chair");
    assert_ne!(a, c);
}

#[test]
fn inquiry_vocabulary_has_no_collisions() {
    // hashed rows for the words the synthetic tasks use must be distinct
    let words = [
        "look", "target", "quadrant", "zoom", "red", "cell", "find", "the", "chair", "blue", "where", "is", "count",
    ];
    let enc: VisionEncoder<f64> = VisionEncoder::new(EncoderConfig::default(), 0).unwrap();
    let embs: Vec<_> = words.iter().map(|w| enc.encode_inquiry(w)).collect();
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            assert_ne!(embs[i], embs[j], "{} vs {}", words[i], words[j]);
        }
    }
}

#[test]
fn unified_sequence_positions() {
    let layout = SequenceLayout::new(&[(2, 2)], 0);
    assert_eq!(layout.positions, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    let layout = SequenceLayout::new(&[(1, 2), (1, 2)], 0);
    assert_eq!(&layout.positions[2..], &[(0, 2), (0, 3)]);
    let layout = SequenceLayout::new(&[(1, 1)], 3);
    assert_eq!(&layout.positions[1..], &[(1, 0), (1, 1), (1, 2)]);
    assert_eq!(layout.membership[1..], [Membership::Text; 3]);
    let layout = SequenceLayout::new(&[(1, 3), (3, 2)], 2);
    assert_eq!(&layout.positions[9..], &[(3, 0), (3, 1)]);
    assert_eq!(layout.spans[1].range(), 3..9);
}

#[test]
fn unified_sequence_concatenates_in_order() {
    let enc: VisionEncoder<f64> = VisionEncoder::new(tiny_config(vec![LayerKind::InterFull]), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_image(&mut rng, 4, 2);
    let b = random_image(&mut rng, 2, 4);
    let seq = enc.unified_sequence(&[&a, &b], "red cell").unwrap();
    assert_eq!(seq.tokens.rows(), 2 + 2 + 2);
    let pa = enc.patchify(0, &a).unwrap();
    let pb = enc.patchify(1, &b).unwrap();
    assert_eq!(seq.tokens.row(0), pa.tokens.row(0));
    assert_eq!(seq.tokens.row(3), pb.tokens.row(1));
    let q = enc.encode_inquiry("red cell");
    assert_eq!(seq.tokens.row(5), q.tokens.unwrap().row(1));
}

#[test]
fn unified_sequence_budget() {
    let enc: VisionEncoder<f64> = VisionEncoder::new(tiny_config(vec![LayerKind::InterFull]), 0).unwrap();
    let img = RgbImage::filled(4, 4, [9; 3]);
    let p = enc.patchify(0, &img).unwrap();
    let q = enc.encode_inquiry("a b c");
    assert!(build_unified_sequence(&[p.clone(), p.clone()], &q, 8).is_ok());
    assert_eq!(
        build_unified_sequence(&[p.clone(), p], &q, 7).unwrap_err(),
        EncoderError::TokenBudgetExceeded { tokens: 8, budget: 7 }
    );
    assert_eq!(
        build_unified_sequence::<f64>(&[], &q, 7).unwrap_err(),
        EncoderError::NoImages
    );
}

#[test]
fn mask_examples() {
    let one = SequenceLayout::new(&[(3, 2)], 0);
    assert_eq!(
        build_attention_mask(LayerKind::InterFull, &one, 2),
        build_attention_mask(LayerKind::IntraFull, &one, 2)
    );
    let two = SequenceLayout::new(&[(2, 2), (1, 3)], 0);
    let m = build_attention_mask(LayerKind::IntraFull, &two, 2);
    for i in 0..4 {
        for j in 4..7 {
            assert!(!m.at(i, j) && !m.at(j, i));
        }
    }
    let grid = SequenceLayout::new(&[(4, 4)], 0);
    let m = build_attention_mask(LayerKind::Window, &grid, 2);
    for i in 0..16 {
        assert_eq!(m.row(i).iter().filter(|&&b| b).count(), 4);
    }
}

#[test]
fn window_ragged_edge_tiles() {
    let grid = SequenceLayout::new(&[(3, 3)], 0);
    let m = build_attention_mask(LayerKind::Window, &grid, 2);
    let counts: Vec<usize> = (0..9).map(|i| m.row(i).iter().filter(|&&b| b).count()).collect();
    assert_eq!(counts, vec![4, 4, 2, 4, 4, 2, 2, 2, 1]);
}

/// Independent restatement of each rule, checked over every (i, j) pair of
/// a 2-image 3x3 grid with 2 text tokens.
#[test]
fn mask_soundness_exhaustive() {
    let layout = SequenceLayout::new(&[(3, 3), (3, 3)], 2);
    assert_eq!(layout.len(), 20);
    let ws = 2;
    let image_of = |i: usize| if i < 9 { Some(0) } else if i < 18 { Some(1) } else { None };
    let local = |i: usize| {
        let k = i % 9;
        (k / 3, k % 3)
    };
    for kind in [LayerKind::Window, LayerKind::IntraFull, LayerKind::InterFull] {
        let m = build_attention_mask(kind, &layout, ws);
        for i in 0..20 {
            for j in 0..20 {
                let expect = match (kind, image_of(i), image_of(j)) {
                    (LayerKind::InterFull, _, _) => true,
                    (_, None, None) => true,
                    (_, None, Some(_)) | (_, Some(_), None) => false,
                    (LayerKind::IntraFull, Some(a), Some(b)) => a == b,
                    (LayerKind::Window, Some(a), Some(b)) => {
                        let (ri, ci) = local(i);
                        let (rj, cj) = local(j);
                        a == b && ri / ws == rj / ws && ci / ws == cj / ws
                    }
                };
                assert_eq!(m.at(i, j), expect, "{kind:?} ({i},{j})");
            }
        }
    }
}

#[test]
fn degeneration_to_vanilla_is_bit_exact() {
    for seed in 0..10 {
        let enc: VisionEncoder<f64> = VisionEncoder::new(EncoderConfig::default(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let img = random_image(&mut rng, 16, 12);
        let feats = enc.encode(&[&img], "").unwrap();
        let (vanilla, attn) = enc.vanilla_forward(&img).unwrap();
        assert_eq!(feats.per_image[0], vanilla, "seed {seed}");
        assert_eq!(feats.last_attention, attn);
    }
}

#[test]
fn cross_image_mixing_witness() {
    let enc: VisionEncoder<f64> = VisionEncoder::new(EncoderConfig::default(), 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random_image(&mut rng, 8, 8);
    let b = random_image(&mut rng, 8, 8);
    let joint = enc.encode(&[&a, &b], "").unwrap();
    let alone_a = enc.encode(&[&a], "").unwrap();
    let alone_b = enc.encode(&[&b], "").unwrap();
    assert!(joint.per_image[0].max_abs_diff(&alone_a.per_image[0]).unwrap() > 1e-6);
    assert!(joint.per_image[1].max_abs_diff(&alone_b.per_image[0]).unwrap() > 1e-6);
}

#[test]
fn inquiry_conditioning_witness() {
    let enc: VisionEncoder<f64> = VisionEncoder::new(EncoderConfig::default(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let img = random_image(&mut rng, 8, 8);
    let x = enc.encode(&[&img], "where is the red cell").unwrap();
    let y = enc.encode(&[&img], "count the chairs").unwrap();
    assert!(x.per_image[0].max_abs_diff(&y.per_image[0]).unwrap() > 1e-6);
    assert_eq!(x.layout.text_len, 5);
    assert_eq!(x.per_image[0].rows(), 4);
}

#[test]
fn permutation_without_positions() {
    let mut config = tiny_config(vec![LayerKind::InterFull, LayerKind::InterFull]);
    config.positional_encoding = false;
    let enc: VisionEncoder<f64> = VisionEncoder::new(config, 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random_image(&mut rng, 4, 4);
    let y = random_image(&mut rng, 6, 4);
    let xy = enc.encode(&[&x, &y], "red cell").unwrap();
    let yx = enc.encode(&[&y, &x], "red cell").unwrap();
    assert!(xy.per_image[0].max_abs_diff(&yx.per_image[1]).unwrap() < 1e-12);
    assert!(xy.per_image[1].max_abs_diff(&yx.per_image[0]).unwrap() < 1e-12);

    let twins = enc.encode(&[&x, &x], "").unwrap();
    assert!(twins.per_image[0].max_abs_diff(&twins.per_image[1]).unwrap() < 1e-12);
}

#[test]
fn positions_separate_identical_images() {
    let config = tiny_config(vec![LayerKind::InterFull, LayerKind::InterFull]);
    let enc: VisionEncoder<f64> = VisionEncoder::new(config, 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = random_image(&mut rng, 4, 4);
    let twins = enc.encode(&[&x, &x], "").unwrap();
    assert!(twins.per_image[0].max_abs_diff(&twins.per_image[1]).unwrap() > 1e-6);
}

fn unwrap_numerics(e: EncoderError) -> NumericsError {
    match e {
        EncoderError::Numerics(n) => n,
        other => panic!("{other}"),
    }
}

/// Weighted sum of every output token, so the loss touches all of them.
fn probe_loss(tape: &mut Tape<f64>, outs: &[Var], probes: &[Tensor<f64>]) -> Result<Var, NumericsError> {
    let mut total: Option<Var> = None;
    for (&o, p) in outs.iter().zip(probes) {
        let w = tape.constant(p.clone());
        let prod = tape.mul(o, w)?;
        let s = tape.sum(prod)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    Ok(total.expect("at least one image"))
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn gradient_wrt_weights_matches_finite_differences() {
    let kinds = vec![LayerKind::Window, LayerKind::IntraFull, LayerKind::InterFull];
    for seed in 0..3u64 {
        let enc: VisionEncoder<f64> = VisionEncoder::new(tiny_config(kinds.clone()), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20 + seed);
        let a = random_image(&mut rng, 4, 4);
        let b = random_image(&mut rng, 4, 2);
        let inquiry = enc.encode_inquiry("zoom red");
        let probes = [random_tensor(&mut rng, &[4, 8]), random_tensor(&mut rng, &[2, 8])];
        for (pi, name) in enc.params().names().iter().enumerate() {
            let x = enc.params().tensors()[pi].clone();
            let f = |tape: &mut Tape<f64>, v: Var| -> Result<Var, NumericsError> {
                let mut params = enc.params().register(tape, false);
                params[pi] = v;
                let inputs: Vec<PixelInput> = [&a, &b]
                    .iter()
                    .map(|img| PixelInput {
                        pixels: tape.constant(img.to_tensor()),
                        height: img.height(),
                        width: img.width(),
                    })
                    .collect();
                let out = enc.forward(tape, &params, &inputs, &inquiry).map_err(unwrap_numerics)?;
                probe_loss(tape, &out.per_image, &probes)
            };
            let err = finite_difference_check(f, &x, 1e-5).unwrap();
            assert!(err <= 1e-4, "seed {seed} {name}: {err}");
        }
    }
}

#[test]
fn gradient_wrt_pixels_matches_finite_differences() {
    let kinds = vec![LayerKind::Window, LayerKind::InterFull];
    let enc: VisionEncoder<f64> = VisionEncoder::new(tiny_config(kinds), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let a = random_image(&mut rng, 4, 4);
    let b = random_image(&mut rng, 2, 4);
    let inquiry = enc.encode_inquiry("look target");
    let probes = [random_tensor(&mut rng, &[4, 8]), random_tensor(&mut rng, &[2, 8])];
    let fixed_b: Tensor<f64> = b.to_tensor();
    let f = |tape: &mut Tape<f64>, v: Var| -> Result<Var, NumericsError> {
        let params = enc.params().register(tape, false);
        let inputs = [
            PixelInput { pixels: v, height: 4, width: 4 },
            PixelInput { pixels: tape.constant(fixed_b.clone()), height: 4, width: 2 },
        ];
        let out = enc.forward(tape, &params, &inputs, &inquiry).map_err(unwrap_numerics)?;
        probe_loss(tape, &out.per_image, &probes)
    };
    let err = finite_difference_check(f, &a.to_tensor(), 1e-5).unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn encode_budget_boundary() {
    let mut config = tiny_config(vec![LayerKind::InterFull]);
    config.max_visual_tokens = 6;
    let enc: VisionEncoder<f64> = VisionEncoder::new(config, 0).unwrap();
    let a = RgbImage::filled(4, 4, [10, 20, 30]);
    let b = RgbImage::filled(4, 2, [1, 2, 3]);
    let c = RgbImage::filled(2, 2, [1, 2, 3]);
    assert!(enc.encode(&[&a, &b], "a long inquiry does not count").is_ok());
    assert_eq!(
        enc.encode(&[&a, &b, &c], "").unwrap_err(),
        EncoderError::TokenBudgetExceeded { tokens: 7, budget: 6 }
    );
    assert_eq!(enc.encode(&[], "").unwrap_err(), EncoderError::NoImages);
}

#[test]
fn output_shapes_follow_patch_grids() {
    let enc: VisionEncoder<f32> = VisionEncoder::new(EncoderConfig::default(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for sizes in [vec![(8, 8)], vec![(9, 13), (4, 4)], vec![(16, 4), (4, 16), (7, 7)]] {
        let imgs: Vec<RgbImage> = sizes.iter().map(|&(w, h)| random_image(&mut rng, w, h)).collect();
        let refs: Vec<&RgbImage> = imgs.iter().collect();
        let feats = enc.encode(&refs, "zoom").unwrap();
        for ((&(w, h), out), grid) in sizes.iter().zip(&feats.per_image).zip(&feats.grids) {
            assert_eq!(*grid, (h / 4, w / 4));
            assert_eq!(out.shape(), &[(h / 4) * (w / 4), 64]);
            assert!(out.all_finite());
        }
    }
}

#[test]
fn full_scale_schedule() {
    let c = EncoderConfig::full_scale();
    c.validate().unwrap();
    assert_eq!(c.layer_kinds[7], LayerKind::IntraFull);
    assert_eq!(c.layer_kinds[15], LayerKind::IntraFull);
    assert_eq!(c.layer_kinds[16], LayerKind::InterFull);
    assert_eq!(c.layer_kinds[31], LayerKind::InterFull);
    assert_eq!(c.layer_kinds[0], LayerKind::Window);
    assert_eq!(c.layer_kinds.iter().filter(|&&k| k == LayerKind::Window).count(), 14);
    assert_eq!(c.head_dim(), 80);
}

#[test]
fn config_validation() {
    let mut c = EncoderConfig::default();
    c.num_heads = 3;
    assert!(matches!(c.validate(), Err(EncoderError::InvalidConfig(_))));
    let mut c = EncoderConfig::default();
    c.layer_kinds.pop();
    assert!(c.validate().unwrap_err().to_string().contains("layer_kinds"));
    let mut c = EncoderConfig::default();
    c.layer_kinds = vec![LayerKind::Window; 4];
    assert!(c.validate().is_err());
}

#[test]
fn heatmap_is_a_distribution() {
    let enc: VisionEncoder<f64> = VisionEncoder::new(EncoderConfig::default(), 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let a = random_image(&mut rng, 12, 8);
    let b = random_image(&mut rng, 8, 8);
    let feats = enc.encode(&[&a, &b], "red cell").unwrap();
    for id in 0..2 {
        let h = attention_heatmap(&feats, id).unwrap();
        assert_eq!(h.shape(), &[feats.grids[id].0, feats.grids[id].1]);
        assert!(h.data().iter().all(|&v| v >= 0.0));
        let s: f64 = h.data().iter().sum();
        assert!((s - 1.0).abs() <= 1e-6);
    }
    assert_eq!(
        attention_heatmap(&feats, 2).unwrap_err(),
        EncoderError::UnknownImage { image_id: 2 }
    );
}

fn features_with_attention(layout: SequenceLayout, attn: Vec<Tensor<f64>>) -> EncodedFeatures<f64> {
    let per_image = layout
        .spans
        .iter()
        .map(|s| Tensor::zeros([s.len(), 4]).unwrap())
        .collect();
    EncodedFeatures {
        per_image,
        grids: layout.spans.iter().map(|s| (s.rows, s.cols)).collect(),
        layout,
        last_attention: attn,
    }
}

#[test]
fn heatmap_uniform_and_forced() {
    let layout = SequenceLayout::new(&[(2, 3)], 1);
    let n = layout.len();
    let uniform = Tensor::filled([n, n], 1.0 / n as f64).unwrap();
    let feats = features_with_attention(layout.clone(), vec![uniform.clone(), uniform]);
    let h = attention_heatmap(&feats, 0).unwrap();
    assert!(h.data().iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-12));

    let mut forced = vec![0.0; n * n];
    for i in 0..n {
        forced[i * n + 4] = 0.7;
        forced[i * n + 1] = 0.3;
    }
    let spread = Tensor::filled([n, n], 1.0 / n as f64).unwrap();
    let feats = features_with_attention(layout, vec![Tensor::new([n, n], forced).unwrap(), spread]);
    let h = attention_heatmap(&feats, 0).unwrap();
    let argmax = (0..6).max_by(|&i, &j| h.data()[i].total_cmp(&h.data()[j])).unwrap();
    assert_eq!(argmax, 4);

    let empty = features_with_attention(SequenceLayout::new(&[(1, 1)], 0), vec![]);
    assert_eq!(attention_heatmap(&empty, 0).unwrap_err(), EncoderError::AttentionNotRetained);
}

#[test]
fn attention_rows_are_distributions() {
    let enc: VisionEncoder<f64> = VisionEncoder::new(EncoderConfig::default(), 2).unwrap();
    let img = RgbImage::from_fn(8, 8, |x, y| [(x * 30) as u8, (y * 30) as u8, 7]);
    let feats = enc.encode(&[&img], "cell").unwrap();
    for a in &feats.last_attention {
        for r in 0..a.rows() {
            let s: f64 = a.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
