use alloc::vec::Vec;

use num_traits::Float;

use super::{Region, Step};
use crate::image::RgbImage;

/// Where a visual source came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Original,
    Crop { parent: usize, bbox: [usize; 4] },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SourceInfo {
    pub width: usize,
    pub height: usize,
    pub provenance: Provenance,
    /// Index of the original this source descends from.
    pub root: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    IndexOutOfRange { index: i64, len: usize },
    /// `x1 < x2` fails.
    EmptyWidth { x1: i64, x2: i64 },
    /// `y1 < y2` fails.
    EmptyHeight { y1: i64, y2: i64 },
    /// `0 <= x1` or `x2 <= width` fails.
    XOutOfBounds { x1: i64, x2: i64, width: usize },
    /// `0 <= y1` or `y2 <= height` fails.
    YOutOfBounds { y1: i64, y2: i64, height: usize },
}

/// A failed check on the `region`-th entry of a tool step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegionViolation {
    pub region: usize,
    pub kind: ViolationKind,
}

impl core::fmt::Display for RegionViolation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let r = self.region;
        match self.kind {
            ViolationKind::IndexOutOfRange { index, len } => {
                write!(f, "region {r}: index {index} outside 0..{len}")
            }
            ViolationKind::EmptyWidth { x1, x2 } => write!(f, "region {r}: x1 < x2 fails ({x1} >= {x2})"),
            ViolationKind::EmptyHeight { y1, y2 } => write!(f, "region {r}: y1 < y2 fails ({y1} >= {y2})"),
            ViolationKind::XOutOfBounds { x1, x2, width } => {
                write!(f, "region {r}: x range {x1}..{x2} leaves 0..{width}")
            }
            ViolationKind::YOutOfBounds { y1, y2, height } => {
                write!(f, "region {r}: y range {y1}..{y2} leaves 0..{height}")
            }
        }
    }
}

/// Sizes and provenance of every source in an episode, without pixels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MemoryTrace {
    sources: Vec<SourceInfo>,
}

impl MemoryTrace {
    /// Trace holding only originals of the given `(width, height)`.
    pub fn from_originals(dims: &[(usize, usize)]) -> Self {
        let sources = dims
            .iter()
            .enumerate()
            .map(|(i, &(width, height))| SourceInfo {
                width,
                height,
                provenance: Provenance::Original,
                root: i,
            })
            .collect();
        Self { sources }
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&SourceInfo> {
        self.sources.get(index)
    }

    pub fn sources(&self) -> &[SourceInfo] {
        &self.sources
    }

    /// Every violation of one region against the current sources.
    pub fn check_region(&self, position: usize, region: &Region) -> Vec<RegionViolation> {
        let mut out = Vec::new();
        let mut push = |kind| out.push(RegionViolation { region: position, kind });
        let src = usize::try_from(region.index).ok().and_then(|i| self.sources.get(i));
        let Some(src) = src else {
            push(ViolationKind::IndexOutOfRange {
                index: region.index,
                len: self.len(),
            });
            return out;
        };
        let [x1, y1, x2, y2] = region.bbox;
        if x1 >= x2 {
            push(ViolationKind::EmptyWidth { x1, x2 });
        }
        if y1 >= y2 {
            push(ViolationKind::EmptyHeight { y1, y2 });
        }
        if x1 < 0 || x2 > src.width as i64 {
            push(ViolationKind::XOutOfBounds { x1, x2, width: src.width });
        }
        if y1 < 0 || y2 > src.height as i64 {
            push(ViolationKind::YOutOfBounds { y1, y2, height: src.height });
        }
        out
    }

    /// Records the crop a valid region produces and returns its new index.
    pub fn append_crop(&mut self, region: &Region) -> Result<usize, Vec<RegionViolation>> {
        let violations = self.check_region(0, region);
        if !violations.is_empty() {
            return Err(violations);
        }
        let parent = region.index as usize;
        let [x1, y1, x2, y2] = region.bbox.map(|v| v as usize);
        let root = self.sources[parent].root;
        let (w0, h0) = (self.sources[root].width, self.sources[root].height);
        let (width, height) = upscaled_size(x2 - x1, y2 - y1, w0, h0);
        self.sources.push(SourceInfo {
            width,
            height,
            provenance: Provenance::Crop {
                parent,
                bbox: [x1, y1, x2, y2],
            },
            root,
        });
        Ok(self.sources.len() - 1)
    }
}

/// Checks every region of a tool step; answer steps trivially pass.
pub fn validate_regions(step: &Step, memory: &MemoryTrace) -> Result<(), Vec<RegionViolation>> {
    let violations: Vec<RegionViolation> = step
        .regions()
        .iter()
        .enumerate()
        .flat_map(|(i, r)| memory.check_region(i, r))
        .collect();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Output size of a `w x h` crop scaled by `s = min(2, w0 / w, h0 / h)`,
/// where `w0 x h0` is the root original. Floors `s * w` and `s * h` using
/// exact integer arithmetic.
pub fn upscaled_size(w: usize, h: usize, w0: usize, h0: usize) -> (usize, usize) {
    // s = num / den, the smallest of 2/1, w0/w and h0/h
    let (mut num, mut den) = (2, 1);
    for (n, d) in [(w0, w), (h0, h)] {
        if n * den < num * d {
            (num, den) = (n, d);
        }
    }
    (num * w / den, num * h / den)
}

/// Bilinear resampling with half-pixel centers and edge clamping; channel
/// values are rounded half up.
pub fn resize_bilinear(src: &RgbImage, out_w: usize, out_h: usize) -> RgbImage {
    let (w, h) = (src.width(), src.height());
    let axis = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let s = (o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
        let s = s.max(0.0).min((n_in - 1) as f64);
        let i0 = Float::floor(s) as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|o| axis(o, w, out_w)).collect();
    let ys: Vec<_> = (0..out_h).map(|o| axis(o, h, out_h)).collect();
    RgbImage::from_fn(out_w, out_h, |ox, oy| {
        let (x0, x1, fx) = xs[ox];
        let (y0, y1, fy) = ys[oy];
        let (p00, p10, p01, p11) = (src.pixel(x0, y0), src.pixel(x1, y0), src.pixel(x0, y1), src.pixel(x1, y1));
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
            let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            out[c] = Float::floor(v + 0.5).clamp(0.0, 255.0) as u8;
        }
        out
    })
}

/// Every image of an episode: originals first, then crops in creation order.
#[derive(Clone, Debug, Default)]
pub struct VisualMemory {
    trace: MemoryTrace,
    images: Vec<RgbImage>,
}

impl VisualMemory {
    pub fn new(originals: Vec<RgbImage>) -> Self {
        let dims: Vec<_> = originals.iter().map(|i| (i.width(), i.height())).collect();
        Self {
            trace: MemoryTrace::from_originals(&dims),
            images: originals,
        }
    }

    pub fn trace(&self) -> &MemoryTrace {
        &self.trace
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, index: usize) -> Option<&RgbImage> {
        self.images.get(index)
    }

    pub fn images(&self) -> &[RgbImage] {
        &self.images
    }

    /// Crops `region` from its source, upscales it against the root
    /// original and appends the result. Returns the new source index.
    pub fn crop_and_upscale(&mut self, region: &Region) -> Result<usize, Vec<RegionViolation>> {
        let index = self.trace.append_crop(region)?;
        let info = self.trace.sources[index];
        let Provenance::Crop { parent, bbox } = info.provenance else {
            unreachable!("append_crop records a crop")
        };
        let crop = self.images[parent].crop(bbox[0], bbox[1], bbox[2], bbox[3]);
        let out = if (crop.width(), crop.height()) == (info.width, info.height) {
            crop
        } else {
            resize_bilinear(&crop, info.width, info.height)
        };
        self.images.push(out);
        Ok(index)
    }
}
