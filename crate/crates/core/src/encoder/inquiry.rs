//! Frozen text encoder for re-encoding inquiries.
//!
//! Lowercased whitespace tokens are hashed into rows of a seeded table,
//! mixed by one fixed self-attention block and projected to the vision
//! hidden width. No parameter here is ever trained.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{sinusoid, InquiryConfig};
use crate::numerics::{ops, Scalar, Tensor};

/// Inquiry tokens ready to join the unified sequence. `None` is the empty inquiry.
#[derive(Clone, Debug, PartialEq)]
pub struct InquiryEmbedding<T> {
    pub tokens: Option<Tensor<T>>,
}

impl<T: Scalar> InquiryEmbedding<T> {
    pub fn empty() -> Self {
        Self { tokens: None }
    }

    pub fn len(&self) -> usize {
        self.tokens.as_ref().map_or(0, Tensor::rows)
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_none()
    }
}

#[derive(Clone, Debug)]
pub struct InquiryEncoder<T> {
    table: Tensor<T>,
    wq: Tensor<T>,
    wk: Tensor<T>,
    wv: Tensor<T>,
    wo: Tensor<T>,
    proj: Tensor<T>,
}

fn gaussian<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * std)
        })
        .collect();
    Tensor::new([rows, cols], data).expect("positive extents")
}

/// FNV-1a, 64-bit.
fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

impl<T: Scalar> InquiryEncoder<T> {
    pub fn new(config: &InquiryConfig, hidden_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let w = config.width;
        let std = crate::numerics::inv_sqrt(w);
        Self {
            table: gaussian(&mut rng, config.table_rows, w, 1.0),
            wq: gaussian(&mut rng, w, w, std),
            wk: gaussian(&mut rng, w, w, std),
            wv: gaussian(&mut rng, w, w, std),
            wo: gaussian(&mut rng, w, w, std),
            proj: gaussian(&mut rng, w, hidden_dim, std),
        }
    }

    pub fn encode(&self, text: &str) -> InquiryEmbedding<T> {
        let words = tokenize(text);
        if words.is_empty() {
            return InquiryEmbedding::empty();
        }
        self.try_encode(&words).map_or_else(|_| InquiryEmbedding::empty(), |t| InquiryEmbedding { tokens: Some(t) })
    }

    fn try_encode(&self, words: &[String]) -> Result<Tensor<T>, crate::numerics::NumericsError> {
        let rows = self.table.rows() as u64;
        let w = self.table.cols();
        let m = words.len();
        let mut x = Vec::with_capacity(m * w);
        for (pos, word) in words.iter().enumerate() {
            let r = (fnv1a(word) % rows) as usize;
            let pe = sinusoid::<T>(pos, w);
            x.extend(self.table.row(r).iter().zip(&pe).map(|(&a, &b)| a + b));
        }
        let x = Tensor::new([m, w], x)?;
        let q = ops::matmul(&x, &self.wq)?;
        let k = ops::matmul(&x, &self.wk)?;
        let v = ops::matmul(&x, &self.wv)?;
        let s = ops::scale(&ops::matmul(&q, &ops::transpose(&k)?)?, T::one() / T::of(w as f64).sqrt());
        let a = ops::masked_softmax(&s, &Tensor::filled([m, m], true)?)?;
        let h = ops::add(&x, &ops::matmul(&ops::matmul(&a, &v)?, &self.wo)?)?;
        let ones = Tensor::ones([w])?;
        let zeros = Tensor::zeros([w])?;
        let h = ops::layer_norm(&h, &ones, &zeros, T::of(crate::numerics::LAYER_NORM_EPS))?;
        ops::matmul(&h, &self.proj)
    }
}
