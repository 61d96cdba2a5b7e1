use alloc::vec::Vec;

use super::{NumericsError, Scalar, Tensor};

/// Adam with bias correction and a constant learning rate.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: T) -> Self {
        Self {
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<(), NumericsError> {
        if params.len() != grads.len() {
            return Err(NumericsError::LengthMismatch {
                op: "adam",
                expected: params.len(),
                found: grads.len(),
            });
        }
        if self.first.is_empty() {
            for p in params.iter() {
                self.first.push(Tensor::zeros(p.shape().to_vec())?);
                self.second.push(Tensor::zeros(p.shape().to_vec())?);
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            if p.shape() != g.shape() {
                return Err(NumericsError::shape_mismatch("adam", p.shape(), g.shape()));
            }
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (T::one() - self.beta1) * gi;
                *vi = self.beta2 * *vi + (T::one() - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi = *pi - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
