//! First-order ascent rules shared by the trainers.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    #[default]
    Adam,
    /// Plain `θ ← θ + lr ∇`.
    GradientAscent,
}

/// Stateful optimizer over a flat parameter vector. All updates *ascend*.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: T,
    first: Vec<T>,
    second: Vec<T>,
    step: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: T, dim: usize) -> Self {
        let (first, second) = match kind {
            OptimizerKind::Adam => (vec![T::zero(); dim], vec![T::zero(); dim]),
            OptimizerKind::GradientAscent => (Vec::new(), Vec::new()),
        };
        Self {
            kind,
            lr: learning_rate,
            first,
            second,
            step: 0,
        }
    }

    pub fn ascend(&mut self, params: &mut [T], grad: &[T]) {
        debug_assert_eq!(params.len(), grad.len());
        self.step += 1;
        match self.kind {
            OptimizerKind::GradientAscent => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p += self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                let b1 = T::lit(0.9);
                let b2 = T::lit(0.999);
                let eps = T::lit(1e-8);
                let c1 = T::one() - b1.powi(self.step);
                let c2 = T::one() - b2.powi(self.step);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.first[i] = b1 * self.first[i] + (T::one() - b1) * g;
                    self.second[i] = b2 * self.second[i] + (T::one() - b2) * g * g;
                    let m = self.first[i] / c1;
                    let v = self.second[i] / c2;
                    params[i] += self.lr * m / (v.sqrt() + eps);
                }
            }
        }
    }
}
