//! A small dense tanh encoder with an always-one feature appended to its
//! output, and hand-written backpropagation.
//!
//! Parameters are packed layer by layer: the weight matrix (out × in,
//! row-major) followed by the bias (out). The encoding of `x` has the last
//! hidden layer's activations in positions `0..H` and the constant 1 at `H`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::kernel::shape_error;
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpEncoder {
    /// `[H_in, hidden…, H]`.
    pub layer_sizes: Vec<usize>,
}

/// Activations kept from the forward pass: input, then every tanh layer.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    activations: Vec<Array2<T>>,
}

impl MlpEncoder {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        ensure(layer_sizes.len() >= 2, || "encoder needs an input and an output size".into())?;
        ensure(layer_sizes.iter().all(|&s| s >= 1), || "layer sizes must be positive".into())?;
        Ok(Self { layer_sizes })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    /// `H + 1`, including the always-one feature.
    pub fn output_dim(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 1] + 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layer<'a, T: Scalar>(&self, w: ArrayView1<'a, T>, l: usize) -> (ArrayView2<'a, T>, ArrayView1<'a, T>) {
        let offset: usize = self.layer_sizes.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum();
        let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let weights = w
            .slice_move(s![offset..offset + o * i])
            .into_shape_with_order((o, i))
            .expect("contiguous parameter slice");
        let bias = w.slice_move(s![offset + o * i..offset + o * i + o]);
        (weights, bias)
    }

    /// Random initial weights `N(0, 1/fan_in)` and zero biases.
    pub fn init<T: Scalar>(&self, seed: u64) -> Array1<T> {
        let mut rng = rng_from_seed(seed);
        let mut w = Vec::with_capacity(self.param_count());
        for pair in self.layer_sizes.windows(2) {
            let scale = 1.0 / (pair[0] as f64).sqrt();
            for _ in 0..pair[0] * pair[1] {
                w.push(T::lit(scale * rng.sample::<f64, _>(StandardNormal)));
            }
            w.extend(std::iter::repeat_n(T::zero(), pair[1]));
        }
        Array1::from(w)
    }

    pub fn forward<T: Scalar>(&self, w: ArrayView1<T>, x: ArrayView2<T>) -> Result<(Array2<T>, ForwardCache<T>)> {
        if w.len() != self.param_count() {
            return Err(shape_error("encoder parameters", self.param_count(), w.len()));
        }
        if x.ncols() != self.input_dim() {
            return Err(shape_error("input columns", self.input_dim(), x.ncols()));
        }
        let mut activations = vec![x.to_owned()];
        for l in 0..self.layer_sizes.len() - 1 {
            let (weights, bias) = self.layer(w, l);
            let mut pre = activations[l].dot(&weights.t());
            pre += &bias;
            pre.mapv_inplace(|v| v.tanh());
            activations.push(pre);
        }
        let last = activations.last().expect("at least one layer");
        let mut z = Array2::ones((x.nrows(), self.output_dim()));
        z.slice_mut(s![.., ..self.output_dim() - 1]).assign(last);
        Ok((z, ForwardCache { activations }))
    }

    /// Gradient with respect to the packed weights given `∂/∂z`.
    pub fn backward<T: Scalar>(&self, w: ArrayView1<T>, cache: &ForwardCache<T>, grad_z: ArrayView2<T>) -> Array1<T> {
        let mut grad = Array1::zeros(self.param_count());
        let layers = self.layer_sizes.len() - 1;
        let mut upstream = grad_z.slice(s![.., ..self.output_dim() - 1]).to_owned();
        let mut offset = self.param_count();
        for l in (0..layers).rev() {
            let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            offset -= o * i + o;
            let out = &cache.activations[l + 1];
            let delta = &upstream * &out.mapv(|a| T::one() - a * a);
            let gw = delta.t().dot(&cache.activations[l]);
            grad.slice_mut(s![offset..offset + o * i])
                .assign(&Array1::from_iter(gw.iter().copied()));
            grad.slice_mut(s![offset + o * i..offset + o * i + o])
                .assign(&delta.sum_axis(Axis(0)));
            if l > 0 {
                let (weights, _) = self.layer(w, l);
                upstream = delta.dot(&weights);
            }
        }
        grad
    }
}
