//! RBF kernel and the random Fourier feature map
//! `φ(x) = σ_k √(2/R) cos(Aᵀx / ℓ_k + b)` with `A ~ N(0,1)`, `b ~ U[0, 2π)`.
//!
//! For a fixed pair `(x, x′)` the inner product `φ(x)ᵀφ(x′)` is a Monte Carlo
//! estimate of `k(x, x′)` whose error shrinks like `1/√R`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

/// Length-scale `ℓ_k` and output-scale `σ_k` of the RBF kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams<T> {
    pub length_scale: T,
    pub output_scale: T,
}

impl<T: Scalar> KernelParams<T> {
    pub fn new(length_scale: T, output_scale: T) -> Result<Self> {
        let p = Self {
            length_scale,
            output_scale,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.length_scale > T::zero() && self.length_scale.is_finite(),
            || format!("length_scale must be positive, got {}", self.length_scale),
        )?;
        ensure(
            self.output_scale > T::zero() && self.output_scale.is_finite(),
            || format!("output_scale must be positive, got {}", self.output_scale),
        )
    }

    pub fn variance(&self) -> T {
        self.output_scale * self.output_scale
    }
}

fn squared_distance<T: Scalar>(x: ArrayView1<T>, y: ArrayView1<T>) -> T {
    x.iter()
        .zip(y.iter())
        .map(|(&a, &b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

fn kernel_from_sq_dist<T: Scalar>(d2: T, params: &KernelParams<T>) -> T {
    let l2 = params.length_scale * params.length_scale;
    params.variance() * (-d2 / (T::lit(2.0) * l2)).exp()
}

/// `σ_k² exp(−‖x − x′‖² / 2ℓ_k²)`.
pub fn rbf_kernel<T: Scalar>(
    x: ArrayView1<T>,
    x_prime: ArrayView1<T>,
    params: &KernelParams<T>,
) -> Result<T> {
    ensure(x.len() == x_prime.len(), || {
        format!("dimension mismatch: {} vs {}", x.len(), x_prime.len())
    })?;
    Ok(kernel_from_sq_dist(squared_distance(x, x_prime), params))
}

/// Pairwise squared distances between rows of `a` and rows of `b`.
pub fn pairwise_sq_distances<T: Scalar>(a: ArrayView2<T>, b: ArrayView2<T>) -> Result<Array2<T>> {
    ensure(a.ncols() == b.ncols(), || {
        format!("dimension mismatch: {} vs {} columns", a.ncols(), b.ncols())
    })?;
    let mut d = Array2::zeros((a.nrows(), b.nrows()));
    for (i, ra) in a.axis_iter(Axis(0)).enumerate() {
        for (j, rb) in b.axis_iter(Axis(0)).enumerate() {
            d[[i, j]] = squared_distance(ra, rb);
        }
    }
    Ok(d)
}

/// Cross-kernel matrix `K(A, B)` of shape `|A| × |B|`.
pub fn kernel_cross<T: Scalar>(
    a: ArrayView2<T>,
    b: ArrayView2<T>,
    params: &KernelParams<T>,
) -> Result<Array2<T>> {
    params.validate()?;
    Ok(pairwise_sq_distances(a, b)?.mapv(|d2| kernel_from_sq_dist(d2, params)))
}

/// Gram matrix on the rows of `x`. The diagonal is exactly `σ_k²`.
pub fn kernel_gram<T: Scalar>(x: ArrayView2<T>, params: &KernelParams<T>) -> Result<Array2<T>> {
    ensure(x.nrows() >= 1, || "kernel_gram needs at least one row".into())?;
    let mut k = kernel_cross(x, x, params)?;
    k.diag_mut().fill(params.variance());
    Ok(k)
}

/// Frozen random projection `(A, b)` of the feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct RffFeatureMap<T> {
    projection: Array2<T>,
    phases: Array1<T>,
    seed: u64,
}

impl<T: Scalar> RffFeatureMap<T> {
    /// Draws `A ∈ R^{H×R}` with standard-normal entries and `b ∈ [0, 2π)^R`
    /// from a ChaCha20 stream keyed by `seed`. Draw order: all of `A`
    /// row-major, then `b`.
    pub fn sample(input_dim: usize, feature_count: usize, seed: u64) -> Result<Self> {
        ensure(input_dim >= 1, || "input_dim must be at least 1".into())?;
        ensure(feature_count >= 1, || "feature_count must be at least 1".into())?;
        let mut rng = rng_from_seed(seed);
        let projection = Array2::from_shape_simple_fn((input_dim, feature_count), || {
            T::lit(rng.sample::<f64, _>(StandardNormal))
        });
        let two_pi = 2.0 * std::f64::consts::PI;
        let phases = Array1::from_shape_simple_fn(feature_count, || {
            // random::<f64>() is in [0, 1); the product can round up to 2π
            // only for values within an ulp of 1, which we fold back.
            let b = rng.random::<f64>() * two_pi;
            T::lit(if b >= two_pi { 0.0 } else { b })
        });
        Ok(Self {
            projection,
            phases,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn feature_count(&self) -> usize {
        self.projection.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn projection(&self) -> ArrayView2<'_, T> {
        self.projection.view()
    }

    pub fn phases(&self) -> ArrayView1<'_, T> {
        self.phases.view()
    }

    fn check_inputs(&self, x: ArrayView2<T>) -> Result<()> {
        ensure(x.ncols() == self.input_dim(), || {
            format!(
                "inputs have {} columns but the feature map expects {}",
                x.ncols(),
                self.input_dim()
            )
        })
    }

    /// `XA`, the un-scaled projections, shape N×R.
    fn project(&self, x: ArrayView2<T>) -> Array2<T> {
        x.dot(&self.projection)
    }

    fn amplitude(&self, params: &KernelParams<T>) -> T {
        params.output_scale * (T::lit(2.0) / T::from_usize_lossy(self.feature_count())).sqrt()
    }

    /// Row `i` is `φ(x_i)`.
    pub fn featurize(&self, params: &KernelParams<T>, x: ArrayView2<T>) -> Result<FeatureMatrix<T>> {
        self.check_inputs(x)?;
        ensure(
            params.length_scale > T::zero() && params.output_scale >= T::zero(),
            || "kernel parameters out of range".into(),
        )?;
        let amp = self.amplitude(params);
        let inv_l = T::one() / params.length_scale;
        let mut phi = self.project(x);
        for mut row in phi.axis_iter_mut(Axis(0)) {
            for (v, &b) in row.iter_mut().zip(self.phases.iter()) {
                *v = amp * (*v * inv_l + b).cos();
            }
        }
        Ok(FeatureMatrix {
            values: phi,
            map_seed: self.seed,
        })
    }

    /// Features together with `∂Φ/∂ℓ_k`. The output-scale derivative is
    /// `Φ/σ_k` and needs no extra storage.
    pub fn featurize_with_length_grad(
        &self,
        params: &KernelParams<T>,
        x: ArrayView2<T>,
    ) -> Result<(FeatureMatrix<T>, Array2<T>)> {
        self.check_inputs(x)?;
        params.validate()?;
        let amp = self.amplitude(params);
        let inv_l = T::one() / params.length_scale;
        let proj = self.project(x);
        let mut phi = Array2::zeros(proj.raw_dim());
        let mut dphi = Array2::zeros(proj.raw_dim());
        for ((i, r), &p) in proj.indexed_iter() {
            let u = p * inv_l + self.phases[r];
            phi[[i, r]] = amp * u.cos();
            // d/dℓ cos(p/ℓ + b) = sin(u) p / ℓ²
            dphi[[i, r]] = amp * u.sin() * p * inv_l * inv_l;
        }
        Ok((
            FeatureMatrix {
                values: phi,
                map_seed: self.seed,
            },
            dphi,
        ))
    }
}

/// Stacked features `Φ ∈ R^{N×R}`, tagged with the seed of the map that made it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    values: Array2<T>,
    map_seed: u64,
}

impl<T: Scalar> FeatureMatrix<T> {
    /// Wraps an arbitrary matrix, e.g. a hand-built test instance.
    pub fn from_values(values: Array2<T>) -> Self {
        Self {
            values,
            map_seed: u64::MAX,
        }
    }

    pub fn values(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<T> {
        self.values
    }

    pub fn map_seed(&self) -> u64 {
        self.map_seed
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn feature_count(&self) -> usize {
        self.values.ncols()
    }

    /// `tr(ΦΦᵀ)`, the sum of squared entries.
    pub fn trace_gram(&self) -> T {
        crate::linalg::frobenius_sq(self.values.view())
    }

    /// `ΦΦᵀ`, the N×N approximation of the kernel Gram matrix.
    pub fn gram(&self) -> Array2<T> {
        self.values.dot(&self.values.t())
    }
}

impl<T: Scalar> From<FeatureMatrix<T>> for Array2<T> {
    fn from(f: FeatureMatrix<T>) -> Self {
        f.values
    }
}

pub(crate) fn shape_error(what: &str, expected: usize, got: usize) -> Error {
    Error::Input(format!("{what}: expected {expected}, got {got}"))
}
