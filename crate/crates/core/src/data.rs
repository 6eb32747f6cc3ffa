//! In-memory datasets, the synthetic generators used by the experiments,
//! and the stratified holdout split.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, input_err, Result};
use crate::rng::{rng_from_seed, stream_seed, Stream};
use crate::scalar::Scalar;

/// Real-valued inputs `N × H` with scalar targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionData<T> {
    pub inputs: Array2<T>,
    pub targets: Array1<T>,
}

impl<T: Scalar> RegressionData<T> {
    pub fn new(inputs: Array2<T>, targets: Array1<T>) -> Result<Self> {
        ensure(inputs.nrows() >= 1, || "dataset has no rows".into())?;
        ensure(inputs.nrows() == targets.len(), || {
            format!("{} input rows but {} targets", inputs.nrows(), targets.len())
        })?;
        ensure(inputs.iter().chain(targets.iter()).all(|v| v.is_finite()), || {
            "dataset contains non-finite values".into()
        })?;
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(Axis(0), rows),
            targets: self.targets.select(Axis(0), rows),
        }
    }
}

/// Real-valued inputs with class labels `0..class_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationData<T> {
    pub inputs: Array2<T>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl<T: Scalar> ClassificationData<T> {
    pub fn new(inputs: Array2<T>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        ensure(inputs.nrows() >= 1, || "dataset has no rows".into())?;
        ensure(class_count >= 2, || format!("need at least 2 classes, got {class_count}"))?;
        ensure(inputs.nrows() == labels.len(), || {
            format!("{} input rows but {} labels", inputs.nrows(), labels.len())
        })?;
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return input_err(format!("label {} at row {i} outside 1..={class_count}", l + 1));
        }
        ensure(inputs.iter().all(|v| v.is_finite()), || "dataset contains non-finite values".into())?;
        Ok(Self {
            inputs,
            labels,
            class_count,
        })
    }

    /// Builds from labels numbered `1..=C`, as stored on disk.
    pub fn from_one_based(inputs: Array2<T>, labels: &[i64], class_count: usize) -> Result<Self> {
        let mut zero = Vec::with_capacity(labels.len());
        for (i, &l) in labels.iter().enumerate() {
            if l < 1 || l as usize > class_count {
                return input_err(format!("label {l} at row {i} outside 1..={class_count}"));
            }
            zero.push(l as usize - 1);
        }
        Self::new(inputs, zero, class_count)
    }

    pub fn one_based_labels(&self) -> Vec<i64> {
        self.labels.iter().map(|&l| l as i64 + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            class_count: self.class_count,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.class_count];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Fraction of the most common class.
    pub fn majority_rate(&self) -> f64 {
        *self.class_counts().iter().max().unwrap_or(&0) as f64 / self.len().max(1) as f64
    }
}

/// `count` evenly spaced points on `[lo, hi]` as an `count × 1` matrix.
pub fn evenly_spaced_grid<T: Scalar>(lo: T, hi: T, count: usize) -> Array2<T> {
    if count == 1 {
        return Array2::from_elem((1, 1), lo);
    }
    let step = (hi - lo) / T::from_usize_lossy(count - 1);
    Array2::from_shape_fn((count, 1), |(i, _)| lo + step * T::from_usize_lossy(i))
}

/// `x ~ U[lo, hi]`, `y = sin(3x) + ε` with `ε ~ N(0, noise_var)`.
pub fn generate_toy_regression<T: Scalar>(
    n: usize,
    noise_var: T,
    interval: (T, T),
    seed: u64,
) -> Result<RegressionData<T>> {
    ensure(n >= 2, || format!("need at least 2 points, got {n}"))?;
    ensure(noise_var >= T::zero() && noise_var.is_finite(), || {
        format!("noise variance must be non-negative, got {noise_var}")
    })?;
    let (lo, hi) = interval;
    ensure(lo < hi, || "interval must satisfy lo < hi".into())?;
    let mut rng = rng_from_seed(stream_seed(seed, Stream::Data));
    let noise_std = noise_var.sqrt();
    let mut x = Array2::zeros((n, 1));
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let u = T::lit(rng.random::<f64>());
        let xi = lo + (hi - lo) * u;
        let eps = T::lit(rng.sample::<f64, _>(StandardNormal));
        x[[i, 0]] = xi;
        y[i] = (T::lit(3.0) * xi).sin() + noise_std * eps;
    }
    RegressionData::new(x, y)
}

/// Layout of the Gaussian-blob classification data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobLayout {
    /// Class means sit evenly on a circle of this radius.
    pub radius: f64,
    /// Per-coordinate standard deviation around each mean.
    pub spread: f64,
}

impl Default for BlobLayout {
    fn default() -> Self {
        Self {
            radius: 2.5,
            spread: 0.5,
        }
    }
}

/// `C` isotropic Gaussian blobs in 2-D with class `k` centred at
/// `radius·(cos 2πk/C, sin 2πk/C)`. Rows cycle through the classes so the
/// counts differ by at most one.
pub fn generate_toy_classification<T: Scalar>(
    n: usize,
    class_count: usize,
    layout: BlobLayout,
    seed: u64,
) -> Result<ClassificationData<T>> {
    ensure(class_count >= 2, || format!("need at least 2 classes, got {class_count}"))?;
    ensure(n >= 2 * class_count, || format!("need N ≥ 2C, got N={n}, C={class_count}"))?;
    ensure(layout.radius.is_finite() && layout.spread > 0.0 && layout.spread.is_finite(), || {
        "blob radius must be finite and spread positive".into()
    })?;
    let mut rng = rng_from_seed(stream_seed(seed, Stream::Data));
    let mut x = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % class_count;
        let angle = std::f64::consts::TAU * k as f64 / class_count as f64;
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        x[[i, 0]] = T::lit(layout.radius * angle.cos() + layout.spread * a);
        x[[i, 1]] = T::lit(layout.radius * angle.sin() + layout.spread * b);
        labels.push(k);
    }
    ClassificationData::new(x, labels, class_count)
}

/// Per-class round-robin holdout: each class's indices are shuffled, then
/// every `fold`-th one (positions `fold−1, 2·fold−1, …`) goes to validation.
/// With `fold = 5` this holds out 1/5 of every class. Every class must
/// appear on both sides.
pub fn stratified_split(
    labels: &[usize],
    class_count: usize,
    fold: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    ensure(fold >= 2, || "fold must be at least 2".into())?;
    let mut rng = rng_from_seed(stream_seed(seed, Stream::Split));
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for class in 0..class_count {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let before = (train.len(), valid.len());
        for (j, &i) in idx.iter().enumerate() {
            if j % fold == fold - 1 {
                valid.push(i);
            } else {
                train.push(i);
            }
        }
        if train.len() == before.0 || valid.len() == before.1 {
            return input_err(format!(
                "class {} has {} instances, too few to appear in both training and validation",
                class + 1,
                idx.len()
            ));
        }
    }
    train.sort_unstable();
    valid.sort_unstable();
    Ok((train, valid))
}

/// Unstratified version of [`stratified_split`] for regression targets.
pub fn holdout_split(n: usize, fold: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    ensure(n >= fold, || format!("need at least {fold} rows for a 1/{fold} holdout, got {n}"))?;
    stratified_split(&vec![0; n], 1, fold, seed)
}

/// Root-mean-square difference.
pub fn rmse<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> T {
    let n = T::from_usize_lossy(a.len().max(1));
    (a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>() / n).sqrt()
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy<T: Scalar>(probs: ArrayView2<T>, labels: &[usize]) -> f64 {
    let hits = probs
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &l)| {
            let mut best = 0;
            for (k, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = k;
                }
            }
            best == l
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Mean negative log probability of the true labels.
pub fn mean_nll<T: Scalar>(probs: ArrayView2<T>, labels: &[usize]) -> T {
    let n = T::from_usize_lossy(labels.len().max(1));
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -probs[[i, l]].max(T::min_positive_value()).ln())
        .sum::<T>()
        / n
}
