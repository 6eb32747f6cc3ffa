//! Categorical likelihood over softmax logits.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{ensure, input_err, Result};
use crate::scalar::Scalar;

/// Row-wise `log softmax`, stabilized by the row maximum.
pub fn log_softmax_rows<T: Scalar>(logits: ArrayView2<T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Row-wise softmax. Rows sum to one up to rounding.
pub fn softmax_rows<T: Scalar>(logits: ArrayView2<T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

pub(crate) fn check_labels(labels: &[usize], class_count: usize) -> Result<()> {
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
        return input_err(format!("label {} at row {i} outside 1..={class_count}", l + 1));
    }
    Ok(())
}

/// `Σ_i log softmax(logits_i)[y_i]` and the gradient `onehot(y) − softmax`
/// with respect to the logits.
pub fn categorical_loglik_from_logits<T: Scalar>(logits: ArrayView2<T>, labels: &[usize]) -> Result<(T, Array2<T>)> {
    ensure(logits.nrows() == labels.len(), || {
        format!("{} logit rows but {} labels", logits.nrows(), labels.len())
    })?;
    check_labels(labels, logits.ncols())?;
    let logp = log_softmax_rows(logits);
    let mut grad = logp.mapv(|v| -v.exp());
    let mut value = T::zero();
    for (i, &l) in labels.iter().enumerate() {
        value += logp[[i, l]];
        grad[[i, l]] += T::one();
    }
    Ok((value, grad))
}

/// `Σ_i log softmax(V z_i)[y_i]` for a head `V` (C × H) and encodings `z`
/// (N × H). Labels are zero-based.
pub fn categorical_loglik<T: Scalar>(head: ArrayView2<T>, encodings: ArrayView2<T>, labels: &[usize]) -> Result<T> {
    ensure(head.ncols() == encodings.ncols(), || {
        format!("head expects {} features, encodings have {}", head.ncols(), encodings.ncols())
    })?;
    let logits = encodings.dot(&head.t());
    Ok(categorical_loglik_from_logits(logits.view(), labels)?.0)
}
