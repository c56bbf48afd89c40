//! Alignment probability and the bidirectional in-batch contrastive loss.

use crate::matrix::{axpy, dot, log_sum_exp, Matrix};

/// Probability that `anchor` aligns with `positive` against `negatives`:
/// `exp(a·p/τ) / (exp(a·p/τ) + Σ exp(a·n/τ))`.
pub fn icl_prob(anchor: &[f64], positive: &[f64], negatives: &[&[f64]], tau: f64) -> f64 {
    let mut logits = Vec::with_capacity(negatives.len() + 1);
    logits.push(dot(anchor, positive) / tau);
    logits.extend(negatives.iter().map(|n| dot(anchor, n) / tau));
    (logits[0] - log_sum_exp(&logits)).exp()
}

/// Batch-mean of `−log(½(p(h1ⁱ, h2ⁱ) + p(h2ⁱ, h1ⁱ)))` where row `i` of `h1`
/// and `h2` is a seed pair and the negatives of pair `i` are every other row
/// of both matrices.
pub fn icl_loss(h1: &Matrix, h2: &Matrix, batch: &[usize], tau: f64) -> f64 {
    let a = h1.select_rows(batch);
    let b = h2.select_rows(batch);
    icl_loss_grad(&a, &b, tau, false).0
}

pub(crate) struct IclGrad {
    pub d1: Matrix,
    pub d2: Matrix,
}

/// Loss over aligned rows of `h1`/`h2`, optionally with its gradient with
/// respect to both matrices.
pub(crate) fn icl_loss_grad(h1: &Matrix, h2: &Matrix, tau: f64, want_grad: bool) -> (f64, Option<IclGrad>) {
    let b = h1.rows();
    assert_eq!(b, h2.rows());
    if b == 0 {
        return (0.0, None);
    }
    let dim = h1.cols();
    let rows = 2 * b;
    let x = |r: usize| if r < b { h1.row(r) } else { h2.row(r - b) };
    let partner = |r: usize| if r < b { r + b } else { r - b };

    // logits[r][k] = x_r·x_k / τ, self excluded via -inf
    let mut logits = Matrix::zeros(rows, rows);
    for r in 0..rows {
        for k in r..rows {
            let v = if r == k { f64::NEG_INFINITY } else { dot(x(r), x(k)) / tau };
            logits.set(r, k, v);
            logits.set(k, r, v);
        }
    }
    let lse: Vec<f64> = (0..rows).map(|r| log_sum_exp(logits.row(r))).collect();
    let log_p: Vec<f64> = (0..rows).map(|r| logits.get(r, partner(r)) - lse[r]).collect();

    let mut loss = 0.0;
    let mut mix = vec![0.0; rows];
    for i in 0..b {
        let q = log_sum_exp(&[log_p[i], log_p[i + b]]);
        loss -= q - std::f64::consts::LN_2;
        mix[i] = (log_p[i] - q).exp();
        mix[i + b] = (log_p[i + b] - q).exp();
    }
    loss /= b as f64;
    if !want_grad {
        return (loss, None);
    }

    let mut dx = Matrix::zeros(rows, dim);
    let scale = 1.0 / (b as f64 * tau);
    for r in 0..rows {
        let pr = partner(r);
        for k in 0..rows {
            if k == r {
                continue;
            }
            let pi = (logits.get(r, k) - lse[r]).exp();
            let coef = mix[r] * (pi - if k == pr { 1.0 } else { 0.0 }) * scale;
            if coef == 0.0 {
                continue;
            }
            axpy(coef, x(k), dx.row_mut(r));
            axpy(coef, x(r), dx.row_mut(k));
        }
    }
    let mut d1 = Matrix::zeros(b, dim);
    let mut d2 = Matrix::zeros(b, dim);
    for i in 0..b {
        d1.row_mut(i).copy_from_slice(dx.row(i));
        d2.row_mut(i).copy_from_slice(dx.row(i + b));
    }
    (loss, Some(IclGrad { d1, d2 }))
}
