//! Numerical checks of the contrastive-loss analysis: a Jensen lower bound on
//! the one-directional in-batch loss, its attraction/repulsion terms, the
//! closed-form anchor gradient and how negative-sample density skews it.
//!
//! Temperature is omitted throughout (τ = 1). For a batch of `B` unit-norm
//! pairs, the negatives of anchor `h₁ⁱ` are the other positives `h₂ʲ`, so
//! `D = B − 1`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, log_sum_exp, norm, normalize_in_place, normalized, Matrix};
use crate::rng;

/// Central-difference step used by every gradient check.
pub const FD_STEP: f64 = 1e-5;
/// Magnitude floor of [`relative_error`].
pub const FD_FLOOR: f64 = 1e-5;

/// `|a − b| / max(|a|, |b|, FD_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

const UNIT_TOL: f64 = 1e-9;

fn check_unit(m: &Matrix) -> Result<()> {
    for (row, r) in m.iter_rows().enumerate() {
        let n = norm(r);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::NonUnitRow { row, norm: n });
        }
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `Σᵢ −log(exp(h₁ⁱ·h₂ⁱ) / Σ_{j} exp(h₁ⁱ·h₂ʲ))`.
pub fn unidirectional_loss(h1: &Matrix, h2: &Matrix) -> f64 {
    let b = h1.rows();
    (0..b)
        .map(|i| {
            let logits: Vec<f64> = (0..b).map(|j| dot(h1.row(i), h2.row(j))).collect();
            log_sum_exp(&logits) - logits[i]
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub loss: f64,
    /// `Σᵢ log(1 + D·exp(½‖h₁ⁱ−h₂ⁱ‖² − (1/2D)Σⱼ‖h₁ⁱ−h₂ʲ‖²))`.
    pub bound: f64,
    /// The same expression with unsquared distances and an extra `−1/D`
    /// in the exponent. Not a valid bound in general; kept for comparison.
    pub literal_bound: f64,
    pub margin: f64,
    pub d: usize,
}

/// Per-anchor attraction and repulsion terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermDecomposition {
    /// `½‖h₁ⁱ − h₂ⁱ‖`
    pub attraction: Vec<f64>,
    /// `(1/2D) Σⱼ ‖h₁ⁱ − h₂ʲ‖`
    pub repulsion: Vec<f64>,
    /// `½‖h₁ⁱ − h₂ⁱ‖²`
    pub attraction_sq: Vec<f64>,
    /// `(1/2D) Σⱼ ‖h₁ⁱ − h₂ʲ‖²`
    pub repulsion_sq: Vec<f64>,
}

pub fn decompose_terms(h1: &Matrix, h2: &Matrix) -> Result<TermDecomposition> {
    check_unit(h1)?;
    check_unit(h2)?;
    let b = h1.rows();
    let d = b.saturating_sub(1).max(1) as f64;
    let mut t = TermDecomposition {
        attraction: Vec::with_capacity(b),
        repulsion: Vec::with_capacity(b),
        attraction_sq: Vec::with_capacity(b),
        repulsion_sq: Vec::with_capacity(b),
    };
    for i in 0..b {
        let pos = sq_dist(h1.row(i), h2.row(i));
        t.attraction.push(0.5 * pos.sqrt());
        t.attraction_sq.push(0.5 * pos);
        let (mut rep, mut rep_sq) = (0.0, 0.0);
        for j in (0..b).filter(|&j| j != i) {
            let s = sq_dist(h1.row(i), h2.row(j));
            rep += s.sqrt();
            rep_sq += s;
        }
        t.repulsion.push(rep / (2.0 * d));
        t.repulsion_sq.push(rep_sq / (2.0 * d));
    }
    Ok(t)
}

/// Loss and its lower bound for one batch of unit-norm pairs.
///
/// With `‖a − b‖² = 2 − 2a·b` for unit vectors, the Jensen step
/// `Σⱼ exp(xⱼ) ≥ D·exp(mean xⱼ)` becomes the squared-distance bound in
/// [`BoundReport::bound`], with equality when every anchor sees equal dot
/// products with all of its negatives.
pub fn icl_lower_bound(h1: &Matrix, h2: &Matrix) -> Result<BoundReport> {
    if h1.rows() < 2 || h1.rows() != h2.rows() {
        return Err(Error::Config(format!(
            "bound needs two equally sized batches of at least 2 rows, got {} and {}",
            h1.rows(),
            h2.rows()
        )));
    }
    let terms = decompose_terms(h1, h2)?;
    let d = h1.rows() - 1;
    let df = d as f64;
    let log1p_dexp = |x: f64| log_sum_exp(&[0.0, df.ln() + x]);
    let bound = (0..h1.rows())
        .map(|i| log1p_dexp(terms.attraction_sq[i] - terms.repulsion_sq[i]))
        .sum();
    let literal_bound = (0..h1.rows())
        .map(|i| log1p_dexp(terms.attraction[i] - terms.repulsion[i] - 1.0 / df))
        .sum();
    let loss = unidirectional_loss(h1, h2);
    Ok(BoundReport {
        loss,
        bound,
        literal_bound,
        margin: loss - bound,
        d,
    })
}

/// Softmax weights and gradient for one anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientDiagnostics {
    /// Weight of the positive, `P_ii`.
    pub p_pos: f64,
    /// Weight of each negative, `P_ij`.
    pub p_neg: Vec<f64>,
    /// `∂L/∂h₁ⁱ`, or `∂L/∂w` when normalization is included.
    pub gradient: Vec<f64>,
    /// `Σⱼ ‖hʲ − (h·hʲ)h‖·|P_ij|`
    pub repulsion_magnitude: f64,
}

/// Anchor loss `−log P_ii`. With `normalize`, `anchor` is the raw output `w`
/// and the loss sees `w/‖w‖`.
pub fn anchor_loss(anchor: &[f64], positive: &[f64], negatives: &[Vec<f64>], normalize: bool) -> f64 {
    let h = if normalize { normalized(anchor) } else { anchor.to_vec() };
    let mut logits = vec![dot(&h, positive)];
    logits.extend(negatives.iter().map(|n| dot(&h, n)));
    log_sum_exp(&logits) - logits[0]
}

pub fn gradient_diagnostics(
    anchor: &[f64],
    positive: &[f64],
    negatives: &[Vec<f64>],
    normalize: bool,
) -> GradientDiagnostics {
    let h = if normalize { normalized(anchor) } else { anchor.to_vec() };
    let mut logits = vec![dot(&h, positive)];
    logits.extend(negatives.iter().map(|n| dot(&h, n)));
    let lse = log_sum_exp(&logits);
    let p: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();

    // ∂L/∂h = h₂(P_ii − 1) + Σⱼ hʲ P_ij
    let mut grad: Vec<f64> = positive.iter().map(|v| v * (p[0] - 1.0)).collect();
    for (n, &pj) in negatives.iter().zip(&p[1..]) {
        axpy(pj, n, &mut grad);
    }
    let mut repulsion = 0.0;
    for (n, &pj) in negatives.iter().zip(&p[1..]) {
        let along = dot(&h, n);
        let tangent: Vec<f64> = n.iter().zip(&h).map(|(ni, hi)| ni - along * hi).collect();
        repulsion += norm(&tangent) * pj.abs();
    }
    if normalize {
        // (I − h hᵀ) g / ‖w‖
        let w_norm = norm(anchor);
        let hg = dot(&h, &grad);
        grad = grad.iter().zip(&h).map(|(g, hi)| (g - hg * hi) / w_norm).collect();
    }
    GradientDiagnostics {
        p_pos: p[0],
        p_neg: p[1..].to_vec(),
        gradient: grad,
        repulsion_magnitude: repulsion,
    }
}

pub fn analytic_icl_gradient(anchor: &[f64], positive: &[f64], negatives: &[Vec<f64>], normalize: bool) -> Vec<f64> {
    gradient_diagnostics(anchor, positive, negatives, normalize).gradient
}

/// Largest relative error between the analytic anchor gradient and central
/// finite differences of [`anchor_loss`].
pub fn anchor_fd_error(anchor: &[f64], positive: &[f64], negatives: &[Vec<f64>], normalize: bool) -> f64 {
    let g = analytic_icl_gradient(anchor, positive, negatives, normalize);
    let mut worst = 0.0f64;
    for k in 0..anchor.len() {
        let mut plus = anchor.to_vec();
        plus[k] += FD_STEP;
        let mut minus = anchor.to_vec();
        minus[k] -= FD_STEP;
        let fd = (anchor_loss(&plus, positive, negatives, normalize) - anchor_loss(&minus, positive, negatives, normalize))
            / (2.0 * FD_STEP);
        worst = worst.max(relative_error(g[k], fd));
    }
    worst
}

fn random_unit(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if normalize_in_place(&mut v) > 1e-6 {
            return v;
        }
    }
}

fn orthogonalize(v: &mut [f64], against: &[f64]) {
    let d = dot(v, against);
    axpy(-d, against, v);
}

/// Aggregate repulsion contributions of a dense and a sparse negative group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewReport {
    /// `‖Σ_{j∈dense} P_ij (hʲ − (h·hʲ)h)‖`
    pub dense_contribution: f64,
    pub sparse_contribution: f64,
    pub p_neg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewConfig {
    pub dense_count: usize,
    pub sparse_count: usize,
    /// Target pairwise dot product inside the dense group.
    pub dense_dot: f64,
    /// Target pairwise dot product inside the sparse group.
    pub sparse_dot: f64,
    pub dim: usize,
}

/// Anchor with two groups of negatives orthogonal to it: each group member is
/// `√ρ·c + √(1−ρ)·z` for a shared random direction `c` and private random `z`,
/// so members of a group have pairwise dot products near `ρ`. Reports how
/// much each group contributes to the repulsion part of the gradient.
pub fn repulsion_skew_experiment(cfg: &SkewConfig, rng_seed: u64) -> SkewReport {
    let mut rng = rng::stream(rng_seed, 0);
    let dim = cfg.dim.max(3);
    let mut anchor = vec![0.0; dim];
    anchor[0] = 1.0;
    let positive = random_unit(dim, &mut rng);

    let group = |count: usize, rho: f64, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
        let mut center = random_unit(dim, rng);
        orthogonalize(&mut center, &anchor);
        normalize_in_place(&mut center);
        (0..count)
            .map(|_| {
                let mut z = random_unit(dim, rng);
                orthogonalize(&mut z, &anchor);
                normalize_in_place(&mut z);
                let mut m: Vec<f64> = center
                    .iter()
                    .zip(&z)
                    .map(|(c, zi)| rho.sqrt() * c + (1.0 - rho).sqrt() * zi)
                    .collect();
                normalize_in_place(&mut m);
                m
            })
            .collect()
    };
    let dense = group(cfg.dense_count, cfg.dense_dot, &mut rng);
    let sparse = group(cfg.sparse_count, cfg.sparse_dot, &mut rng);
    let negatives: Vec<Vec<f64>> = dense.iter().chain(&sparse).cloned().collect();
    let diag = gradient_diagnostics(&anchor, &positive, &negatives, false);

    let contribution = |members: &[Vec<f64>], weights: &[f64]| {
        let mut acc = vec![0.0; dim];
        for (m, &p) in members.iter().zip(weights) {
            let along = dot(&anchor, m);
            let tangent: Vec<f64> = m.iter().zip(&anchor).map(|(mi, ai)| mi - along * ai).collect();
            axpy(p, &tangent, &mut acc);
        }
        norm(&acc)
    };
    let split = cfg.dense_count;
    SkewReport {
        dense_contribution: contribution(&dense, &diag.p_neg[..split]),
        sparse_contribution: contribution(&sparse, &diag.p_neg[split..]),
        p_neg: diag.p_neg.first().copied().unwrap_or(0.0),
    }
}

/// Summary of a randomized sweep over all theory checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryCheckReport {
    pub batches: usize,
    pub bound_violations: usize,
    pub min_margin: f64,
    /// Draws on which the unsquared variant exceeds the loss.
    pub literal_bound_violations: usize,
    pub tightness_gap: f64,
    pub max_fd_error: f64,
    pub repulsion_identity_max_error: f64,
    pub softmax_sum_max_error: f64,
}

fn random_batch(b: usize, dim: usize, rng: &mut impl Rng) -> (Matrix, Matrix) {
    // mix of independent and correlated positives
    let noise: f64 = rng.gen_range(0.0..2.0);
    let h1: Vec<Vec<f64>> = (0..b).map(|_| random_unit(dim, rng)).collect();
    let h2: Vec<Vec<f64>> = h1
        .iter()
        .map(|a| {
            let z = random_unit(dim, rng);
            let mut v: Vec<f64> = a.iter().zip(&z).map(|(x, y)| x + noise * y).collect();
            if normalize_in_place(&mut v) < 1e-9 {
                v = z;
            }
            v
        })
        .collect();
    (Matrix::from_rows(&h1), Matrix::from_rows(&h2))
}

/// Batches on which every anchor sees equal dot products with its negatives.
pub fn equal_dot_batches(rng_seed: u64) -> Vec<(Matrix, Matrix)> {
    let mut rng = rng::stream(rng_seed, 1);
    let mut out = Vec::new();
    for b in [2usize, 3, 8, 17, 64] {
        let dim = b + 2;
        // all vectors identical
        let u = random_unit(dim, &mut rng);
        let same = Matrix::from_rows(&vec![u.clone(); b]);
        out.push((same.clone(), same));
        // orthonormal pairs, h₁ⁱ = h₂ⁱ
        let mut basis = Matrix::zeros(b, dim);
        for i in 0..b {
            basis.set(i, i, 1.0);
        }
        out.push((basis.clone(), basis.clone()));
        // one shared anchor direction, positives at a common angle to it
        let sigma: f64 = rng.gen_range(-0.9..0.9);
        let mut h2 = Matrix::zeros(b, dim);
        for j in 0..b {
            h2.set(j, 0, sigma);
            h2.set(j, j + 1, (1.0 - sigma * sigma).sqrt());
        }
        let mut anchors = Matrix::zeros(b, dim);
        for i in 0..b {
            anchors.set(i, 0, 1.0);
        }
        out.push((anchors, h2));
    }
    out
}

/// Randomized sweep: bound validity on `batches` random batches (sizes 2–64,
/// dims 4–64), tightness on equal-dot batches, anchor-gradient agreement with
/// finite differences, the orthogonal-negative repulsion identity and the
/// softmax normalization of `P`.
pub fn theory_check(batches: usize, rng_seed: u64) -> Result<TheoryCheckReport> {
    let mut rng = rng::stream(rng_seed, 0);
    let mut violations = 0;
    let mut literal_violations = 0;
    let mut min_margin = f64::INFINITY;
    for _ in 0..batches {
        let b = rng.gen_range(2..=64);
        let dim = rng.gen_range(4..=64);
        let (h1, h2) = random_batch(b, dim, &mut rng);
        let r = icl_lower_bound(&h1, &h2)?;
        min_margin = min_margin.min(r.margin);
        if r.margin < -1e-9 {
            violations += 1;
        }
        if r.literal_bound > r.loss + 1e-9 {
            literal_violations += 1;
        }
    }

    let mut gap = 0.0f64;
    for (h1, h2) in equal_dot_batches(rng_seed) {
        let r = icl_lower_bound(&h1, &h2)?;
        gap = gap.max((r.loss - r.bound).abs());
    }

    let mut fd = 0.0f64;
    let mut identity = 0.0f64;
    let mut softmax = 0.0f64;
    for trial in 0..100 {
        let dim = rng.gen_range(4..=8);
        let n_neg = rng.gen_range(1..=6);
        let scale = rng.gen_range(0.5..3.0);
        let anchor: Vec<f64> = random_unit(dim, &mut rng).iter().map(|v| v * scale).collect();
        let positive = random_unit(dim, &mut rng);
        let negatives: Vec<Vec<f64>> = (0..n_neg).map(|_| random_unit(dim, &mut rng)).collect();
        let unit_anchor = normalized(&anchor);
        fd = fd.max(anchor_fd_error(&unit_anchor, &positive, &negatives, false));
        fd = fd.max(anchor_fd_error(&anchor, &positive, &negatives, true));

        let diag = gradient_diagnostics(&unit_anchor, &positive, &negatives, false);
        softmax = softmax.max((diag.p_pos + diag.p_neg.iter().sum::<f64>() - 1.0).abs());

        // negatives orthogonal to the anchor
        let orth: Vec<Vec<f64>> = (0..n_neg + trial % 3)
            .map(|_| {
                let mut v = random_unit(dim, &mut rng);
                orthogonalize(&mut v, &unit_anchor);
                normalize_in_place(&mut v);
                v
            })
            .collect();
        let diag = gradient_diagnostics(&unit_anchor, &positive, &orth, false);
        let count = orth.len() as f64;
        let expected = count / (dot(&unit_anchor, &positive).exp() + count);
        identity = identity.max((diag.repulsion_magnitude - expected).abs());
    }

    Ok(TheoryCheckReport {
        batches,
        bound_violations: violations,
        min_margin,
        literal_bound_violations: literal_violations,
        tightness_gap: gap,
        max_fd_error: fd,
        repulsion_identity_max_error: identity,
        softmax_sum_max_error: softmax,
    })
}
