use psqe::matrix::{dot, normalized, Matrix};
use psqe::rng;
use psqe::theory::{
    anchor_fd_error, analytic_icl_gradient, decompose_terms, equal_dot_batches, gradient_diagnostics,
    icl_lower_bound, repulsion_skew_experiment, theory_check, unidirectional_loss, SkewConfig,
};
use rand::Rng;
use rand_distr::StandardNormal;

fn unit(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    normalized(&v)
}

fn batch(b: usize, dim: usize, rng: &mut impl Rng) -> (Matrix, Matrix) {
    let h1: Vec<Vec<f64>> = (0..b).map(|_| unit(dim, rng)).collect();
    let h2: Vec<Vec<f64>> = (0..b).map(|_| unit(dim, rng)).collect();
    (Matrix::from_rows(&h1), Matrix::from_rows(&h2))
}

#[test]
fn random_batches_never_violate_the_bound() {
    let mut r = rng::stream(11, 0);
    for _ in 0..1000 {
        let b = r.gen_range(2..=64);
        let dim = r.gen_range(4..=64);
        let (h1, h2) = batch(b, dim, &mut r);
        let rep = icl_lower_bound(&h1, &h2).unwrap();
        assert!(rep.margin >= -1e-9, "margin {} at b={b} dim={dim}", rep.margin);
        assert_eq!(rep.d, b - 1);
    }
}

#[test]
fn equal_dot_configurations_are_tight() {
    for (h1, h2) in equal_dot_batches(3) {
        let rep = icl_lower_bound(&h1, &h2).unwrap();
        assert!((rep.loss - rep.bound).abs() <= 1e-9, "gap {}", rep.loss - rep.bound);
    }
}

#[test]
fn loss_matches_exponential_sum_loop() {
    let mut r = rng::stream(12, 0);
    let (h1, h2) = batch(5, 6, &mut r);
    let mut oracle = 0.0;
    for i in 0..5 {
        let num = dot(h1.row(i), h2.row(i)).exp();
        let den: f64 = (0..5).map(|j| dot(h1.row(i), h2.row(j)).exp()).sum();
        oracle -= (num / den).ln();
    }
    assert!((unidirectional_loss(&h1, &h2) - oracle).abs() < 1e-12);
}

#[test]
fn terms_match_loop_oracle() {
    let mut r = rng::stream(13, 0);
    let (h1, h2) = batch(7, 5, &mut r);
    let t = decompose_terms(&h1, &h2).unwrap();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    for i in 0..7 {
        let att = 0.5 * dist(h1.row(i), h2.row(i));
        let mut rep = 0.0;
        for j in 0..7 {
            if j != i {
                rep += dist(h1.row(i), h2.row(j));
            }
        }
        rep /= 2.0 * 6.0;
        assert!((t.attraction[i] - att).abs() < 1e-12);
        assert!((t.repulsion[i] - rep).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&t.attraction[i]) && (0.0..=1.0).contains(&t.repulsion[i]));
    }
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut r = rng::stream(14, 0);
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let dim = 4;
        let negs: Vec<Vec<f64>> = (0..r.gen_range(1..6)).map(|_| unit(dim, &mut r)).collect();
        let pos = unit(dim, &mut r);
        let normalize = trial % 2 == 1;
        let anchor: Vec<f64> = if normalize {
            unit(dim, &mut r).iter().map(|v| v * r.gen_range(0.3..3.0)).collect()
        } else {
            unit(dim, &mut r)
        };
        worst = worst.max(anchor_fd_error(&anchor, &pos, &negs, normalize));
    }
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn gradient_cancels_when_negative_equals_positive() {
    let a = normalized(&[0.3, -0.2, 0.9, 0.1]);
    let p = normalized(&[1.0, 1.0, 0.0, -1.0]);
    let d = gradient_diagnostics(&a, &p, &[p.clone()], false);
    assert!((d.p_pos - 0.5).abs() < 1e-15 && (d.p_neg[0] - 0.5).abs() < 1e-15);
    assert!(d.gradient.iter().all(|g| g.abs() < 1e-15));
    assert!(analytic_icl_gradient(&a, &p, &[], true).iter().all(|g| g.abs() < 1e-15));
}

#[test]
fn softmax_weights_sum_to_one() {
    let mut r = rng::stream(15, 0);
    for _ in 0..100 {
        let negs: Vec<Vec<f64>> = (0..r.gen_range(0..10)).map(|_| unit(8, &mut r)).collect();
        let d = gradient_diagnostics(&unit(8, &mut r), &unit(8, &mut r), &negs, false);
        assert!((d.p_pos + d.p_neg.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn repulsion_identity_for_orthogonal_negatives() {
    let mut r = rng::stream(16, 0);
    for _ in 0..100 {
        let dim = 12;
        let count = r.gen_range(1..8);
        let anchor = unit(dim, &mut r);
        let positive = unit(dim, &mut r);
        let negs: Vec<Vec<f64>> = (0..count)
            .map(|_| {
                let mut v = unit(dim, &mut r);
                let d = dot(&v, &anchor);
                v.iter_mut().zip(&anchor).for_each(|(x, a)| *x -= d * a);
                normalized(&v)
            })
            .collect();
        let d = gradient_diagnostics(&anchor, &positive, &negs, false);
        let n = count as f64;
        let expected = n / (dot(&anchor, &positive).exp() + n);
        assert!((d.repulsion_magnitude - expected).abs() < 1e-12);
    }
}

#[test]
fn dense_group_dominates_repulsion() {
    let cfg = SkewConfig {
        dense_count: 9,
        sparse_count: 1,
        dense_dot: 0.9,
        sparse_dot: 0.0,
        dim: 64,
    };
    for seed in 0..100 {
        let r = repulsion_skew_experiment(&cfg, seed);
        assert!(r.dense_contribution > r.sparse_contribution, "seed {seed}: {r:?}");
    }
}

#[test]
fn equal_groups_contribute_equally_on_average() {
    let cfg = SkewConfig {
        dense_count: 5,
        sparse_count: 5,
        dense_dot: 0.5,
        sparse_dot: 0.5,
        dim: 64,
    };
    let (mut a, mut b) = (0.0, 0.0);
    for seed in 0..100 {
        let r = repulsion_skew_experiment(&cfg, seed);
        a += r.dense_contribution;
        b += r.sparse_contribution;
    }
    let ratio = a / b;
    assert!((0.8..=1.25).contains(&ratio), "ratio {ratio}");
}

#[test]
fn theory_check_reports_clean_run() {
    let rep = theory_check(200, 42).unwrap();
    assert_eq!(rep.bound_violations, 0);
    assert!(rep.tightness_gap <= 1e-9);
    assert!(rep.max_fd_error <= 1e-4);
    assert!(rep.repulsion_identity_max_error <= 1e-12);
    assert!(rep.softmax_sum_max_error <= 1e-12);
}
