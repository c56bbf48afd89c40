//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashSet;
use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use psqe::cluster::apportion;
use psqe::enhance::{batch_loss, init_params, loss_and_grad, mic_correct, TrainConfig};
use psqe::kg::MultiModalKg;
use psqe::matrix::{dot, normalized, Matrix};
use psqe::pipeline::{load_dataset, presets, run_on, run_pipeline, type_comparison, DropModality, PipelineConfig};
use psqe::rng;
use psqe::sim::{SeedPair, SeedSet, Stage};
use psqe::theory::{anchor_fd_error, gradient_diagnostics, relative_error, theory_check, FD_STEP};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

const BOUND_MARGIN: f64 = -1e-9;
const TIGHTNESS: f64 = 1e-9;
const FD_TOL: f64 = 1e-4;
const IDENTITY_TOL: f64 = 1e-12;
const SEEDS: [u64; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn unit(dim: usize, r: &mut impl Rng) -> Vec<f64> {
    normalized(&(0..dim).map(|_| r.sample(StandardNormal)).collect::<Vec<f64>>())
}

fn ac1_bound() -> Outcome {
    let start = Instant::now();
    let r = theory_check(1000, 42).expect("theory check runs");
    let secs = start.elapsed().as_secs_f64();
    let pass = r.bound_violations == 0 && r.min_margin >= BOUND_MARGIN && r.tightness_gap <= TIGHTNESS && secs < 10.0;
    outcome(
        pass,
        format!(
            "{}/{} batches below bound, min margin {:.3e} (tol {BOUND_MARGIN:e}); tightness gap {:.3e} (tol {TIGHTNESS:e}); {secs:.2}s (limit 10s)",
            r.bound_violations, r.batches, r.min_margin, r.tightness_gap
        ),
    )
}

fn toy_graph(r: &mut impl Rng) -> MultiModalKg {
    let mut mat = || Matrix::from_vec(2, 2, (0..4).map(|_| r.gen_range(-1.0..1.0)).collect());
    let (v, a, rel) = (mat(), mat(), mat());
    MultiModalKg::from_edges(2, &[(0, 1)], v, a, rel)
}

fn ac2_gradients() -> Outcome {
    let start = Instant::now();
    let mut r = rng::stream(2, 0);
    let (mut plain, mut projected) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let dim = r.gen_range(3..=8);
        let scale = r.gen_range(0.5..3.0);
        let raw: Vec<f64> = unit(dim, &mut r).iter().map(|v| v * scale).collect();
        let positive = unit(dim, &mut r);
        let negatives: Vec<Vec<f64>> = (0..r.gen_range(1..=6)).map(|_| unit(dim, &mut r)).collect();
        plain = plain.max(anchor_fd_error(&normalized(&raw), &positive, &negatives, false));
        projected = projected.max(anchor_fd_error(&raw, &positive, &negatives, true));
    }

    let mut stage2 = 0.0f64;
    for trial in 0..100u64 {
        let kg1 = toy_graph(&mut r);
        let kg2 = toy_graph(&mut r);
        let cfg = TrainConfig { hidden_dim: 2, rng_seed: trial, ..TrainConfig::default() };
        let params = init_params(&kg1, &kg2, &cfg).expect("params");
        let batch = [(0, 0), (1, 1)];
        let tau = [0.1, 0.5, 1.0][trial as usize % 3];
        let (_, grads) = loss_and_grad(&kg1, &kg2, &params, &batch, tau);
        for t in 0..4 {
            for i in 0..params.tensors()[t].len() {
                let mut plus = params.clone();
                plus.tensors_mut()[t][i] += FD_STEP;
                let mut minus = params.clone();
                minus.tensors_mut()[t][i] -= FD_STEP;
                let fd = (batch_loss(&kg1, &kg2, &plus, &batch, tau) - batch_loss(&kg1, &kg2, &minus, &batch, tau))
                    / (2.0 * FD_STEP);
                stage2 = stage2.max(relative_error(grads.tensors()[t][i], fd));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = plain <= FD_TOL && projected <= FD_TOL && stage2 <= FD_TOL && secs < 30.0;
    outcome(
        pass,
        format!(
            "max rel error: anchor {plain:.2e}, with projector {projected:.2e} (100 each), two-entity graphs {stage2:.2e} (100); tol {FD_TOL:e}; {secs:.2}s (limit 30s)"
        ),
    )
}

fn ac3_repulsion_identity() -> Outcome {
    let mut r = rng::stream(3, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let dim = r.gen_range(4..=16);
        let n = r.gen_range(1..dim);
        let anchor = unit(dim, &mut r);
        let positive = unit(dim, &mut r);
        let negatives: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut v = unit(dim, &mut r);
                let d = dot(&v, &anchor);
                v.iter_mut().zip(&anchor).for_each(|(x, a)| *x -= d * a);
                normalized(&v)
            })
            .collect();
        let p = gradient_diagnostics(&anchor, &positive, &negatives, false).p_neg;
        let lhs: f64 = p.iter().map(|x| x.abs()).sum();
        let rhs = n as f64 / (dot(&anchor, &positive).exp() + n as f64);
        worst = worst.max((lhs - rhs).abs());
    }
    outcome(worst <= IDENTITY_TOL, format!("max |lhs - rhs| {worst:.2e} over 100 trials (tol {IDENTITY_TOL:e})"))
}

fn ac4_mic() -> Outcome {
    let mut r = rng::stream(4, 0);
    let mut failures = 0;
    let mut removed = 0;
    for trial in 0..1000 {
        let n = r.gen_range(2..40);
        let dim = r.gen_range(2..9);
        let rows = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> { (0..n).map(|_| unit(dim, r)).collect() };
        let mut a = rows(&mut r);
        let mut b = rows(&mut r);
        let mut right: Vec<usize> = (0..n).collect();
        right.shuffle(&mut r);
        let k = r.gen_range(1..=n);
        let pairs: Vec<(usize, usize)> = (0..k).map(|i| (i, right[i])).collect();
        if trial % 2 == 0 && k >= 2 {
            // confusables: copy or nearly copy another seed's features
            for _ in 0..r.gen_range(1..=k / 2 + 1) {
                let (x, y) = (r.gen_range(0..k), r.gen_range(0..k));
                if x == y {
                    continue;
                }
                let eps: f64 = if r.gen_bool(0.5) { 0.0 } else { 1e-3 };
                let noise = unit(dim, &mut r);
                if r.gen_bool(0.5) {
                    a[pairs[x].0] = normalized(&a[pairs[y].0].iter().zip(&noise).map(|(u, z)| u + eps * z).collect::<Vec<_>>());
                } else {
                    b[pairs[x].1] = normalized(&b[pairs[y].1].iter().zip(&noise).map(|(u, z)| u + eps * z).collect::<Vec<_>>());
                }
            }
        }
        let f1 = Matrix::from_rows(&a);
        let f2 = Matrix::from_rows(&b);
        let seeds = SeedSet::from_pairs(pairs.iter().map(|&(i, j)| SeedPair::new(i, j, 0.0, Stage::S2)));
        let kept = mic_correct(&seeds, &f1, &f2);
        removed += seeds.len() - kept.len();
        let kp = kept.pairs();
        let ok = kp.iter().enumerate().all(|(x, p)| {
            let diag = dot(f1.row(p.e1), f2.row(p.e2));
            kp.iter().enumerate().all(|(y, q)| x == y || dot(f1.row(p.e1), f2.row(q.e2)) < diag)
        });
        failures += usize::from(!ok);
    }
    outcome(
        failures == 0,
        format!("{failures}/1000 sets with a non-strict surviving diagonal ({removed} pairs removed in total; exact)"),
    )
}

fn one_to_one(s: &SeedSet) -> bool {
    let mut left = HashSet::new();
    let mut right = HashSet::new();
    s.iter().all(|p| left.insert(p.e1) && right.insert(p.e2))
}

fn ac5_one_to_one() -> Outcome {
    let mut checked = 0;
    let mut bad = 0;
    for name in presets::NAMES {
        let base = presets::get(name).expect("preset");
        let variants = [
            |c: &mut PipelineConfig| c.eval.enabled = false,
            |c: &mut PipelineConfig| c.ablations.skip_mic = true,
            |c: &mut PipelineConfig| c.warm_start_uvp = true,
            |c: &mut PipelineConfig| c.ablations.skip_stage2 = true,
        ];
        for v in variants {
            let mut cfg = base.clone();
            cfg.eval.enabled = false;
            v(&mut cfg);
            let out = run_pipeline(&cfg).expect("pipeline runs");
            for s in [&out.s0, &out.s1, &out.s2, &out.s3] {
                checked += 1;
                bad += usize::from(!one_to_one(s));
            }
        }
    }
    outcome(bad == 0, format!("{bad}/{checked} stage seed sets repeat an entity (both presets, 4 variants each; exact)"))
}

fn ac6_quotas() -> Outcome {
    let mut r = rng::stream(6, 0);
    let mut mismatches = 0;
    let mut sum_errors = 0;
    for _ in 0..200 {
        let k = r.gen_range(1..10);
        let sizes: Vec<usize> = (0..k).map(|_| r.gen_range(1..500)).collect();
        let total: usize = sizes.iter().sum();
        let n = r.gen_range(0..=total);
        let got = apportion(&sizes, n);
        // floor shares, then one extra each to the largest clusters, lower id first on ties
        let mut want: Vec<usize> = sizes.iter().map(|&s| s * n / total).collect();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&j| (std::cmp::Reverse(sizes[j]), j));
        let extra = n - want.iter().sum::<usize>();
        for &j in order.iter().take(extra) {
            want[j] += 1;
        }
        mismatches += usize::from(got != want);
        sum_errors += usize::from(got.iter().sum::<usize>() != n);
    }
    outcome(
        mismatches == 0 && sum_errors == 0,
        format!("{mismatches}/200 vectors differ from the oracle, {sum_errors}/200 with sum != n (exact)"),
    )
}

fn ac7_zero_noise() -> Outcome {
    let start = Instant::now();
    let out = run_pipeline(&presets::zero_noise()).expect("pipeline runs");
    let secs = start.elapsed().as_secs_f64();
    let s3 = &out.record.stages[3].quality;
    let precision = s3.precision.unwrap_or(0.0);
    let hits1 = out.record.ranking.as_ref().map_or(0.0, |r| r.hits1);
    let pass = precision == 1.0 && out.s3.len() >= out.s1.len() && hits1 == 1.0 && secs < 120.0;
    outcome(
        pass,
        format!(
            "final precision {precision} (need 1.0), |S1| {} |S3| {}, Hits@1 {hits1} (need 1.0); {secs:.1}s (limit 120s)",
            out.s1.len(),
            out.s3.len()
        ),
    )
}

fn ac8_type_ordering() -> Outcome {
    let start = Instant::now();
    let base = presets::imbalanced();
    let (mut precision, mut hits, mut coverage) = (0, 0, 0);
    for seed in SEEDS {
        let rows = type_comparison(&PipelineConfig { rng_seed: seed, ..base.clone() }).expect("comparison runs");
        let (i, ii, iii) = (&rows[0], &rows[1], &rows[2]);
        precision += usize::from(ii.precision > i.precision);
        hits += usize::from(iii.hits1 >= ii.hits1);
        coverage += usize::from(iii.coverage > ii.coverage);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = precision >= 8 && hits >= 8 && coverage == 10 && secs < 600.0;
    outcome(
        pass,
        format!(
            "precision II>I {precision}/10 (need 8), Hits@1 III>=II {hits}/10 (need 8), coverage III>II {coverage}/10 (need 10); {secs:.1}s (limit 600s)"
        ),
    )
}

fn ac9_ablations() -> Outcome {
    let start = Instant::now();
    let base = presets::imbalanced();
    let (mut visual, mut mic) = (0, 0);
    for seed in SEEDS {
        let cfg = PipelineConfig { rng_seed: seed, ..base.clone() };
        let data = load_dataset(&cfg).expect("data");
        let hits = |d: DropModality| {
            let mut c = cfg.clone();
            c.ablations.drop_modality = d;
            run_on(&c, &data).expect("run").record.ranking.expect("ranking").hits1
        };
        let (v, a, r) = (hits(DropModality::Visual), hits(DropModality::Attr), hits(DropModality::Rel));
        visual += usize::from(v < a.min(r));

        let mut quiet = cfg.clone();
        quiet.eval.enabled = false;
        let with = run_on(&quiet, &data).expect("run").record.stages[3].quality.precision.unwrap_or(0.0);
        quiet.ablations.skip_mic = true;
        let without = run_on(&quiet, &data).expect("run").record.stages[3].quality.precision.unwrap_or(0.0);
        mic += usize::from(without < with);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        visual >= 8 && mic >= 8,
        format!("dropping visual hurts Hits@1 most {visual}/10 (need 8), skipping correction lowers precision {mic}/10 (need 8); {secs:.1}s"),
    )
}

fn ac10_determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = PipelineConfig { rng_seed: 42, ..presets::imbalanced() };
    for name in ["a", "b"] {
        run_pipeline(&cfg).expect("run").write(&dir.path().join(name)).expect("write");
    }
    let files = ["seeds_s0.txt", "seeds_s1.txt", "seeds_s2.txt", "seeds_s3.txt", "record.json", "loss.csv", "expansion.csv"];
    let differ: Vec<&str> = files
        .into_iter()
        .filter(|f| fs::read(dir.path().join("a").join(f)).ok() != fs::read(dir.path().join("b").join(f)).ok())
        .collect();
    outcome(differ.is_empty(), format!("{} of {} output files differ between two runs {:?}", differ.len(), files.len(), differ))
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, fn() -> Outcome); 10] = [
        ("AC1", "contrastive loss lower bound", ac1_bound),
        ("AC2", "gradients vs finite differences", ac2_gradients),
        ("AC3", "orthogonal-negative repulsion identity", ac3_repulsion_identity),
        ("AC4", "correction leaves strict diagonal maxima", ac4_mic),
        ("AC5", "one-to-one seed sets", ac5_one_to_one),
        ("AC6", "quota apportionment", ac6_quotas),
        ("AC7", "zero-noise end to end", ac7_zero_noise),
        ("AC8", "seed type ordering", ac8_type_ordering),
        ("AC9", "ablation directions", ac9_ablations),
        ("AC10", "determinism", ac10_determinism),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        let o = f();
        failed += usize::from(!o.pass);
        println!("{id:<5} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {}/10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
