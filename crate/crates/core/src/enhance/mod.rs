//! Stage II: contrastive feature enhancement, global sampling of new seeds
//! and multimodal information correction (MIC).

mod icl;
mod model;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{Modality, MultiModalKg};
use crate::matrix::{dot, Matrix};
use crate::rng;
use crate::sim::{greedy_into, SeedPair, SeedSet, Stage};

pub use icl::{icl_loss, icl_prob};
pub use model::{forward, forward_active, EnhancedFeatures, EnhancerParams, LEAKY_SLOPE};

use icl::icl_loss_grad;
use model::{modality_backward, modality_forward};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Fixed-step gradient descent.
    Sgd,
    /// Adam with the usual (0.9, 0.999, 1e-8) constants.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub tau: f64,
    pub rng_seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 0.01,
            batch_size: 2000,
            hidden_dim: 300,
            tau: 0.1,
            rng_seed: 42,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.tau > 0.0) || self.batch_size == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(format!(
                "train: lr, tau, batch_size and hidden_dim must be positive ({self:?})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EnhancerParams,
    /// Size-weighted mean batch loss of each epoch.
    pub loss_trace: Vec<f64>,
}

impl TrainOutcome {
    /// `epoch,loss` CSV.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (e, l) in self.loss_trace.iter().enumerate() {
            out.push_str(&format!("{e},{l}\n"));
        }
        out
    }
}

fn modality_dims(kg1: &MultiModalKg, kg2: &MultiModalKg) -> Result<[usize; 3]> {
    let mut dims = [0; 3];
    for m in Modality::ALL {
        let (a, b) = (kg1.modality(m).cols(), kg2.modality(m).cols());
        if a != b {
            return Err(Error::DimensionMismatch {
                what: format!("{m} feature dimension across graphs"),
                expected: a,
                found: b,
            });
        }
        dims[m.index()] = a;
    }
    Ok(dims)
}

/// Fresh parameters drawn from the `rng_seed` stream.
pub fn init_params(kg1: &MultiModalKg, kg2: &MultiModalKg, cfg: &TrainConfig) -> Result<EnhancerParams> {
    let dims = modality_dims(kg1, kg2)?;
    let mut r = rng::stream(cfg.rng_seed, rng::ids::INIT_PARAMS);
    Ok(EnhancerParams::init(dims, cfg.hidden_dim, &mut r))
}

/// Summed per-modality contrastive loss over `batch` and its exact gradient.
pub fn loss_and_grad(
    kg1: &MultiModalKg,
    kg2: &MultiModalKg,
    params: &EnhancerParams,
    batch: &[(usize, usize)],
    tau: f64,
) -> (f64, EnhancerParams) {
    loss_and_grad_active(kg1, kg2, params, batch, tau, &Modality::ALL)
}

/// As [`loss_and_grad`], restricted to the `active` modalities.
pub fn loss_and_grad_active(
    kg1: &MultiModalKg,
    kg2: &MultiModalKg,
    params: &EnhancerParams,
    batch: &[(usize, usize)],
    tau: f64,
    active: &[Modality],
) -> (f64, EnhancerParams) {
    let left: Vec<usize> = batch.iter().map(|p| p.0).collect();
    let right: Vec<usize> = batch.iter().map(|p| p.1).collect();
    let mut grads = EnhancerParams::zeros_like(params);
    let mut loss = 0.0;
    for &m in active {
        let p1 = modality_forward(kg1, params, m, &left);
        let p2 = modality_forward(kg2, params, m, &right);
        let (l, g) = icl_loss_grad(&p1.out, &p2.out, tau, true);
        loss += l;
        if let Some(g) = g {
            modality_backward(kg1, params, &p1, &g.d1, &mut grads);
            modality_backward(kg2, params, &p2, &g.d2, &mut grads);
        }
    }
    (loss, grads)
}

/// Loss only; the finite-difference oracle evaluates this.
pub fn batch_loss(
    kg1: &MultiModalKg,
    kg2: &MultiModalKg,
    params: &EnhancerParams,
    batch: &[(usize, usize)],
    tau: f64,
) -> f64 {
    let left: Vec<usize> = batch.iter().map(|p| p.0).collect();
    let right: Vec<usize> = batch.iter().map(|p| p.1).collect();
    Modality::ALL
        .iter()
        .map(|&m| {
            let a = modality_forward(kg1, params, m, &left).out;
            let b = modality_forward(kg2, params, m, &right).out;
            icl_loss_grad(&a, &b, tau, false).0
        })
        .sum()
}

struct AdamState {
    m: EnhancerParams,
    v: EnhancerParams,
    t: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn step(params: &mut EnhancerParams, grads: &EnhancerParams, lr: f64, adam: Option<&mut AdamState>) {
    match adam {
        None => {
            for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                for (pi, gi) in p.iter_mut().zip(g) {
                    *pi -= lr * gi;
                }
            }
        }
        Some(state) => {
            state.t += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(state.t);
            let c2 = 1.0 - ADAM_BETA2.powi(state.t);
            let tensors = params
                .tensors_mut()
                .into_iter()
                .zip(grads.tensors())
                .zip(state.m.tensors_mut())
                .zip(state.v.tensors_mut());
            for (((p, g), m), v) in tensors {
                for i in 0..p.len() {
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Trains the enhancer on `seeds` with all modalities.
pub fn train(kg1: &MultiModalKg, kg2: &MultiModalKg, seeds: &SeedSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_active(kg1, kg2, seeds, cfg, &Modality::ALL)
}

/// Mini-batch training: every epoch reshuffles the seeds (from the
/// `rng_seed` stream) and takes one optimizer step per batch.
pub fn train_active(
    kg1: &MultiModalKg,
    kg2: &MultiModalKg,
    seeds: &SeedSet,
    cfg: &TrainConfig,
    active: &[Modality],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("cannot train the enhancer without seeds".into()));
    }
    let mut params = init_params(kg1, kg2, cfg)?;
    let mut shuffle = rng::stream(cfg.rng_seed, rng::ids::SHUFFLE);
    let mut order: Vec<(usize, usize)> = seeds.iter().map(|p| (p.e1, p.e2)).collect();
    let mut adam = (cfg.optimizer == Optimizer::Adam).then(|| AdamState {
        m: EnhancerParams::zeros_like(&params),
        v: EnhancerParams::zeros_like(&params),
        t: 0,
    });
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = loss_and_grad_active(kg1, kg2, &params, batch, cfg.tau, active);
            total += loss * batch.len() as f64;
            step(&mut params, &grads, cfg.lr, adam.as_mut());
        }
        trace.push(total / order.len() as f64);
    }
    Ok(TrainOutcome {
        params,
        loss_trace: trace,
    })
}

/// Adds up to `n` new one-to-one pairs ranked by cosine of the joint enhanced
/// features, skipping entities already in `existing`.
pub fn global_sample(enh1: &EnhancedFeatures, enh2: &EnhancedFeatures, n: usize, existing: &SeedSet) -> SeedSet {
    let mut out = existing.clone();
    if n == 0 {
        return out;
    }
    let (f1, f2) = (&enh1.joint, &enh2.joint);
    let mut candidates = Vec::new();
    for i in (0..f1.rows()).filter(|&i| !existing.uses_left(i)) {
        for j in (0..f2.rows()).filter(|&j| !existing.uses_right(j)) {
            candidates.push((i, j, dot(f1.row(i), f2.row(j))));
        }
    }
    greedy_into(candidates, n, Stage::S2, &mut out);
    out
}

/// For each seed `k`, `None` when `M_kk` is the strict maximum of row `k` of
/// `M = h₁·h₂ᵀ` (rows gathered in seed order), otherwise the column holding
/// the row maximum.
pub fn mic_check(seeds: &SeedSet, feat1: &Matrix, feat2: &Matrix) -> Vec<Option<usize>> {
    let left: Vec<usize> = seeds.iter().map(|p| p.e1).collect();
    let right: Vec<usize> = seeds.iter().map(|p| p.e2).collect();
    let h1 = feat1.select_rows(&left);
    let h2 = feat2.select_rows(&right);
    (0..seeds.len())
        .map(|k| {
            let row = h1.row(k);
            let diag = dot(row, h2.row(k));
            let mut rival: Option<(usize, f64)> = None;
            for l in (0..seeds.len()).filter(|&l| l != k) {
                let v = dot(row, h2.row(l));
                if v >= diag && rival.is_none_or(|(_, best)| v > best) {
                    rival = Some((l, v));
                }
            }
            rival.map(|(l, _)| l)
        })
        .collect()
}

/// Removes every seed whose diagonal entry is not the strict row maximum;
/// survivors keep their order.
pub fn mic_correct(seeds: &SeedSet, feat1: &Matrix, feat2: &Matrix) -> SeedSet {
    let verdict = mic_check(seeds, feat1, feat2);
    SeedSet::from_pairs(
        seeds
            .iter()
            .zip(&verdict)
            .filter(|(_, v)| v.is_none())
            .map(|(p, _)| *p),
    )
}

/// Pairs `mic_correct` would drop, each with the seed index that beat it.
pub fn mic_removed(seeds: &SeedSet, feat1: &Matrix, feat2: &Matrix) -> Vec<(SeedPair, SeedPair)> {
    let verdict = mic_check(seeds, feat1, feat2);
    seeds
        .iter()
        .zip(verdict)
        .filter_map(|(p, v)| v.map(|l| (*p, seeds.pairs()[l])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{synth_generate, ModalitySpec, SynthConfig};
    use crate::matrix::normalized;

    fn seeds(pairs: &[(usize, usize)]) -> SeedSet {
        SeedSet::from_pairs(pairs.iter().map(|&(a, b)| SeedPair::new(a, b, 1.0, Stage::S1)))
    }

    #[test]
    fn mic_keeps_orthogonal_pairs() {
        let f = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let s = seeds(&[(0, 0), (1, 1), (2, 2)]);
        assert_eq!(mic_correct(&s, &f, &f), s);
        assert!(mic_correct(&SeedSet::new(), &f, &f).is_empty());
    }

    #[test]
    fn mic_drops_pair_whose_row_max_is_elsewhere() {
        // build rows so that M = h1·h2ᵀ = [[.9, .95], [.1, .8]]
        let h2 = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let h1 = Matrix::from_rows(&[[0.9, 0.95], [0.1, 0.8]]);
        let s = seeds(&[(0, 0), (1, 1)]);
        assert_eq!(mic_check(&s, &h1, &h2), vec![Some(1), None]);
        let kept = mic_correct(&s, &h1, &h2);
        assert_eq!(kept.iter().map(|p| (p.e1, p.e2)).collect::<Vec<_>>(), vec![(1, 1)]);
    }

    #[test]
    fn mic_treats_ties_as_failure() {
        let f = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]);
        let s = seeds(&[(0, 0), (1, 1)]);
        assert!(mic_correct(&s, &f, &f).is_empty());
    }

    #[test]
    fn global_sample_edge_cases() {
        let make = |rows: &[[f64; 2]]| {
            let m = Matrix::from_rows(rows).normalized_rows();
            EnhancedFeatures {
                visual: m.clone(),
                attribute: m.clone(),
                relation: m.clone(),
                joint: m,
            }
        };
        let e1 = make(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let e2 = make(&[[1.0, 0.1], [0.1, 1.0], [1.0, 0.9]]);
        let base = seeds(&[(0, 0)]);
        assert_eq!(global_sample(&e1, &e2, 0, &base), base);
        let full = seeds(&[(0, 2), (1, 1), (2, 0)]);
        assert_eq!(global_sample(&e1, &e2, 5, &full), full);

        // sort-and-filter oracle on the free rows/cols {1,2} x {1,2}
        let out = global_sample(&e1, &e2, 2, &base);
        let mut cands = vec![];
        for i in 1..3 {
            for j in 1..3 {
                cands.push((i, j, dot(e1.joint.row(i), e2.joint.row(j))));
            }
        }
        cands.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());
        let first = (cands[0].0, cands[0].1);
        let second = cands
            .iter()
            .find(|c| c.0 != first.0 && c.1 != first.1)
            .map(|c| (c.0, c.1))
            .unwrap();
        let got: Vec<_> = out.iter().map(|p| (p.e1, p.e2)).collect();
        assert_eq!(got, vec![(0, 0), first, second]);
        assert!(out.pairs()[1..].iter().all(|p| p.stage == Stage::S2));
    }

    fn toy_graphs() -> (MultiModalKg, MultiModalKg) {
        let cfg = SynthConfig {
            n_pairs: 12,
            visual: ModalitySpec::isotropic(5, 0.2),
            attribute: ModalitySpec::isotropic(4, 0.2),
            relation: ModalitySpec::isotropic(3, 0.2),
            cluster_count: 2,
            mean_degree: 3.0,
            ..SynthConfig::default()
        };
        let out = synth_generate(&cfg).unwrap();
        (out.kg1, out.kg2)
    }

    #[test]
    fn forward_rows_are_unit_and_isolated_nodes_self_attend() {
        let (mut kg1, kg2) = toy_graphs();
        let cfg = TrainConfig {
            hidden_dim: 6,
            ..TrainConfig::default()
        };
        let params = init_params(&kg1, &kg2, &cfg).unwrap();
        let enh = forward(&kg1, &params);
        for m in [&enh.visual, &enh.attribute, &enh.relation, &enh.joint] {
            for r in m.iter_rows() {
                assert!((crate::matrix::norm(r) - 1.0).abs() < 1e-9);
            }
        }
        // isolate entity 0
        for ns in kg1.adjacency.iter_mut() {
            ns.retain(|&v| v != 0);
        }
        kg1.adjacency[0].clear();
        let enh = forward(&kg1, &params);
        let z: Vec<f64> = params.visual.iter_rows().map(|r| dot(r, kg1.visual.row(0))).collect();
        let expected = normalized(&z);
        for (a, b) in enh.visual.row(0).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_attention_is_uniform() {
        let (kg1, kg2) = toy_graphs();
        let cfg = TrainConfig {
            hidden_dim: 4,
            ..TrainConfig::default()
        };
        let mut params = init_params(&kg1, &kg2, &cfg).unwrap();
        params.attention.iter_mut().for_each(|a| *a = 0.0);
        let enh = forward(&kg1, &params);
        let e = (0..kg1.n_entities()).find(|&e| kg1.degree(e) >= 2).unwrap();
        let mut nodes = vec![e];
        nodes.extend_from_slice(kg1.neighbors(e));
        let mut mean = vec![0.0; 4];
        for &j in &nodes {
            for (r, w) in params.visual.iter_rows().enumerate() {
                mean[r] += dot(w, kg1.visual.row(j)) / nodes.len() as f64;
            }
        }
        let expected = normalized(&mean);
        for (a, b) in enh.visual.row(e).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_seed_batch_has_flat_loss() {
        let (kg1, kg2) = toy_graphs();
        let cfg = TrainConfig {
            hidden_dim: 3,
            ..TrainConfig::default()
        };
        let params = init_params(&kg1, &kg2, &cfg).unwrap();
        let (loss, grads) = loss_and_grad(&kg1, &kg2, &params, &[(0, 0)], 0.1);
        assert_eq!(loss, 0.0);
        assert!(grads.tensors().iter().all(|t| t.iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn zero_epochs_returns_initial_params_and_training_is_deterministic() {
        let (kg1, kg2) = toy_graphs();
        let s = seeds(&[(0, 0), (1, 1), (2, 2), (3, 3)]);
        let cfg = TrainConfig {
            hidden_dim: 4,
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(&kg1, &kg2, &s, &cfg).unwrap();
        assert_eq!(out.params, init_params(&kg1, &kg2, &cfg).unwrap());
        assert!(out.loss_trace.is_empty());

        let cfg = TrainConfig { epochs: 5, batch_size: 3, ..cfg };
        let a = train(&kg1, &kg2, &s, &cfg).unwrap();
        let b = train(&kg1, &kg2, &s, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.loss_trace, b.loss_trace);
        assert!(train(&kg1, &kg2, &SeedSet::new(), &cfg).is_err());
    }
}
