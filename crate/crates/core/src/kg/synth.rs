//! Synthetic paired graphs with planted alignment, semantic clusters and a
//! dense/sparse structural split.
//!
//! Every true pair shares one latent vector per modality. A latent is a
//! cluster center (uniform on the unit sphere, scaled by the separation) plus
//! isotropic intra-cluster noise, living in the first `signal_dim`
//! coordinates of the modality. Each graph observes `latent + N(0, σ²)` on all
//! coordinates, where σ depends on whether the entity sits in the dense or the
//! sparse region. Dense-region entities get extra edges among themselves.

use std::collections::HashSet;

use rand::distributions::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AlignmentMap, MultiModalKg};
use crate::error::{Error, Result};
use crate::matrix::{normalize_in_place, Matrix};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub dim: usize,
    /// Number of leading coordinates that carry the latent signal.
    pub signal_dim: usize,
    pub noise_dense: f64,
    pub noise_sparse: f64,
}

impl ModalitySpec {
    pub fn isotropic(dim: usize, noise: f64) -> Self {
        Self {
            dim,
            signal_dim: dim,
            noise_dense: noise,
            noise_sparse: noise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegreeProfile {
    Uniform,
    PowerLaw { exponent: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_pairs: usize,
    pub visual: ModalitySpec,
    pub attribute: ModalitySpec,
    pub relation: ModalitySpec,
    pub cluster_count: usize,
    pub cluster_separation: f64,
    pub intra_cluster_std: f64,
    pub degree_profile: DegreeProfile,
    pub mean_degree: f64,
    /// Fraction of entities placed in the dense region.
    #[serde(default)]
    pub dense_fraction: f64,
    /// Extra mean degree added among dense-region entities.
    #[serde(default)]
    pub dense_extra_degree: f64,
    /// Per-graph probability of dropping each base edge.
    #[serde(default)]
    pub edge_drop: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_pairs: 200,
            visual: ModalitySpec::isotropic(16, 0.0),
            attribute: ModalitySpec::isotropic(16, 0.0),
            relation: ModalitySpec::isotropic(16, 0.0),
            cluster_count: 3,
            cluster_separation: 1.0,
            intra_cluster_std: 0.3,
            degree_profile: DegreeProfile::Uniform,
            mean_degree: 4.0,
            dense_fraction: 0.0,
            dense_extra_degree: 0.0,
            edge_drop: 0.0,
            rng_seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_pairs;
        if n == 0 {
            return Err(Error::Config("n_pairs must be positive".into()));
        }
        if self.cluster_count == 0 || self.cluster_count > n {
            return Err(Error::Config(format!(
                "cluster_count must be in 1..={n}, got {}",
                self.cluster_count
            )));
        }
        for (name, m) in [
            ("visual", &self.visual),
            ("attribute", &self.attribute),
            ("relation", &self.relation),
        ] {
            if m.dim == 0 || m.signal_dim == 0 || m.signal_dim > m.dim {
                return Err(Error::Config(format!(
                    "{name}: need 0 < signal_dim <= dim, got {} / {}",
                    m.signal_dim, m.dim
                )));
            }
            if !(m.noise_dense >= 0.0 && m.noise_sparse >= 0.0) {
                return Err(Error::Config(format!("{name}: noise must be >= 0")));
            }
        }
        if !(self.intra_cluster_std >= 0.0 && self.cluster_separation >= 0.0) {
            return Err(Error::Config("cluster spread must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.dense_fraction) || self.dense_extra_degree < 0.0 {
            return Err(Error::Config("dense region settings out of range".into()));
        }
        if !(0.0..1.0).contains(&self.edge_drop) {
            return Err(Error::Config("edge_drop must be in [0, 1)".into()));
        }
        if let DegreeProfile::PowerLaw { exponent } = self.degree_profile {
            if exponent <= 1.0 {
                return Err(Error::Config("power-law exponent must exceed 1".into()));
            }
        }
        if !(self.mean_degree >= 0.0) || self.mean_degree >= n as f64 {
            return Err(Error::InfeasibleDegree {
                mean_degree: self.mean_degree,
                n_entities: n,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub kg1: MultiModalKg,
    pub kg2: MultiModalKg,
    pub truth: AlignmentMap,
    /// Planted cluster of each G1 entity.
    pub clusters: Vec<usize>,
    /// Dense-region flag of each G1 entity.
    pub dense: Vec<bool>,
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let n = cfg.n_pairs;
    let mut rng = rng::stream(cfg.rng_seed, rng::ids::SYNTH);

    // balanced cluster membership and region split, both shuffled
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut clusters = vec![0; n];
    for (rank, &e) in order.iter().enumerate() {
        clusters[e] = rank % cfg.cluster_count;
    }
    order.shuffle(&mut rng);
    let n_dense = (cfg.dense_fraction * n as f64).round() as usize;
    let mut dense = vec![false; n];
    for &e in &order[..n_dense] {
        dense[e] = true;
    }

    let specs = [&cfg.visual, &cfg.attribute, &cfg.relation];
    let mut feats1 = Vec::with_capacity(3);
    let mut feats2 = Vec::with_capacity(3);
    for spec in specs {
        let centers: Vec<Vec<f64>> = (0..cfg.cluster_count)
            .map(|_| {
                let mut c: Vec<f64> = (0..spec.signal_dim).map(|_| rng.sample(StandardNormal)).collect();
                normalize_in_place(&mut c);
                c.iter_mut().for_each(|v| *v *= cfg.cluster_separation);
                c
            })
            .collect();
        let mut latent = Matrix::zeros(n, spec.dim);
        for i in 0..n {
            let row = latent.row_mut(i);
            for (k, c) in centers[clusters[i]].iter().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                row[k] = c + cfg.intra_cluster_std * z;
            }
        }
        let observe = |rng: &mut rand_chacha::ChaCha8Rng| {
            let mut m = latent.clone();
            for i in 0..n {
                let sigma = if dense[i] { spec.noise_dense } else { spec.noise_sparse };
                if sigma > 0.0 {
                    for v in m.row_mut(i) {
                        let z: f64 = rng.sample(StandardNormal);
                        *v += sigma * z;
                    }
                }
            }
            m
        };
        feats1.push(observe(&mut rng));
        feats2.push(observe(&mut rng));
    }

    let base = sample_edges(cfg, n, &dense, &mut rng);

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);

    let keep = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<(usize, usize)> {
        base.iter()
            .copied()
            .filter(|_| cfg.edge_drop == 0.0 || rng.gen::<f64>() >= cfg.edge_drop)
            .collect()
    };
    let edges1 = keep(&mut rng);
    let edges2: Vec<(usize, usize)> = keep(&mut rng)
        .into_iter()
        .map(|(u, v)| (perm[u], perm[v]))
        .collect();

    let permute_rows = |m: &Matrix| {
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for i in 0..n {
            out.row_mut(perm[i]).copy_from_slice(m.row(i));
        }
        out
    };
    let mut f1 = feats1.into_iter();
    let kg1 = MultiModalKg::from_edges(
        n,
        &edges1,
        f1.next().unwrap(),
        f1.next().unwrap(),
        f1.next().unwrap(),
    );
    let kg2 = MultiModalKg::from_edges(
        n,
        &edges2,
        permute_rows(&feats2[0]),
        permute_rows(&feats2[1]),
        permute_rows(&feats2[2]),
    );
    let truth = AlignmentMap::new((0..n).map(|i| (i, perm[i])).collect());
    Ok(SynthOutput {
        kg1,
        kg2,
        truth,
        clusters,
        dense,
    })
}

/// Base edges follow the degree profile exactly (`round(n·mean/2)` distinct
/// edges); dense-region edges are added on top.
fn sample_edges(
    cfg: &SynthConfig,
    n: usize,
    dense: &[bool],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    let max_edges = n * (n - 1) / 2;

    let target = ((n as f64 * cfg.mean_degree / 2.0).round() as usize).min(max_edges);
    let weights: Vec<f64> = match cfg.degree_profile {
        DegreeProfile::Uniform => vec![1.0; n],
        DegreeProfile::PowerLaw { exponent } => {
            let mut slots: Vec<usize> = (0..n).collect();
            slots.shuffle(rng);
            let mut w = vec![0.0; n];
            for (rank, &e) in slots.iter().enumerate() {
                w[e] = ((rank + 1) as f64).powf(-1.0 / (exponent - 1.0));
            }
            w
        }
    };
    let pick = WeightedIndex::new(&weights).expect("positive weights");
    let mut attempts = 0usize;
    while edges.len() < target {
        attempts += 1;
        let (u, v) = if attempts <= 50 * target {
            (pick.sample(rng), pick.sample(rng))
        } else {
            (rng.gen_range(0..n), rng.gen_range(0..n))
        };
        push_edge(u, v, &mut seen, &mut edges);
    }

    let members: Vec<usize> = (0..n).filter(|&i| dense[i]).collect();
    if members.len() >= 2 && cfg.dense_extra_degree > 0.0 {
        let k = members.len();
        let existing = edges
            .iter()
            .filter(|&&(u, v)| dense[u] && dense[v])
            .count();
        let room = k * (k - 1) / 2 - existing;
        let extra = ((k as f64 * cfg.dense_extra_degree / 2.0).round() as usize).min(room);
        let goal = edges.len() + extra;
        while edges.len() < goal {
            let u = members[rng.gen_range(0..k)];
            let v = members[rng.gen_range(0..k)];
            push_edge(u, v, &mut seen, &mut edges);
        }
    }
    edges
}

fn push_edge(u: usize, v: usize, seen: &mut HashSet<(usize, usize)>, edges: &mut Vec<(usize, usize)>) {
    if u == v {
        return;
    }
    let key = (u.min(v), u.max(v));
    if seen.insert(key) {
        edges.push(key);
    }
}
