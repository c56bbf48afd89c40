//! Seed-set quality (precision, graph coverage) and alignment ranking
//! (Hits@n, MRR).

use serde::{Deserialize, Serialize};

use crate::kg::{AlignmentMap, MultiModalKg};
use crate::matrix::{dot, Matrix};
use crate::sim::SeedSet;

/// Upper end of the displayed coverage value.
pub const COVERAGE_DISPLAY_MAX: f64 = 1.5;

/// Fraction of seed pairs found in `truth`; 0 for an empty set.
pub fn seed_precision(seeds: &SeedSet, truth: &AlignmentMap) -> f64 {
    if seeds.is_empty() {
        return 0.0;
    }
    correct_count(seeds, truth) as f64 / seeds.len() as f64
}

fn correct_count(seeds: &SeedSet, truth: &AlignmentMap) -> usize {
    seeds.iter().filter(|p| truth.contains(p.e1, p.e2)).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// `S`, number of seed pairs.
    pub seeds: usize,
    /// `S_t`, pairs present in the ground truth; absent without truth.
    pub correct: Option<usize>,
    pub precision: Option<f64>,
    /// Seed entities (both graphs) outside the bottom degree quartile.
    pub s_a: usize,
    /// Seed entities (both graphs) with degree strictly below the first quartile.
    pub s_f: usize,
    /// Edges incident to a seed entity, summed over both graphs.
    pub edge: usize,
    pub g_edge: usize,
    pub g_n: f64,
    /// `S_a/(2·G_n) + Edge/(2·G_Edge) + S_f/G_n`
    pub coverage_raw: f64,
    /// `coverage_raw` clamped to `[0, 1.5]`.
    pub coverage: f64,
}

/// First quartile with linear interpolation between order statistics.
pub fn first_quartile(values: &[usize]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let pos = 0.25 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] as f64 + (pos - lo as f64) * (v[hi] as f64 - v[lo] as f64)
}

struct SideCoverage {
    aggregated: usize,
    scattered: usize,
    edges: usize,
}

fn side_coverage(kg: &MultiModalKg, entities: impl Iterator<Item = usize>) -> SideCoverage {
    let degrees: Vec<usize> = (0..kg.n_entities()).map(|e| kg.degree(e)).collect();
    let q1 = first_quartile(&degrees);
    let mut in_seed = vec![false; kg.n_entities()];
    let (mut aggregated, mut scattered) = (0, 0);
    for e in entities {
        in_seed[e] = true;
        if (degrees[e] as f64) < q1 {
            scattered += 1;
        } else {
            aggregated += 1;
        }
    }
    let edges = kg.edges().filter(|&(u, v)| in_seed[u] || in_seed[v]).count();
    SideCoverage {
        aggregated,
        scattered,
        edges,
    }
}

/// Coverage components of a seed set; precision fields are left empty.
pub fn graph_coverage(seeds: &SeedSet, kg1: &MultiModalKg, kg2: &MultiModalKg) -> QualityReport {
    let a = side_coverage(kg1, seeds.iter().map(|p| p.e1));
    let b = side_coverage(kg2, seeds.iter().map(|p| p.e2));
    let (n1, n2) = (kg1.n_entities(), kg2.n_entities());
    let g_n = if n1 == n2 { n1 as f64 } else { (n1 + n2) as f64 / 2.0 };
    let s_a = a.aggregated + b.aggregated;
    let s_f = a.scattered + b.scattered;
    let edge = a.edges + b.edges;
    let g_edge = kg1.edge_count() + kg2.edge_count();
    let ratio = |x: f64, y: f64| if y > 0.0 { x / y } else { 0.0 };
    let raw = ratio(s_a as f64, 2.0 * g_n) + ratio(edge as f64, 2.0 * g_edge as f64) + ratio(s_f as f64, g_n);
    QualityReport {
        seeds: seeds.len(),
        correct: None,
        precision: None,
        s_a,
        s_f,
        edge,
        g_edge,
        g_n,
        coverage_raw: raw,
        coverage: raw.clamp(0.0, COVERAGE_DISPLAY_MAX),
    }
}

/// Coverage plus, when `truth` is given, precision.
pub fn quality_report(
    seeds: &SeedSet,
    kg1: &MultiModalKg,
    kg2: &MultiModalKg,
    truth: Option<&AlignmentMap>,
) -> QualityReport {
    let mut r = graph_coverage(seeds, kg1, kg2);
    if let Some(t) = truth {
        r.correct = Some(correct_count(seeds, t));
        r.precision = Some(seed_precision(seeds, t));
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub hits1: f64,
    pub hits10: f64,
    pub mrr: f64,
    /// 1-based rank of the true target of each test pair.
    pub ranks: Vec<usize>,
}

impl RankingReport {
    pub fn from_ranks(ranks: Vec<usize>) -> Self {
        let n = ranks.len().max(1) as f64;
        let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Self {
            hits1: hits(1),
            hits10: hits(10),
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            ranks,
        }
    }

    pub fn hits_at(&self, k: usize) -> f64 {
        if self.ranks.is_empty() {
            return 0.0;
        }
        self.ranks.iter().filter(|&&r| r <= k).count() as f64 / self.ranks.len() as f64
    }
}

/// Rank of `target` among the entries of `scores`, descending, ties to the
/// lower index.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < target))
        .count()
}

/// Ranks every `G2` entity by dot product with `f1[i]` for each test pair
/// `(i, j)` and reports where `j` lands. Rows are expected to be unit-norm.
pub fn rank_alignment(f1: &Matrix, f2: &Matrix, test: &AlignmentMap) -> RankingReport {
    let mut scores = vec![0.0; f2.rows()];
    let ranks = test
        .pairs
        .iter()
        .map(|&(i, j)| {
            let q = f1.row(i);
            for (k, s) in scores.iter_mut().enumerate() {
                *s = dot(q, f2.row(k));
            }
            rank_of(&scores, j)
        })
        .collect();
    RankingReport::from_ranks(ranks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{SeedPair, Stage};

    fn seeds(pairs: &[(usize, usize)]) -> SeedSet {
        SeedSet::from_pairs(pairs.iter().map(|&(a, b)| SeedPair::new(a, b, 1.0, Stage::S1)))
    }

    #[test]
    fn precision_cases() {
        let truth = AlignmentMap::new(vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(seed_precision(&seeds(&[(0, 0), (1, 1)]), &truth), 1.0);
        assert!((seed_precision(&seeds(&[(0, 0), (1, 1), (2, 3)]), &truth) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(seed_precision(&SeedSet::new(), &truth), 0.0);
    }

    #[test]
    fn quartile_interpolates() {
        assert_eq!(first_quartile(&[1, 2, 2, 1]), 1.0);
        // positions 0..4, q at 1.0
        assert_eq!(first_quartile(&[5, 1, 4, 2, 3]), 2.0);
        // pos 0.75 between 1 and 5
        assert_eq!(first_quartile(&[1, 5, 9, 9]), 4.0);
    }

    #[test]
    fn rank_ties_go_to_lower_index() {
        assert_eq!(rank_of(&[0.5, 0.5, 0.9], 1), 3);
        assert_eq!(rank_of(&[0.5, 0.5, 0.9], 0), 2);
        assert_eq!(rank_of(&[0.1], 0), 1);
    }

    #[test]
    fn single_rank_two() {
        let r = RankingReport::from_ranks(vec![2]);
        assert_eq!((r.hits1, r.hits10, r.mrr), (0.0, 1.0, 0.5));
    }
}
