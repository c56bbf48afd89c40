//! Cross-graph similarity, weighted multimodal fusion and greedy one-to-one
//! seed selection.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{Modality, MultiModalKg};
use crate::matrix::{dot, norm, Matrix};

/// `|E₁| × |E₂|` similarity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix(pub Matrix);

impl SimMatrix {
    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }
}

fn row_norms(m: &Matrix, name: &str) -> Result<Vec<f64>> {
    m.iter_rows()
        .enumerate()
        .map(|(row, r)| {
            let n = norm(r);
            if n > 0.0 && n.is_finite() {
                Ok(n)
            } else {
                Err(Error::ZeroNormRow {
                    matrix: name.to_string(),
                    row,
                })
            }
        })
        .collect()
}

pub fn cosine_sim_matrix(a: &Matrix, b: &Matrix) -> Result<SimMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            what: "feature dimension of the two graphs".into(),
            expected: a.cols(),
            found: b.cols(),
        });
    }
    let na = row_norms(a, "left")?;
    let nb = row_norms(b, "right")?;
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ai = a.row(i);
        let dst = out.row_mut(i);
        for (j, d) in dst.iter_mut().enumerate() {
            *d = dot(ai, b.row(j)) / (na[i] * nb[j]);
        }
    }
    Ok(SimMatrix(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityWeights {
    pub visual: f64,
    pub attribute: f64,
    pub relation: f64,
}

impl Default for ModalityWeights {
    fn default() -> Self {
        Self {
            visual: 0.8,
            attribute: 0.1,
            relation: 0.1,
        }
    }
}

impl ModalityWeights {
    pub const VISUAL_ONLY: ModalityWeights = ModalityWeights {
        visual: 1.0,
        attribute: 0.0,
        relation: 0.0,
    };

    pub fn get(&self, m: Modality) -> f64 {
        match m {
            Modality::Visual => self.visual,
            Modality::Attribute => self.attribute,
            Modality::Relation => self.relation,
        }
    }

    /// Same weights with one modality zeroed.
    pub fn without(mut self, m: Modality) -> Self {
        match m {
            Modality::Visual => self.visual = 0.0,
            Modality::Attribute => self.attribute = 0.0,
            Modality::Relation => self.relation = 0.0,
        }
        self
    }

    /// Weights rescaled to sum to one.
    pub fn normalized(&self) -> Result<Self> {
        let ws = [self.visual, self.attribute, self.relation];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("modality weights must be finite and >= 0: {ws:?}")));
        }
        let total: f64 = ws.iter().sum();
        if total <= 0.0 {
            return Err(Error::Config("at least one modality weight must be positive".into()));
        }
        Ok(Self {
            visual: self.visual / total,
            attribute: self.attribute / total,
            relation: self.relation / total,
        })
    }

    pub fn active(&self) -> Vec<Modality> {
        Modality::ALL.into_iter().filter(|&m| self.get(m) > 0.0).collect()
    }
}

/// `Σ_m w_m · cos_m` with weights normalized to sum one.
pub fn fused_sim(kg1: &MultiModalKg, kg2: &MultiModalKg, w: &ModalityWeights) -> Result<SimMatrix> {
    let w = w.normalized()?;
    let mut acc = Matrix::zeros(kg1.n_entities(), kg2.n_entities());
    for m in w.active() {
        let mut s = cosine_sim_matrix(kg1.modality(m), kg2.modality(m))
            .map_err(|e| e.in_stage(&format!("{m} similarity")))?
            .0;
        s.scale(w.get(m));
        acc.add_assign(&s);
    }
    Ok(SimMatrix(acc))
}

/// Unit-norm fused entity features: each active modality row is L2-normalized
/// and scaled by `√w_m`, then the blocks are concatenated. Dot products of
/// these rows across graphs equal [`fused_sim`] entries.
pub fn fused_features(kg: &MultiModalKg, w: &ModalityWeights) -> Result<Matrix> {
    let w = w.normalized()?;
    let mut blocks = Vec::new();
    for m in w.active() {
        let mat = kg.modality(m);
        let norms = row_norms(mat, m.name())?;
        let mut block = mat.clone();
        let scale = w.get(m).sqrt();
        for (i, n) in norms.into_iter().enumerate() {
            block.row_mut(i).iter_mut().for_each(|v| *v *= scale / n);
        }
        blocks.push(block);
    }
    let refs: Vec<&Matrix> = blocks.iter().collect();
    Ok(Matrix::hconcat(&refs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "UVP")]
    Uvp,
    S1,
    S2,
    S3,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Uvp => "UVP",
            Stage::S1 => "S1",
            Stage::S2 => "S2",
            Stage::S3 => "S3",
        })
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "UVP" => Ok(Stage::Uvp),
            "S1" => Ok(Stage::S1),
            "S2" => Ok(Stage::S2),
            "S3" => Ok(Stage::S3),
            other => Err(format!("unknown stage {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedPair {
    pub e1: usize,
    pub e2: usize,
    pub score: f64,
    pub stage: Stage,
}

impl SeedPair {
    pub fn new(e1: usize, e2: usize, score: f64, stage: Stage) -> Self {
        Self { e1, e2, score, stage }
    }
}

/// Ordered pseudo-seed pairs under a one-to-one constraint.
#[derive(Debug, Clone, Default)]
pub struct SeedSet {
    pairs: Vec<SeedPair>,
    used1: HashSet<usize>,
    used2: HashSet<usize>,
}

impl PartialEq for SeedSet {
    fn eq(&self, other: &Self) -> bool {
        self.pairs == other.pairs
    }
}

impl SeedSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set from pairs, skipping any that violate one-to-one.
    pub fn from_pairs(pairs: impl IntoIterator<Item = SeedPair>) -> Self {
        let mut s = Self::new();
        s.extend(pairs);
        s
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[SeedPair] {
        &self.pairs
    }

    pub fn iter(&self) -> impl Iterator<Item = &SeedPair> {
        self.pairs.iter()
    }

    pub fn uses_left(&self, e1: usize) -> bool {
        self.used1.contains(&e1)
    }

    pub fn uses_right(&self, e2: usize) -> bool {
        self.used2.contains(&e2)
    }

    pub fn contains_pair(&self, e1: usize, e2: usize) -> bool {
        self.used1.contains(&e1) && self.pairs.iter().any(|p| p.e1 == e1 && p.e2 == e2)
    }

    /// Appends `p` unless one of its entities is already used.
    pub fn try_push(&mut self, p: SeedPair) -> bool {
        if self.used1.contains(&p.e1) || self.used2.contains(&p.e2) {
            return false;
        }
        self.used1.insert(p.e1);
        self.used2.insert(p.e2);
        self.pairs.push(p);
        true
    }

    /// Adds pairs in input order, skipping those that clash with the set.
    /// Returns how many were added.
    pub fn extend(&mut self, new: impl IntoIterator<Item = SeedPair>) -> usize {
        new.into_iter().filter(|&p| self.try_push(p)).count()
    }

    /// Keeps pairs for which `keep` returns true, preserving order.
    pub fn retain(&mut self, mut keep: impl FnMut(&SeedPair) -> bool) {
        let pairs = std::mem::take(&mut self.pairs);
        self.used1.clear();
        self.used2.clear();
        for p in pairs {
            if keep(&p) {
                self.try_push(p);
            }
        }
    }

    /// Keeps the `n` highest-scoring pairs (ties: earlier first), preserving order.
    pub fn truncate_by_score(&mut self, n: usize) {
        if self.len() <= n {
            return;
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.pairs[b].score.total_cmp(&self.pairs[a].score).then(a.cmp(&b)));
        let mut keep = vec![false; self.len()];
        idx[..n].iter().for_each(|&i| keep[i] = true);
        let mut k = 0;
        self.retain(|_| {
            k += 1;
            keep[k - 1]
        });
    }

    /// True iff no entity repeats on either side and the index sets agree with the pairs.
    pub fn is_one_to_one(&self) -> bool {
        let mut l = HashSet::new();
        let mut r = HashSet::new();
        self.pairs.iter().all(|p| l.insert(p.e1) && r.insert(p.e2)) && l == self.used1 && r == self.used2
    }

    /// One `e1 e2 score stage` line per pair.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&format!("{} {} {} {}\n", p.e1, p.e2, p.score, p.stage));
        }
        out
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut s = SeedSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let err = || format!("line {}: expected \"e1 e2 score stage\"", lineno + 1);
            if toks.len() != 4 {
                return Err(err());
            }
            let p = SeedPair {
                e1: toks[0].parse().map_err(|_| err())?,
                e2: toks[1].parse().map_err(|_| err())?,
                score: toks[2].parse().map_err(|_| err())?,
                stage: toks[3].parse()?,
            };
            if !p.score.is_finite() {
                return Err(format!("line {}: non-finite score", lineno + 1));
            }
            if !s.try_push(p) {
                return Err(format!("line {}: pair ({}, {}) repeats an entity", lineno + 1, p.e1, p.e2));
            }
        }
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    }
}

/// Adds `new` to `s` in input order, skipping pairs that break one-to-one.
pub fn add_pairs(mut s: SeedSet, new: &[SeedPair]) -> SeedSet {
    s.extend(new.iter().copied());
    s
}

/// Orders candidates by descending score, then lower `e1`, then lower `e2`.
pub(crate) fn sort_candidates(c: &mut [(usize, usize, f64)]) {
    c.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
}

/// Greedy one-to-one selection: walks candidates best-first and takes a pair
/// when neither entity has been used, either in `taken` or by an earlier pick.
/// Picked pairs are pushed onto `taken`; returns the number picked.
pub(crate) fn greedy_into(
    mut candidates: Vec<(usize, usize, f64)>,
    k: usize,
    stage: Stage,
    taken: &mut SeedSet,
) -> usize {
    if k == 0 {
        return 0;
    }
    sort_candidates(&mut candidates);
    let mut picked = 0;
    for (i, j, s) in candidates {
        if taken.try_push(SeedPair::new(i, j, s, stage)) {
            picked += 1;
            if picked == k {
                break;
            }
        }
    }
    picked
}

/// Greedy visual-pivot seeds: pick the best remaining pair, exclude both of
/// its entities, repeat until `k` pairs or no feasible pair remains. Entities
/// used by `exclude` are never chosen. Ties go to the lower `(e1, e2)`.
pub fn uvp_seeds(sim: &SimMatrix, k: usize, exclude: &SeedSet) -> SeedSet {
    let mut candidates = Vec::new();
    if k > 0 {
        for i in (0..sim.rows()).filter(|&i| !exclude.uses_left(i)) {
            let row = sim.0.row(i);
            for (j, &s) in row.iter().enumerate() {
                if !exclude.uses_right(j) {
                    candidates.push((i, j, s));
                }
            }
        }
    }
    let mut taken = exclude.clone();
    let before = taken.len();
    greedy_into(candidates, k, Stage::Uvp, &mut taken);
    SeedSet::from_pairs(taken.pairs()[before..].iter().copied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    #[test]
    fn cosine_hand_values() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [1.0, 0.0]]);
        let b = Matrix::from_rows(&[[3.0, 4.0], [0.0, 5.0], [1.0, 2.0]]);
        let s = cosine_sim_matrix(&a, &b).unwrap();
        assert!((s.get(0, 0) - 11.0 / (5f64.sqrt() * 5.0)).abs() < 1e-12);
        assert!((s.get(0, 0) - 0.98386).abs() < 1e-5);
        assert_eq!(s.get(1, 1), 0.0);
        assert!((s.get(0, 2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_row_is_named() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [0.0, 0.0]]);
        let err = cosine_sim_matrix(&a, &a).unwrap_err();
        assert!(matches!(err, Error::ZeroNormRow { row: 1, .. }));
    }

    fn sim(rows: &[[f64; 3]]) -> SimMatrix {
        SimMatrix(Matrix::from_rows(rows))
    }

    fn picks(s: &SeedSet) -> Vec<(usize, usize)> {
        s.iter().map(|p| (p.e1, p.e2)).collect()
    }

    #[test]
    fn uvp_basic_cases() {
        let s = sim(&[[0.9, 0.0, 0.0], [0.0, 0.8, 0.0], [0.0, 0.0, 0.7]]);
        assert!(uvp_seeds(&s, 0, &SeedSet::new()).is_empty());
        assert_eq!(picks(&uvp_seeds(&s, 2, &SeedSet::new())), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn uvp_matches_sort_and_filter_oracle() {
        let s = sim(&[[0.9, 0.8, 0.1], [0.85, 0.2, 0.1], [0.1, 0.1, 0.3]]);
        // oracle: enumerate all 9 entries, sort, filter
        let mut all: Vec<(usize, usize, f64)> =
            (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| (i, j, s.get(i, j))).collect();
        all.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());
        let mut rows = [false; 3];
        let mut cols = [false; 3];
        let mut expected = vec![];
        for (i, j, _) in all {
            if !rows[i] && !cols[j] {
                rows[i] = true;
                cols[j] = true;
                expected.push((i, j));
            }
        }
        assert_eq!(expected, vec![(0, 0), (2, 2), (1, 1)]);
        assert_eq!(picks(&uvp_seeds(&s, 3, &SeedSet::new())), expected);
    }

    #[test]
    fn uvp_respects_exclusions_and_ties() {
        let s = sim(&[[0.5, 0.5, 0.5], [0.5, 0.5, 0.5], [0.5, 0.5, 0.5]]);
        let ex = SeedSet::from_pairs([SeedPair::new(0, 1, 1.0, Stage::S1)]);
        let out = uvp_seeds(&s, 5, &ex);
        assert_eq!(picks(&out), vec![(1, 0), (2, 2)]);
    }

    #[test]
    fn add_pairs_follows_input_order() {
        let p = |a, b| SeedPair::new(a, b, 0.5, Stage::S1);
        let s = add_pairs(SeedSet::new(), &[p(0, 0)]);
        assert_eq!(s.len(), 1);
        let s = add_pairs(s, &[p(0, 1)]);
        assert_eq!(s.len(), 1);
        let s = add_pairs(s, &[p(1, 1), p(2, 1)]);
        assert_eq!(picks(&s), vec![(0, 0), (1, 1)]);
        assert!(s.is_one_to_one());
    }

    #[test]
    fn seed_text_round_trip() {
        let s = SeedSet::from_pairs([
            SeedPair::new(3, 1, 0.125, Stage::S1),
            SeedPair::new(0, 2, -0.3333333333333333, Stage::S3),
        ]);
        let text = s.to_text();
        assert_eq!(text.lines().next(), Some("3 1 0.125 S1"));
        assert_eq!(SeedSet::from_text(&text).unwrap(), s);
        assert!(SeedSet::from_text("1 1 0.5 S1\n1 2 0.4 S1\n").is_err());
    }

    #[test]
    fn truncate_keeps_best_in_order() {
        let mut s = SeedSet::from_pairs([
            SeedPair::new(0, 0, 0.1, Stage::S1),
            SeedPair::new(1, 1, 0.9, Stage::S1),
            SeedPair::new(2, 2, 0.5, Stage::S1),
        ]);
        s.truncate_by_score(2);
        assert_eq!(picks(&s), vec![(1, 1), (2, 2)]);
        assert!(s.is_one_to_one());
    }
}
