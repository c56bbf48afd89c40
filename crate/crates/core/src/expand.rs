//! Stage III: neighborhood expansion of the seed set and a final recheck.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::enhance::mic_correct;
use crate::error::{Error, Result};
use crate::kg::MultiModalKg;
use crate::matrix::{dot, Matrix};
use crate::sim::{sort_candidates, SeedPair, SeedSet, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionConfig {
    /// Minimum neighbor score for a candidate to be admitted.
    pub eta: f64,
    /// Cap on the number of added pairs; `None` means unlimited.
    pub max_new: Option<usize>,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self { eta: 0.8, max_new: None }
    }
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > -1.0 && self.eta <= 1.0) {
            return Err(Error::Config(format!("expansion: eta must lie in (-1, 1], got {}", self.eta)));
        }
        Ok(())
    }
}

/// A neighbor pair proposed by expanding around `source`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub e1: usize,
    pub e2: usize,
    pub source: (usize, usize),
}

/// For every seed `(a, b)`, the cross product `N(a) × N(b)`. A pair reachable
/// from several seeds is emitted once, attributed to the first of them.
pub fn neighbor_candidates(seeds: &SeedSet, kg1: &MultiModalKg, kg2: &MultiModalKg) -> Vec<Candidate> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for p in seeds.iter() {
        for &i in kg1.neighbors(p.e1) {
            for &j in kg2.neighbors(p.e2) {
                if seen.insert((i, j)) {
                    out.push(Candidate {
                        e1: i,
                        e2: j,
                        source: (p.e1, p.e2),
                    });
                }
            }
        }
    }
    out
}

/// Cosine of `orig1[i] ⊕ enh1[i]` and `orig2[j] ⊕ enh2[j]`.
pub fn neighbor_score(i: usize, j: usize, orig1: &Matrix, orig2: &Matrix, enh1: &Matrix, enh2: &Matrix) -> f64 {
    let (o1, o2, h1, h2) = (orig1.row(i), orig2.row(j), enh1.row(i), enh2.row(j));
    let num = dot(o1, o2) + dot(h1, h2);
    let n1 = (dot(o1, o1) + dot(h1, h1)).sqrt();
    let n2 = (dot(o2, o2) + dot(h2, h2)).sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return 0.0;
    }
    num / (n1 * n2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Admitted,
    BelowThreshold,
    LeftUsed,
    RightUsed,
    CapReached,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Admitted => "admitted",
            Verdict::BelowThreshold => "below_threshold",
            Verdict::LeftUsed => "left_used",
            Verdict::RightUsed => "right_used",
            Verdict::CapReached => "cap_reached",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditRow {
    pub candidate: Candidate,
    pub score: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    /// Input seeds followed by the admitted pairs.
    pub seeds: SeedSet,
    /// Every candidate in admission order.
    pub audit: Vec<AuditRow>,
}

impl Expansion {
    pub fn added(&self) -> usize {
        self.audit.iter().filter(|r| r.verdict == Verdict::Admitted).count()
    }

    /// `source_e1,source_e2,new_e1,new_e2,score,admitted,reason` CSV.
    pub fn audit_csv(&self) -> String {
        let mut out = String::from("source_e1,source_e2,new_e1,new_e2,score,admitted,reason\n");
        for r in &self.audit {
            let c = r.candidate;
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.source.0,
                c.source.1,
                c.e1,
                c.e2,
                r.score,
                r.verdict == Verdict::Admitted,
                r.verdict
            ));
        }
        out
    }
}

/// Scores neighbor candidates on original ⊕ enhanced features and admits
/// those scoring at least `eta`, best first (ties to lower indices), while
/// both endpoints are still unused.
pub fn expand(
    seeds: &SeedSet,
    cfg: &ExpansionConfig,
    kg1: &MultiModalKg,
    kg2: &MultiModalKg,
    orig: (&Matrix, &Matrix),
    enh: (&Matrix, &Matrix),
) -> Expansion {
    let candidates = neighbor_candidates(seeds, kg1, kg2);
    let mut scored: Vec<(usize, usize, f64)> = candidates
        .iter()
        .map(|c| (c.e1, c.e2, neighbor_score(c.e1, c.e2, orig.0, orig.1, enh.0, enh.1)))
        .collect();
    sort_candidates(&mut scored);
    let source: std::collections::HashMap<(usize, usize), (usize, usize)> =
        candidates.iter().map(|c| ((c.e1, c.e2), c.source)).collect();

    let mut out = seeds.clone();
    let mut audit = Vec::with_capacity(scored.len());
    let mut added = 0;
    for (e1, e2, score) in scored {
        let verdict = if score < cfg.eta {
            Verdict::BelowThreshold
        } else if out.uses_left(e1) {
            Verdict::LeftUsed
        } else if out.uses_right(e2) {
            Verdict::RightUsed
        } else if cfg.max_new.is_some_and(|cap| added >= cap) {
            Verdict::CapReached
        } else {
            out.try_push(SeedPair::new(e1, e2, score, Stage::S3));
            added += 1;
            Verdict::Admitted
        };
        audit.push(AuditRow {
            candidate: Candidate {
                e1,
                e2,
                source: source[&(e1, e2)],
            },
            score,
            verdict,
        });
    }
    Expansion { seeds: out, audit }
}

/// Error correction on the original fused features.
pub fn recheck(seeds: &SeedSet, orig1: &Matrix, orig2: &Matrix) -> SeedSet {
    mic_correct(seeds, orig1, orig2)
}
