//! Multimodal knowledge graphs: entities, undirected adjacency and three
//! per-entity feature matrices (visual, attribute, relation).

mod io;
mod synth;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

pub use io::{load_kg, load_kg_with_seed, read_alignment, read_matrix, save_kg, write_alignment, write_matrix, Manifest};
pub use synth::{synth_generate, DegreeProfile, ModalitySpec, SynthConfig, SynthOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Attribute,
    Relation,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Visual, Modality::Attribute, Modality::Relation];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Attribute => "attribute",
            Modality::Relation => "relation",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiModalKg {
    /// Sorted, deduplicated neighbor lists.
    pub adjacency: Vec<Vec<usize>>,
    pub visual: Matrix,
    pub attribute: Matrix,
    pub relation: Matrix,
    pub labels: Option<Vec<String>>,
}

impl MultiModalKg {
    /// Builds a graph from an undirected edge list. Self-loops and duplicates are dropped.
    pub fn from_edges(
        n_entities: usize,
        edges: &[(usize, usize)],
        visual: Matrix,
        attribute: Matrix,
        relation: Matrix,
    ) -> Self {
        let mut adjacency = vec![Vec::new(); n_entities];
        for &(u, v) in edges {
            if u != v {
                adjacency[u].push(v);
                adjacency[v].push(u);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Self {
            adjacency,
            visual,
            attribute,
            relation,
            labels: None,
        }
    }

    pub fn n_entities(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, e: usize) -> &[usize] {
        &self.adjacency[e]
    }

    pub fn degree(&self, e: usize) -> usize {
        self.adjacency[e].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, ns)| ns.iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
    }

    pub fn modality(&self, m: Modality) -> &Matrix {
        match m {
            Modality::Visual => &self.visual,
            Modality::Attribute => &self.attribute,
            Modality::Relation => &self.relation,
        }
    }

    pub fn modality_mut(&mut self, m: Modality) -> &mut Matrix {
        match m {
            Modality::Visual => &mut self.visual,
            Modality::Attribute => &mut self.attribute,
            Modality::Relation => &mut self.relation,
        }
    }
}

/// Ground-truth one-to-one alignment between two graphs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentMap {
    pub pairs: Vec<(usize, usize)>,
}

impl AlignmentMap {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, e1: usize, e2: usize) -> bool {
        self.pairs.contains(&(e1, e2))
    }

    /// Lookup table from G1 entity to its G2 partner.
    pub fn forward(&self, n1: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n1];
        for &(a, b) in &self.pairs {
            if a < n1 {
                out[a] = Some(b);
            }
        }
        out
    }

    pub fn is_one_to_one(&self) -> bool {
        let mut left = std::collections::HashSet::new();
        let mut right = std::collections::HashSet::new();
        self.pairs
            .iter()
            .all(|&(a, b)| left.insert(a) && right.insert(b))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    RowCount {
        modality: Modality,
        rows: usize,
        expected: usize,
    },
    NonFinite {
        modality: Modality,
        entity: usize,
    },
    NeighborOutOfRange {
        entity: usize,
        neighbor: usize,
    },
    SelfLoop {
        entity: usize,
    },
    Asymmetric {
        from: usize,
        to: usize,
    },
    UnsortedNeighbors {
        entity: usize,
    },
    LabelCount {
        labels: usize,
        expected: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowCount {
                modality,
                rows,
                expected,
            } => write!(f, "{modality} matrix has {rows} rows, expected {expected}"),
            Violation::NonFinite { modality, entity } => {
                write!(f, "non-finite {modality} feature at entity {entity}")
            }
            Violation::NeighborOutOfRange { entity, neighbor } => {
                write!(f, "entity {entity} lists out-of-range neighbor {neighbor}")
            }
            Violation::SelfLoop { entity } => write!(f, "self-loop at entity {entity}"),
            Violation::Asymmetric { from, to } => {
                write!(f, "edge ({from}, {to}) has no reverse edge")
            }
            Violation::UnsortedNeighbors { entity } => {
                write!(f, "neighbors of entity {entity} not sorted/deduplicated")
            }
            Violation::LabelCount { labels, expected } => {
                write!(f, "{labels} labels for {expected} entities")
            }
        }
    }
}

/// Lists every invariant violation. An empty report means the graph is well formed.
pub fn validate_kg(kg: &MultiModalKg) -> Vec<Violation> {
    let n = kg.n_entities();
    let mut out = Vec::new();
    for m in Modality::ALL {
        let mat = kg.modality(m);
        if mat.rows() != n {
            out.push(Violation::RowCount {
                modality: m,
                rows: mat.rows(),
                expected: n,
            });
        }
        for (entity, row) in mat.iter_rows().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                out.push(Violation::NonFinite {
                    modality: m,
                    entity,
                });
            }
        }
    }
    for (u, ns) in kg.adjacency.iter().enumerate() {
        if ns.windows(2).any(|w| w[0] >= w[1]) {
            out.push(Violation::UnsortedNeighbors { entity: u });
        }
        for &v in ns {
            if v >= n {
                out.push(Violation::NeighborOutOfRange {
                    entity: u,
                    neighbor: v,
                });
            } else if v == u {
                out.push(Violation::SelfLoop { entity: u });
            } else if !kg.adjacency[v].contains(&u) {
                out.push(Violation::Asymmetric { from: u, to: v });
            }
        }
    }
    if let Some(labels) = &kg.labels {
        if labels.len() != n {
            out.push(Violation::LabelCount {
                labels: labels.len(),
                expected: n,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MultiModalKg {
        let feats = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        MultiModalKg::from_edges(3, &[(0, 1), (1, 2)], feats.clone(), feats.clone(), feats)
    }

    #[test]
    fn well_formed_graph_has_empty_report() {
        assert!(validate_kg(&tiny()).is_empty());
    }

    #[test]
    fn missing_reverse_edge_is_one_violation() {
        let mut kg = tiny();
        kg.adjacency[2].clear();
        kg.adjacency[2].push(0);
        kg.adjacency[0] = vec![1];
        // now 1->2 exists but 2->1 does not, and 2->0 has no reverse
        kg.adjacency[2] = vec![];
        let report = validate_kg(&kg);
        assert_eq!(report, vec![Violation::Asymmetric { from: 1, to: 2 }]);
    }

    #[test]
    fn nan_feature_names_the_entity() {
        let mut kg = tiny();
        kg.visual.set(0, 0, f64::NAN);
        let report = validate_kg(&kg);
        assert_eq!(
            report,
            vec![Violation::NonFinite {
                modality: Modality::Visual,
                entity: 0
            }]
        );
    }

    #[test]
    fn edges_are_listed_once() {
        let kg = tiny();
        assert_eq!(kg.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
        assert_eq!(kg.edge_count(), 2);
    }
}
