//! Feature enhancer: a linear map plus one graph-attention layer for the
//! visual modality, plain linear maps for attributes and relations, all
//! followed by row L2 normalization.
//!
//! Attention for entity `i` runs over `{i} ∪ N(i)`:
//! `e_ij = LeakyReLU(a₁·z_i + a₂·z_j)`, `α = softmax(e)`, `H_i = Σ α_ij z_j`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kg::{Modality, MultiModalKg};
use crate::matrix::{axpy, dot, log_sum_exp, normalize_in_place, Matrix};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Trainable parameters; also used as the container for their gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancerParams {
    /// `hidden × visual_dim`
    pub visual: Matrix,
    /// `hidden × attribute_dim`
    pub attribute: Matrix,
    /// `hidden × relation_dim`
    pub relation: Matrix,
    /// Attention vector `[a₁; a₂]`, length `2·hidden`.
    pub attention: Vec<f64>,
}

impl EnhancerParams {
    /// Glorot-uniform initialization.
    pub fn init(dims: [usize; 3], hidden: usize, rng: &mut impl Rng) -> Self {
        let mut glorot = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            Matrix::from_vec(rows, cols, data)
        };
        let visual = glorot(hidden, dims[0]);
        let attribute = glorot(hidden, dims[1]);
        let relation = glorot(hidden, dims[2]);
        let attention = glorot(1, 2 * hidden).as_slice().to_vec();
        Self {
            visual,
            attribute,
            relation,
            attention,
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            visual: Matrix::zeros(other.visual.rows(), other.visual.cols()),
            attribute: Matrix::zeros(other.attribute.rows(), other.attribute.cols()),
            relation: Matrix::zeros(other.relation.rows(), other.relation.cols()),
            attention: vec![0.0; other.attention.len()],
        }
    }

    pub fn hidden(&self) -> usize {
        self.visual.rows()
    }

    pub fn weight(&self, m: Modality) -> &Matrix {
        match m {
            Modality::Visual => &self.visual,
            Modality::Attribute => &self.attribute,
            Modality::Relation => &self.relation,
        }
    }

    fn weight_mut(&mut self, m: Modality) -> &mut Matrix {
        match m {
            Modality::Visual => &mut self.visual,
            Modality::Attribute => &mut self.attribute,
            Modality::Relation => &mut self.relation,
        }
    }

    /// Every tensor as a flat slice, in a fixed order.
    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.visual.as_slice(),
            self.attribute.as_slice(),
            self.relation.as_slice(),
            &self.attention,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.visual.as_mut_slice(),
            self.attribute.as_mut_slice(),
            self.relation.as_mut_slice(),
            &mut self.attention,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Enhanced features of one graph; every row has unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedFeatures {
    pub visual: Matrix,
    pub attribute: Matrix,
    pub relation: Matrix,
    /// Normalized concatenation of the active modality blocks.
    pub joint: Matrix,
}

impl EnhancedFeatures {
    pub fn modality(&self, m: Modality) -> &Matrix {
        match m {
            Modality::Visual => &self.visual,
            Modality::Attribute => &self.attribute,
            Modality::Relation => &self.relation,
        }
    }
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_slope(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

fn project(w: &Matrix, x: &[f64]) -> Vec<f64> {
    w.iter_rows().map(|r| dot(r, x)).collect()
}

/// Lazily computed `z_j = W x_j` for the entities a batch touches.
struct Projections {
    z: Matrix,
    ready: Vec<bool>,
}

impl Projections {
    fn new(n: usize, hidden: usize) -> Self {
        Self {
            z: Matrix::zeros(n, hidden),
            ready: vec![false; n],
        }
    }

    fn ensure(&mut self, e: usize, w: &Matrix, x: &Matrix) {
        if !self.ready[e] {
            let z = project(w, x.row(e));
            self.z.row_mut(e).copy_from_slice(&z);
            self.ready[e] = true;
        }
    }
}

struct AttentionRow {
    nodes: Vec<usize>,
    pre: Vec<f64>,
    alpha: Vec<f64>,
    norm: f64,
}

/// Forward pass of one modality for a list of entities, keeping what the
/// backward pass needs.
pub(crate) struct ModalityPass {
    modality: Modality,
    entities: Vec<usize>,
    /// Normalized outputs, one row per entity.
    pub out: Matrix,
    raw_norms: Vec<f64>,
    projections: Option<Projections>,
    attention: Vec<AttentionRow>,
}

pub(crate) fn modality_forward(
    kg: &MultiModalKg,
    params: &EnhancerParams,
    modality: Modality,
    entities: &[usize],
) -> ModalityPass {
    let w = params.weight(modality);
    let x = kg.modality(modality);
    let hidden = w.rows();
    let mut out = Matrix::zeros(entities.len(), hidden);
    let mut raw_norms = Vec::with_capacity(entities.len());

    if modality != Modality::Visual {
        for (k, &e) in entities.iter().enumerate() {
            let mut z = project(w, x.row(e));
            raw_norms.push(normalize_in_place(&mut z));
            out.row_mut(k).copy_from_slice(&z);
        }
        return ModalityPass {
            modality,
            entities: entities.to_vec(),
            out,
            raw_norms,
            projections: None,
            attention: Vec::new(),
        };
    }

    let (a1, a2) = params.attention.split_at(hidden);
    let mut proj = Projections::new(kg.n_entities(), hidden);
    let mut attention = Vec::with_capacity(entities.len());
    for (k, &e) in entities.iter().enumerate() {
        let mut nodes = Vec::with_capacity(kg.degree(e) + 1);
        nodes.push(e);
        nodes.extend(kg.neighbors(e).iter().copied().filter(|&j| j != e));
        for &j in &nodes {
            proj.ensure(j, w, x);
        }
        let self_term = dot(a1, proj.z.row(e));
        let pre: Vec<f64> = nodes.iter().map(|&j| self_term + dot(a2, proj.z.row(j))).collect();
        let logits: Vec<f64> = pre.iter().map(|&s| leaky(s)).collect();
        let lse = log_sum_exp(&logits);
        let alpha: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
        let mut g = vec![0.0; hidden];
        for (&j, &a) in nodes.iter().zip(&alpha) {
            axpy(a, proj.z.row(j), &mut g);
        }
        let norm = normalize_in_place(&mut g);
        out.row_mut(k).copy_from_slice(&g);
        raw_norms.push(norm);
        attention.push(AttentionRow { nodes, pre, alpha, norm });
    }
    ModalityPass {
        modality,
        entities: entities.to_vec(),
        out,
        raw_norms,
        projections: Some(proj),
        attention,
    }
}

/// Accumulates parameter gradients given `d_out = ∂L/∂out`.
pub(crate) fn modality_backward(
    kg: &MultiModalKg,
    params: &EnhancerParams,
    pass: &ModalityPass,
    d_out: &Matrix,
    grads: &mut EnhancerParams,
) {
    let m = pass.modality;
    let w = params.weight(m);
    let x = kg.modality(m);
    let hidden = w.rows();

    // through the row normalization: dg = (I − h hᵀ) d / ‖g‖
    let d_raw = |k: usize| -> Vec<f64> {
        let h = pass.out.row(k);
        let d = d_out.row(k);
        let n = pass.raw_norms[k];
        if n == 0.0 {
            return vec![0.0; hidden];
        }
        let hd = dot(h, d);
        d.iter().zip(h).map(|(di, hi)| (di - hd * hi) / n).collect()
    };

    if m != Modality::Visual {
        let gw = grads.weight_mut(m);
        for (k, &e) in pass.entities.iter().enumerate() {
            let dz = d_raw(k);
            let xe = x.row(e);
            for (r, &dzr) in dz.iter().enumerate() {
                if dzr != 0.0 {
                    axpy(dzr, xe, gw.row_mut(r));
                }
            }
        }
        return;
    }

    let proj = pass.projections.as_ref().expect("visual pass keeps projections");
    let (a1, a2) = params.attention.split_at(hidden);
    let mut dz = Matrix::zeros(kg.n_entities(), hidden);
    let mut touched = vec![false; kg.n_entities()];
    let mut d_att = vec![0.0; 2 * hidden];

    for (k, row) in pass.attention.iter().enumerate() {
        if row.norm == 0.0 {
            continue;
        }
        let dg = d_raw(k);
        let e = row.nodes[0];
        // g = Σ α_j z_j
        let d_alpha: Vec<f64> = row.nodes.iter().map(|&j| dot(&dg, proj.z.row(j))).collect();
        let weighted: f64 = row.alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
        for (idx, &j) in row.nodes.iter().enumerate() {
            axpy(row.alpha[idx], &dg, dz.row_mut(j));
            touched[j] = true;
            // softmax then LeakyReLU
            let d_logit = row.alpha[idx] * (d_alpha[idx] - weighted);
            let d_pre = d_logit * leaky_slope(row.pre[idx]);
            if d_pre == 0.0 {
                continue;
            }
            axpy(d_pre, proj.z.row(e), &mut d_att[..hidden]);
            axpy(d_pre, proj.z.row(j), &mut d_att[hidden..]);
            axpy(d_pre, a1, dz.row_mut(e));
            axpy(d_pre, a2, dz.row_mut(j));
        }
    }

    for (g, d) in grads.attention.iter_mut().zip(&d_att) {
        *g += d;
    }
    let gw = grads.weight_mut(Modality::Visual);
    for (j, _) in touched.iter().enumerate().filter(|(_, &t)| t) {
        let xj = x.row(j);
        for (r, &dzr) in dz.row(j).iter().enumerate() {
            if dzr != 0.0 {
                axpy(dzr, xj, gw.row_mut(r));
            }
        }
    }
}

/// Enhanced features of every entity, with the joint block built from `active`.
pub fn forward_active(kg: &MultiModalKg, params: &EnhancerParams, active: &[Modality]) -> EnhancedFeatures {
    let all: Vec<usize> = (0..kg.n_entities()).collect();
    let v = modality_forward(kg, params, Modality::Visual, &all).out;
    let a = modality_forward(kg, params, Modality::Attribute, &all).out;
    let r = modality_forward(kg, params, Modality::Relation, &all).out;
    let blocks: Vec<&Matrix> = Modality::ALL
        .iter()
        .filter(|m| active.contains(m))
        .map(|m| match m {
            Modality::Visual => &v,
            Modality::Attribute => &a,
            Modality::Relation => &r,
        })
        .collect();
    let joint = Matrix::hconcat(&blocks).normalized_rows();
    EnhancedFeatures {
        visual: v,
        attribute: a,
        relation: r,
        joint,
    }
}

/// Enhanced features with all three modalities in the joint block.
pub fn forward(kg: &MultiModalKg, params: &EnhancerParams) -> EnhancedFeatures {
    forward_active(kg, params, &Modality::ALL)
}
