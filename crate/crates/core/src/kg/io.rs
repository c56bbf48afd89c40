//! On-disk layout: a JSON manifest next to an edge list and three binary
//! matrix files.
//!
//! Matrix files start with a 16-byte little-endian header (`b"PSQE"`,
//! version, rows, cols as `u32`) followed by row-major `f32` values. A visual
//! row made entirely of NaN marks an entity without an image; such rows are
//! replaced at load time by a draw from a per-dimension normal fitted to the
//! present rows.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AlignmentMap, Modality, MultiModalKg};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

const MAGIC: &[u8; 4] = b"PSQE";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Seed used for missing-visual fill when the caller does not pick one.
pub const DEFAULT_FILL_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n_entities: usize,
    pub adjacency: PathBuf,
    pub visual: PathBuf,
    pub attribute: PathBuf,
    pub relation: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
}

impl Manifest {
    fn matrix_path(&self, m: Modality) -> &Path {
        match m {
            Modality::Visual => &self.visual,
            Modality::Attribute => &self.attribute,
            Modality::Relation => &self.relation,
        }
    }
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * m.rows() * m.cols());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("file too short for header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let expected = HEADER_LEN + 4 * rows * cols;
    if bytes.len() != expected {
        return Err(bad(format!(
            "header says {rows}x{cols} ({expected} bytes) but file has {} bytes",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Matrix::from_vec(rows, cols, data))
}

fn read_edges(path: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<usize> {
            tok.and_then(|t| t.parse().ok()).ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                message: format!("line {}: expected \"u v\"", lineno + 1),
            })
        };
        let u = parse(parts.next())?;
        let v = parse(parts.next())?;
        if u >= n || v >= n {
            return Err(Error::InvalidEdge {
                path: path.to_path_buf(),
                u,
                v,
                message: format!("entity index out of range (n = {n})"),
            });
        }
        if u == v {
            return Err(Error::InvalidEdge {
                path: path.to_path_buf(),
                u,
                v,
                message: "self-loop".into(),
            });
        }
        edges.push((u, v));
    }
    Ok(edges)
}

pub fn load_kg(manifest_path: &Path) -> Result<MultiModalKg> {
    load_kg_with_seed(manifest_path, DEFAULT_FILL_SEED)
}

/// Loads and validates a graph; `fill_seed` drives the missing-visual draws.
pub fn load_kg_with_seed(manifest_path: &Path, fill_seed: u64) -> Result<MultiModalKg> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let n = manifest.n_entities;

    let mut mats = Vec::with_capacity(3);
    for m in Modality::ALL {
        let path = base.join(manifest.matrix_path(m));
        let mat = read_matrix(&path)?;
        if mat.rows() != n {
            return Err(Error::DimensionMismatch {
                what: format!("{m} matrix rows ({})", path.display()),
                expected: n,
                found: mat.rows(),
            });
        }
        mats.push(mat);
    }
    let relation = mats.pop().unwrap();
    let attribute = mats.pop().unwrap();
    let mut visual = mats.pop().unwrap();

    fill_missing_visual(&mut visual, fill_seed)?;
    for (name, mat) in [("attribute", &attribute), ("relation", &relation)] {
        if let Some(entity) = first_non_finite_row(mat) {
            return Err(Error::NonFinite {
                matrix: name.into(),
                entity,
            });
        }
    }

    let edges = read_edges(&base.join(&manifest.adjacency), n)?;
    let mut kg = MultiModalKg::from_edges(n, &edges, visual, attribute, relation);

    if let Some(labels_path) = &manifest.labels {
        let path = base.join(labels_path);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let labels: Vec<String> = text.lines().map(str::to_string).collect();
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                what: format!("label count ({})", path.display()),
                expected: n,
                found: labels.len(),
            });
        }
        kg.labels = Some(labels);
    }
    Ok(kg)
}

fn first_non_finite_row(m: &Matrix) -> Option<usize> {
    m.iter_rows().position(|r| r.iter().any(|v| !v.is_finite()))
}

/// Replaces all-NaN rows with per-dimension normal draws. Rows that are only
/// partly non-finite are an error.
fn fill_missing_visual(visual: &mut Matrix, seed: u64) -> Result<()> {
    let cols = visual.cols();
    let mut missing = Vec::new();
    for (i, row) in visual.iter_rows().enumerate() {
        if cols > 0 && row.iter().all(|v| v.is_nan()) {
            missing.push(i);
        } else if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                matrix: "visual".into(),
                entity: i,
            });
        }
    }
    if missing.is_empty() {
        return Ok(());
    }

    let present = visual.rows() - missing.len();
    let mut mean = vec![0.0; cols];
    let mut std = vec![1.0; cols];
    if present > 0 {
        let is_missing = {
            let mut flags = vec![false; visual.rows()];
            missing.iter().for_each(|&i| flags[i] = true);
            flags
        };
        let rows = || {
            visual
                .iter_rows()
                .enumerate()
                .filter(|(i, _)| !is_missing[*i])
                .map(|(_, r)| r)
        };
        for r in rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= present as f64);
        let mut var = vec![0.0; cols];
        for r in rows() {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for (s, v) in std.iter_mut().zip(var) {
            *s = (v / present as f64).sqrt();
        }
    }

    let mut rng = rng::stream(seed, rng::ids::MISSING_VISUAL);
    for i in missing {
        let row = visual.row_mut(i);
        for ((x, m), s) in row.iter_mut().zip(&mean).zip(&std) {
            *x = Normal::new(*m, *s).expect("finite std").sample(&mut rng);
        }
    }
    Ok(())
}

/// Writes `<dir>/<stem>.json` plus its edge list and matrix files.
pub fn save_kg(kg: &MultiModalKg, dir: &Path, stem: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        n_entities: kg.n_entities(),
        adjacency: format!("{stem}_edges.txt").into(),
        visual: format!("{stem}_visual.bin").into(),
        attribute: format!("{stem}_attribute.bin").into(),
        relation: format!("{stem}_relation.bin").into(),
        labels: kg.labels.as_ref().map(|_| format!("{stem}_labels.txt").into()),
    };
    for m in Modality::ALL {
        write_matrix(&dir.join(manifest.matrix_path(m)), kg.modality(m))?;
    }
    let edge_path = dir.join(&manifest.adjacency);
    let mut w = BufWriter::new(fs::File::create(&edge_path).map_err(|e| Error::io(&edge_path, e))?);
    for (u, v) in kg.edges() {
        writeln!(w, "{u} {v}").map_err(|e| Error::io(&edge_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&edge_path, e))?;
    if let (Some(labels), Some(p)) = (&kg.labels, &manifest.labels) {
        let path = dir.join(p);
        fs::write(&path, labels.join("\n") + "\n").map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Alignment files hold one `e1 e2` pair per line.
pub fn write_alignment(path: &Path, map: &AlignmentMap) -> Result<()> {
    let mut out = String::new();
    for (a, b) in &map.pairs {
        out.push_str(&format!("{a} {b}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_alignment(path: &Path) -> Result<AlignmentMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums: Vec<usize> = line
            .split_whitespace()
            .take(2)
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format {
                path: path.to_path_buf(),
                message: format!("line {}: expected \"e1 e2\"", lineno + 1),
            })?;
        if nums.len() != 2 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("line {}: expected \"e1 e2\"", lineno + 1),
            });
        }
        pairs.push((nums[0], nums[1]));
    }
    Ok(AlignmentMap::new(pairs))
}
