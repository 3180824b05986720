//! One-time cross-site atom alignment.
//!
//! Independently trained dictionaries agree only up to a signed permutation of
//! their atoms. This module matches atoms across sites by building a layered
//! DAG (one layer per site, plus virtual source and sink), repeatedly
//! extracting a minimum-weight source-to-sink path with Dijkstra's algorithm,
//! and recording the selections as signed permutation matrices. Edge weights
//! chain consecutive layers only, so the result depends on site order; callers
//! keep input order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::{Dictionary, SparseCode};

/// A signed permutation of k atoms: `source_index(r)` is the original column
/// that lands at aligned position r, with sign `sign(r)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedPermutation {
    perm: Vec<usize>,
    signs: Vec<i8>,
}

impl SignedPermutation {
    pub fn new(perm: Vec<usize>, signs: Vec<i8>) -> Result<Self> {
        if perm.len() != signs.len() {
            return Err(Error::shape(
                "SignedPermutation::new",
                format!("{} signs", perm.len()),
                format!("{} signs", signs.len()),
            ));
        }
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::InvalidState(format!(
                    "permutation is not a bijection on 0..{}",
                    perm.len()
                )));
            }
            seen[p] = true;
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidState("signs must be +1 or -1".into()));
        }
        Ok(Self { perm, signs })
    }

    pub fn identity(k: usize) -> Self {
        Self {
            perm: (0..k).collect(),
            signs: vec![1; k],
        }
    }

    /// Uniformly random signed permutation, for planted-recovery runs.
    pub fn random(k: usize, rng: &mut impl rand::Rng) -> Self {
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(rng);
        let signs = (0..k).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        Self { perm, signs }
    }

    pub fn size(&self) -> usize {
        self.perm.len()
    }

    pub fn source_index(&self, aligned: usize) -> usize {
        self.perm[aligned]
    }

    pub fn sign(&self, aligned: usize) -> i8 {
        self.signs[aligned]
    }

    /// The k x k matrix P with P[source_index(r), r] = sign(r).
    pub fn to_matrix(&self) -> Array2<f64> {
        let k = self.perm.len();
        let mut p = Array2::zeros((k, k));
        for r in 0..k {
            p[[self.perm[r], r]] = f64::from(self.signs[r]);
        }
        p
    }

    pub fn inverse(&self) -> Self {
        let k = self.perm.len();
        let mut perm = vec![0; k];
        let mut signs = vec![1; k];
        for r in 0..k {
            perm[self.perm[r]] = r;
            signs[self.perm[r]] = self.signs[r];
        }
        Self { perm, signs }
    }
}

/// Apply P to a (dictionary, code) pair: (D P, P' S). Columns and rows are
/// moved and sign-flipped by index, so reconstruction D S is preserved
/// exactly.
pub fn apply_signed_permutation(
    dict: &Dictionary,
    codes: &SparseCode,
    p: &SignedPermutation,
) -> Result<(Dictionary, SparseCode)> {
    let k = dict.atom_count();
    if p.size() != k || codes.atom_count() != k {
        return Err(Error::shape(
            "apply_signed_permutation",
            format!("k = {k}"),
            format!("P size {}, S rows {}", p.size(), codes.atom_count()),
        ));
    }
    let mut new_dict = Array2::zeros(dict.values.raw_dim());
    let mut new_codes = Array2::zeros(codes.values.raw_dim());
    for r in 0..k {
        let src = p.source_index(r);
        let sign = f64::from(p.sign(r));
        new_dict
            .column_mut(r)
            .assign(&dict.values.column(src).mapv(|v| sign * v));
        new_codes
            .row_mut(r)
            .assign(&codes.values.row(src).mapv(|v| sign * v));
    }
    Ok((
        Dictionary {
            values: new_dict,
            global_count: dict.global_count,
        },
        SparseCode { values: new_codes },
    ))
}

/// Minimum over the two signed pairings of the mean squared error between two
/// atoms. Returns the winning sign; ties go to +1.
pub fn atom_edge_weight(
    a: ndarray::ArrayView1<'_, f64>,
    b: ndarray::ArrayView1<'_, f64>,
) -> Result<(f64, i8)> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "atom_edge_weight",
            format!("dimension {}", a.len()),
            format!("dimension {}", b.len()),
        ));
    }
    let d = a.len() as f64;
    let mut same = 0.0;
    let mut flipped = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        same += (x - y) * (x - y);
        flipped += (x + y) * (x + y);
    }
    if same <= flipped {
        Ok((same / d, 1))
    } else {
        Ok((flipped / d, -1))
    }
}

/// Layered DAG over the sites' surviving atoms. Pairwise signed-MSE tables
/// between adjacent layers are computed once at build time and masked as
/// nodes are removed.
#[derive(Debug, Clone)]
pub struct AlignmentGraph {
    atom_count: usize,
    weights: Vec<Array2<f64>>,
    signs: Vec<Array2<i8>>,
    alive: Vec<Vec<bool>>,
}

impl AlignmentGraph {
    pub fn build(dicts: &[Dictionary]) -> Result<Self> {
        let first = dicts
            .first()
            .ok_or_else(|| Error::Config("alignment needs at least one site".into()))?;
        let (d, k) = (first.feature_dim(), first.atom_count());
        for (i, dict) in dicts.iter().enumerate() {
            if dict.feature_dim() != d || dict.atom_count() != k {
                return Err(Error::shape(
                    "AlignmentGraph::build",
                    format!("{d}x{k} (site 0)"),
                    format!("{}x{} (site {i})", dict.feature_dim(), dict.atom_count()),
                ));
            }
        }
        let mut weights = Vec::with_capacity(dicts.len().saturating_sub(1));
        let mut signs = Vec::with_capacity(dicts.len().saturating_sub(1));
        for pair in dicts.windows(2) {
            let mut w = Array2::zeros((k, k));
            let mut s = Array2::from_elem((k, k), 1i8);
            for j in 0..k {
                for l in 0..k {
                    let (weight, sign) = atom_edge_weight(pair[0].atom(j), pair[1].atom(l))?;
                    w[[j, l]] = weight;
                    s[[j, l]] = sign;
                }
            }
            weights.push(w);
            signs.push(s);
        }
        Ok(Self {
            atom_count: k,
            weights,
            signs,
            alive: vec![vec![true; k]; dicts.len()],
        })
    }

    pub fn site_count(&self) -> usize {
        self.alive.len()
    }

    pub fn atom_count(&self) -> usize {
        self.atom_count
    }

    pub fn surviving(&self, layer: usize) -> Vec<usize> {
        self.alive[layer]
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| a.then_some(i))
            .collect()
    }

    fn remove_path(&mut self, path: &AlignedPath) {
        for (layer, &atom) in path.atom_indices.iter().enumerate() {
            self.alive[layer][atom] = false;
        }
    }
}

/// One source-to-sink selection: the chosen atom per site, the resolved sign
/// per site (site 0 is the positive reference), and the total path weight.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPath {
    pub atom_indices: Vec<usize>,
    pub signs: Vec<i8>,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    dist: f64,
    layer: usize,
    index: usize,
}

impl Eq for HeapEntry {}

// BinaryHeap is a max-heap; reverse the comparison to pop the smallest
// distance first, with deterministic (layer, index) tie-breaking.
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.layer.cmp(&self.layer))
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum-weight source-to-sink path over the surviving nodes, one node per
/// layer. Source and sink edges carry weight zero. Among equal-weight paths
/// the lexicographically smallest atom-index sequence wins.
pub fn shortest_alignment_path(graph: &AlignmentGraph) -> Result<AlignedPath> {
    let n = graph.site_count();
    let k = graph.atom_count();
    for layer in 0..n {
        if !graph.alive[layer].iter().any(|&a| a) {
            return Err(Error::InvalidState(format!(
                "alignment layer {layer} has no surviving atoms"
            )));
        }
    }

    // Dijkstra from the sink over reversed edges: dist[layer][atom] is the
    // cheapest remaining way to reach the sink.
    let mut dist = vec![vec![f64::INFINITY; k]; n];
    let mut heap = BinaryHeap::new();
    for idx in 0..k {
        if graph.alive[n - 1][idx] {
            dist[n - 1][idx] = 0.0;
            heap.push(HeapEntry {
                dist: 0.0,
                layer: n - 1,
                index: idx,
            });
        }
    }
    while let Some(entry) = heap.pop() {
        if entry.dist > dist[entry.layer][entry.index] {
            continue;
        }
        if entry.layer == 0 {
            continue;
        }
        let prev = entry.layer - 1;
        for j in 0..k {
            if !graph.alive[prev][j] {
                continue;
            }
            let candidate = graph.weights[prev][[j, entry.index]] + entry.dist;
            if candidate < dist[prev][j] {
                dist[prev][j] = candidate;
                heap.push(HeapEntry {
                    dist: candidate,
                    layer: prev,
                    index: j,
                });
            }
        }
    }

    // Walk forward, at each layer taking the smallest surviving index that
    // attains the optimal remaining distance.
    let mut atom_indices = Vec::with_capacity(n);
    let mut signs = Vec::with_capacity(n);
    let mut first = None;
    for j in 0..k {
        if graph.alive[0][j] && first.is_none_or(|b| dist[0][j] < dist[0][b]) {
            first = Some(j);
        }
    }
    let first = first.expect("layer 0 checked nonempty");
    let total = dist[0][first];
    atom_indices.push(first);
    signs.push(1);
    for layer in 1..n {
        let prev_atom = atom_indices[layer - 1];
        let mut best: Option<usize> = None;
        let mut best_val = f64::INFINITY;
        for l in 0..k {
            if !graph.alive[layer][l] {
                continue;
            }
            let val = graph.weights[layer - 1][[prev_atom, l]] + dist[layer][l];
            if val < best_val {
                best_val = val;
                best = Some(l);
            }
        }
        let chosen = best.expect("layer checked nonempty");
        let sign = signs[layer - 1] * graph.signs[layer - 1][[prev_atom, chosen]];
        atom_indices.push(chosen);
        signs.push(sign);
    }

    Ok(AlignedPath {
        atom_indices,
        signs,
        weight: total,
    })
}

/// Full record of the k alignment rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentRecord {
    pub site_count: usize,
    pub atom_count: usize,
    pub rounds: Vec<AlignedPath>,
    pub total_weight: f64,
}

/// The aligned per-site state produced by [`global_alignment`].
#[derive(Debug, Clone)]
pub struct AlignmentOutcome {
    pub dicts: Vec<Dictionary>,
    pub codes: Vec<SparseCode>,
    pub perms: Vec<SignedPermutation>,
    pub record: AlignmentRecord,
}

/// Run k rounds of shortest-path selection over all sites' dictionaries,
/// removing selected atoms after each round. Aligned position r holds round
/// r's selections, sign-resolved against site 0. Returns D_i P_i and P_i' S_i
/// together with the permutations and the round record.
pub fn global_alignment(dicts: &[Dictionary], codes: &[SparseCode]) -> Result<AlignmentOutcome> {
    if dicts.len() != codes.len() {
        return Err(Error::shape(
            "global_alignment",
            format!("{} code matrices", dicts.len()),
            format!("{} code matrices", codes.len()),
        ));
    }
    for (i, (d, s)) in dicts.iter().zip(codes.iter()).enumerate() {
        if d.atom_count() != s.atom_count() {
            return Err(Error::shape(
                "global_alignment",
                format!("S with {} rows (site {i})", d.atom_count()),
                format!("S with {} rows (site {i})", s.atom_count()),
            ));
        }
    }
    let mut graph = AlignmentGraph::build(dicts)?;
    let k = graph.atom_count();
    let n = graph.site_count();

    let mut rounds = Vec::with_capacity(k);
    let mut total_weight = 0.0;
    for _ in 0..k {
        let path = shortest_alignment_path(&graph)?;
        graph.remove_path(&path);
        total_weight += path.weight;
        rounds.push(path);
    }

    let mut perms = Vec::with_capacity(n);
    for site in 0..n {
        let perm = rounds.iter().map(|p| p.atom_indices[site]).collect();
        let signs = rounds.iter().map(|p| p.signs[site]).collect();
        perms.push(SignedPermutation::new(perm, signs)?);
    }

    let mut aligned_dicts = Vec::with_capacity(n);
    let mut aligned_codes = Vec::with_capacity(n);
    for ((dict, code), perm) in dicts.iter().zip(codes.iter()).zip(perms.iter()) {
        let (d, s) = apply_signed_permutation(dict, code, perm)?;
        aligned_dicts.push(d);
        aligned_codes.push(s);
    }

    Ok(AlignmentOutcome {
        dicts: aligned_dicts,
        codes: aligned_codes,
        perms,
        record: AlignmentRecord {
            site_count: n,
            atom_count: k,
            rounds,
            total_weight,
        },
    })
}
