//! Hierarchy-adapted orthonormal basis (scaling + wavelet modes) on regular
//! trees, and projection of symmetric matrices into its block structure.
//!
//! The scaling mode at level `l` is the normalized indicator of the depth-`l`
//! layer. The wavelet modes at an internal node `u` contrast its child
//! subtrees: for relative depth `r` and contrast index `a`,
//!
//! ```text
//! psi_{u,r,a} = N^{-1/2} * sum_q c^{(a)}_q * sum_{i in T_{r-1}(u_q)} e_i
//! ```
//!
//! where `c^(1)..c^(b-1)` is a fixed orthonormal basis of the zero-sum
//! subspace of R^b and `N` is the number of nodes of one child subtree at
//! relative depth `r-1`. For binary nodes this reduces to the classic
//! `2^{-r/2} (sum over left descendants - sum over right descendants)`.
//!
//! A distance kernel on a regular tree is block diagonal in this basis, with
//! one block on the scaling span and, for each internal node, a depth block
//! acting as the identity on the contrast index.

use crate::tree::TreeTopology;
use nalgebra::DMatrix;
use serde::Serialize;
use std::collections::BTreeMap;
use std::ops::Range;
use thiserror::Error;

/// Orthonormality tolerance for double precision on trees up to depth 6.
pub const ORTHO_TOL: f64 = 1e-12;
/// Relative tolerance for the off-block residual of exact distance kernels.
pub const BLOCK_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum HaarError {
    #[error("level {0} out of range (depth {1})")]
    LevelOutOfRange(usize, usize),
    #[error("node {0} is a leaf; wavelet modes require an internal node")]
    LeafNode(usize),
    #[error("matrix is {got}x{got} but the basis has {expected} nodes")]
    SizeMismatch { got: usize, expected: usize },
    #[error("matrix is not symmetric: max |M - M^T| = {0:.3e} exceeds tolerance")]
    Asymmetric(f64),
}

/// What a mode is, in tree terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    /// Normalized indicator of one depth layer.
    Scaling { level: usize },
    /// Child-subtree contrast at `node`, relative depth `rel_depth`,
    /// contrast index `contrast` (1-based, up to branching - 1).
    Wavelet {
        node: usize,
        rel_depth: usize,
        contrast: usize,
    },
}

/// A basis vector stored as constant-value index ranges. Supports are unions
/// of consecutive breadth-first ranges, so this is exact and compact.
#[derive(Debug, Clone)]
pub struct HaarMode {
    pub kind: ModeKind,
    segments: Vec<(Range<usize>, f64)>,
}

impl HaarMode {
    pub fn segments(&self) -> &[(Range<usize>, f64)] {
        &self.segments
    }

    pub fn support_size(&self) -> usize {
        self.segments.iter().map(|(r, _)| r.len()).sum()
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for (range, val) in &self.segments {
            for i in range.clone() {
                v[i] = *val;
            }
        }
        v
    }

    /// Euclidean inner product with another mode.
    pub fn dot(&self, other: &HaarMode) -> f64 {
        let mut acc = 0.0;
        for (ra, va) in &self.segments {
            for (rb, vb) in &other.segments {
                let lo = ra.start.max(rb.start);
                let hi = ra.end.min(rb.end);
                if lo < hi {
                    acc += (hi - lo) as f64 * va * vb;
                }
            }
        }
        acc
    }

    /// `self^T M other` for a dense symmetric matrix.
    pub fn bilinear(&self, matrix: &DMatrix<f64>, other: &HaarMode) -> f64 {
        let mut acc = 0.0;
        for (ra, va) in &self.segments {
            for i in ra.clone() {
                let mut row = 0.0;
                for (rb, vb) in &other.segments {
                    let mut s = 0.0;
                    for j in rb.clone() {
                        s += matrix[(i, j)];
                    }
                    row += s * vb;
                }
                acc += va * row;
            }
        }
        acc
    }
}

/// Orthonormal basis of the vertex space of `tree`.
#[derive(Debug, Clone)]
pub struct HaarBasis {
    tree: TreeTopology,
    modes: Vec<HaarMode>,
    /// Mode ids of the scaling modes, by level.
    scaling_ids: Vec<usize>,
    /// Mode ids per internal node, ordered by (rel_depth, contrast).
    wavelet_ids: BTreeMap<usize, Vec<usize>>,
}

/// Deterministic orthonormal basis of the zero-sum subspace of R^b:
/// Gram-Schmidt on (e_1 - e_q), q = 2..b, in child order.
pub fn contrast_basis(b: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(b - 1);
    for q in 1..b {
        let mut v = vec![0.0; b];
        v[0] = 1.0;
        v[q] = -1.0;
        for u in &basis {
            let proj: f64 = v.iter().zip(u).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= proj * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        basis.push(v);
    }
    basis
}

/// Normalized indicator of the depth-`level` layer.
pub fn scaling_mode(tree: &TreeTopology, level: usize) -> Result<HaarMode, HaarError> {
    let range = tree
        .level_nodes(level)
        .map_err(|_| HaarError::LevelOutOfRange(level, tree.depth()))?;
    let val = 1.0 / (range.len() as f64).sqrt();
    Ok(HaarMode {
        kind: ModeKind::Scaling { level },
        segments: vec![(range, val)],
    })
}

/// All wavelet modes rooted at `node`: `h(node) * (b - 1)` unit vectors,
/// ordered by (rel_depth, contrast).
pub fn wavelet_modes(tree: &TreeTopology, node: usize) -> Result<Vec<HaarMode>, HaarError> {
    if tree.is_leaf(node) {
        return Err(HaarError::LeafNode(node));
    }
    let b = tree.profile()[tree.node_depth(node)];
    let h = tree.height(node);
    let contrasts = contrast_basis(b);
    let children: Vec<usize> = tree.children(node).collect();
    let mut modes = Vec::with_capacity(h * (b - 1));
    for r in 1..=h {
        let per_child = tree.descendants_at(children[0], r - 1).len();
        let norm = 1.0 / (per_child as f64).sqrt();
        for (a, c) in contrasts.iter().enumerate() {
            let segments = children
                .iter()
                .zip(c)
                .map(|(&child, &cq)| (tree.descendants_at(child, r - 1), cq * norm))
                .collect();
            modes.push(HaarMode {
                kind: ModeKind::Wavelet {
                    node,
                    rel_depth: r,
                    contrast: a + 1,
                },
                segments,
            });
        }
    }
    Ok(modes)
}

/// Assemble the complete basis: scaling modes for every level, wavelet modes
/// for every internal node.
pub fn assemble_basis(tree: &TreeTopology) -> HaarBasis {
    let mut modes = Vec::new();
    let mut scaling_ids = Vec::with_capacity(tree.depth() + 1);
    for level in 0..=tree.depth() {
        scaling_ids.push(modes.len());
        modes.push(scaling_mode(tree, level).expect("level in range"));
    }
    let mut wavelet_ids = BTreeMap::new();
    for node in 0..tree.node_count() {
        if tree.is_leaf(node) {
            continue;
        }
        let ws = wavelet_modes(tree, node).expect("internal node");
        let ids = (modes.len()..modes.len() + ws.len()).collect();
        wavelet_ids.insert(node, ids);
        modes.extend(ws);
    }
    HaarBasis {
        tree: tree.clone(),
        modes,
        scaling_ids,
        wavelet_ids,
    }
}

impl HaarBasis {
    pub fn tree(&self) -> &TreeTopology {
        &self.tree
    }

    pub fn modes(&self) -> &[HaarMode] {
        &self.modes
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    /// Completeness: one mode per node.
    pub fn is_complete(&self) -> bool {
        self.modes.len() == self.tree.node_count()
    }

    pub fn scaling(&self, level: usize) -> &HaarMode {
        &self.modes[self.scaling_ids[level]]
    }

    /// Wavelet modes at `node`, ordered by (rel_depth, contrast).
    pub fn wavelets(&self, node: usize) -> Option<Vec<&HaarMode>> {
        self.wavelet_ids
            .get(&node)
            .map(|ids| ids.iter().map(|&i| &self.modes[i]).collect())
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.wavelet_ids.keys().copied()
    }

    /// Largest deviation from orthonormality, `max |<m_i, m_j> - delta_ij>|`.
    ///
    /// Two modes can only overlap when they live on the same depth layer and
    /// one mode's root is an ancestor of the other's, so only those pairs are
    /// evaluated; every skipped pair is disjoint-support and exactly zero.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        // scaling-scaling: disjoint layers except self
        for l in 0..self.scaling_ids.len() {
            let phi = self.scaling(l);
            worst = worst.max((phi.dot(phi) - 1.0).abs());
        }
        for (&v, ids) in &self.wavelet_ids {
            for &id in ids {
                let mode = &self.modes[id];
                let ModeKind::Wavelet { rel_depth: t, .. } = mode.kind else {
                    unreachable!()
                };
                let layer = self.tree.node_depth(v) + t;
                // against the scaling mode on the same layer
                worst = worst.max(mode.dot(self.scaling(layer)).abs());
                // against wavelets rooted at v itself and at proper ancestors,
                // restricted to the same layer
                let mut ancestor = Some(v);
                while let Some(u) = ancestor {
                    if let Some(other_ids) = self.wavelet_ids.get(&u) {
                        let r = layer - self.tree.node_depth(u);
                        if (1..=self.tree.height(u)).contains(&r) {
                            for &oid in other_ids {
                                if oid > id {
                                    continue; // count each pair once
                                }
                                let other = &self.modes[oid];
                                let ModeKind::Wavelet { rel_depth, .. } = other.kind else {
                                    unreachable!()
                                };
                                if rel_depth != r {
                                    continue;
                                }
                                let target = if oid == id { 1.0 } else { 0.0 };
                                worst = worst.max((mode.dot(other) - target).abs());
                            }
                        }
                    }
                    ancestor = self.tree.parent(u);
                }
            }
        }
        worst
    }
}

/// A symmetric matrix expressed in the hierarchy-adapted basis.
///
/// `split` maps each internal node to its depth block (size `h(u)`); on the
/// full wavelet span the block acts as (depth block) tensor (identity on
/// contrasts). `off_block_residual` is the Frobenius mass outside this
/// structure, zero (up to roundoff) for exact distance kernels.
#[derive(Debug, Clone)]
pub struct BlockDecomposition {
    pub tree: TreeTopology,
    pub scaling: DMatrix<f64>,
    pub split: BTreeMap<usize, DMatrix<f64>>,
    pub off_block_residual: f64,
    pub input_frobenius: f64,
}

#[derive(Serialize)]
struct BlockDecompositionWire {
    depth: usize,
    profile: Vec<usize>,
    scaling: Vec<Vec<f64>>,
    split: BTreeMap<String, Vec<Vec<f64>>>,
    off_block_residual: f64,
    input_frobenius: f64,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl BlockDecomposition {
    /// Relative off-block residual, `residual / ||M||_F`.
    pub fn relative_residual(&self) -> f64 {
        if self.input_frobenius == 0.0 {
            0.0
        } else {
            self.off_block_residual / self.input_frobenius
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let wire = BlockDecompositionWire {
            depth: self.tree.depth(),
            profile: self.tree.profile().to_vec(),
            scaling: matrix_rows(&self.scaling),
            split: self
                .split
                .iter()
                .map(|(node, m)| (node.to_string(), matrix_rows(m)))
                .collect(),
            off_block_residual: self.off_block_residual,
            input_frobenius: self.input_frobenius,
        };
        serde_json::to_value(wire).expect("plain data serializes")
    }
}

/// Project a symmetric matrix onto the scaling block and the per-node depth
/// blocks of `basis`.
///
/// The depth block at `u` is the contrast-average `A_rt = mean_a psi_{u,r,a}^T
/// M psi_{u,t,a}`, which is the orthogonal projection of the full wavelet
/// block onto the (depth) tensor (contrast identity) structure. The residual
/// collects everything the structure misses: cross-block entries and any
/// contrast mixing.
pub fn project_to_blocks(
    matrix: &DMatrix<f64>,
    basis: &HaarBasis,
) -> Result<BlockDecomposition, HaarError> {
    let n = basis.tree().node_count();
    if matrix.nrows() != n || matrix.ncols() != n {
        return Err(HaarError::SizeMismatch {
            got: matrix.nrows(),
            expected: n,
        });
    }
    let scale = matrix.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
        }
    }
    if asym > 1e-10 * scale.max(1.0) {
        return Err(HaarError::Asymmetric(asym));
    }

    // w = M * mode, then inner products against every mode.
    let apply = |mode: &HaarMode| -> Vec<f64> {
        let mut w = vec![0.0; n];
        for (range, val) in mode.segments() {
            for j in range.clone() {
                let col = matrix.column(j);
                for i in 0..n {
                    w[i] += col[i] * val;
                }
            }
        }
        w
    };
    let dot_mode = |mode: &HaarMode, w: &[f64]| -> f64 {
        let mut acc = 0.0;
        for (range, val) in mode.segments() {
            let mut s = 0.0;
            for i in range.clone() {
                s += w[i];
            }
            acc += s * val;
        }
        acc
    };

    // Which structural block each mode belongs to: the scaling span or one
    // node's wavelet span (with its local position).
    #[derive(Clone, Copy, PartialEq)]
    enum Slot {
        Scaling(usize),
        Wavelet { node: usize, local: usize },
    }
    let tree = basis.tree().clone();
    let levels = tree.depth() + 1;
    let mut slots = Vec::with_capacity(basis.mode_count());
    for mode in basis.modes() {
        slots.push(match mode.kind {
            ModeKind::Scaling { level } => Slot::Scaling(level),
            ModeKind::Wavelet {
                node,
                rel_depth,
                contrast,
            } => {
                let b = tree.profile()[tree.node_depth(node)];
                Slot::Wavelet {
                    node,
                    local: (rel_depth - 1) * (b - 1) + (contrast - 1),
                }
            }
        });
    }

    // Full within-block matrices; cross-block entries feed the residual
    // directly (each small, so no cancellation).
    let mut scaling = DMatrix::zeros(levels, levels);
    let mut full_blocks: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
    for u in basis.internal_nodes() {
        let b = tree.profile()[tree.node_depth(u)];
        let dim = tree.height(u) * (b - 1);
        full_blocks.insert(u, DMatrix::zeros(dim, dim));
    }
    let mut cross_sq = 0.0f64;
    for q in 0..basis.mode_count() {
        let w = apply(&basis.modes()[q]);
        for p in 0..=q {
            let v = dot_mode(&basis.modes()[p], &w);
            match (slots[p], slots[q]) {
                (Slot::Scaling(l), Slot::Scaling(m)) => {
                    scaling[(l, m)] = v;
                    scaling[(m, l)] = v;
                }
                (
                    Slot::Wavelet { node: nu, local: lp },
                    Slot::Wavelet { node: nv, local: lq },
                ) if nu == nv => {
                    let block = full_blocks.get_mut(&nu).expect("internal node");
                    block[(lp, lq)] = v;
                    block[(lq, lp)] = v;
                }
                _ => {
                    // symmetric counterpart counted once
                    cross_sq += if p == q { v * v } else { 2.0 * v * v };
                }
            }
        }
    }

    // Depth block per node: contrast-average of the same-contrast sub-blocks
    // (the orthogonal projection of the full block onto depth x identity);
    // what the projection misses joins the residual.
    let mut split = BTreeMap::new();
    let mut structure_sq = 0.0f64;
    for (u, full) in full_blocks {
        let h = tree.height(u);
        let b = tree.profile()[tree.node_depth(u)];
        let contrasts = b - 1;
        let mut block = DMatrix::zeros(h, h);
        for r in 0..h {
            for t in 0..h {
                let mut acc = 0.0;
                for a in 0..contrasts {
                    acc += full[(r * contrasts + a, t * contrasts + a)];
                }
                block[(r, t)] = acc / contrasts as f64;
            }
        }
        for r in 0..h {
            for t in 0..h {
                for a in 0..contrasts {
                    for a2 in 0..contrasts {
                        let target = if a == a2 { block[(r, t)] } else { 0.0 };
                        let dev = full[(r * contrasts + a, t * contrasts + a2)] - target;
                        structure_sq += dev * dev;
                    }
                }
            }
        }
        split.insert(u, block);
    }

    let input_frobenius = matrix.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(BlockDecomposition {
        tree,
        scaling,
        split,
        off_block_residual: (cross_sq + structure_sq).sqrt(),
        input_frobenius,
    })
}
