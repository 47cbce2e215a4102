//! Symmetric eigendecomposition, spectral embeddings, coarse-to-fine ordering
//! verification, top-k eigenspace alignment, shuffle baselines, and
//! sin-theta stability checks.

use crate::haar::BlockDecomposition;
use crate::kernel::{self, KernelSpec};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpectraError {
    #[error("matrix is not symmetric: max |M - M^T| = {0:.3e}")]
    Asymmetric(f64),
    #[error("matrices have sizes {0} and {1}, expected equal")]
    SizeMismatch(usize, usize),
    #[error("k_max {0} exceeds matrix size {1}")]
    KTooLarge(usize, usize),
    #[error("embedding dimension must be at least 1")]
    ZeroDimension,
    #[error("need at least 2 vectors, got {0}")]
    TooFewVectors(usize),
    #[error("cannot draw {0} vectors from a pool of {1}")]
    PoolTooSmall(usize, usize),
    #[error("eigenvalue cluster {0}..{1} out of range for size {2}")]
    BadCluster(usize, usize, usize),
    #[error(transparent)]
    Kernel(#[from] kernel::KernelError),
}

/// Eigenvalues in decreasing order with matching orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    /// One column per eigenvalue, same order.
    pub vectors: DMatrix<f64>,
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Spectral gap above index `k` (1-based): `lambda_k - lambda_{k+1}`,
    /// infinite at the bottom of the spectrum.
    pub fn gap(&self, k: usize) -> f64 {
        if k < self.values.len() {
            self.values[k - 1] - self.values[k]
        } else {
            f64::INFINITY
        }
    }
}

/// Flip a vector so its largest-magnitude coordinate is positive.
pub fn canonical_sign(v: &mut nalgebra::DVectorViewMut<f64>) {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for i in 0..v.len() {
            v[i] = -v[i];
        }
    }
}

fn check_symmetric(matrix: &DMatrix<f64>, rel_tol: f64) -> Result<f64, SpectraError> {
    let n = matrix.nrows();
    let scale = matrix.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
        }
    }
    if asym > rel_tol * scale.max(1.0) {
        return Err(SpectraError::Asymmetric(asym));
    }
    Ok(scale)
}

/// Full symmetric eigendecomposition, eigenvalues descending, eigenvectors
/// sign-fixed so the largest-magnitude coordinate is positive.
pub fn sym_eig(matrix: &DMatrix<f64>) -> Result<EigenSystem, SpectraError> {
    check_symmetric(matrix, 1e-9)?;
    let sym = (matrix + matrix.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = matrix.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut values = Vec::with_capacity(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &idx) in order.iter().enumerate() {
        values.push(eig.eigenvalues[idx]);
        vectors.set_column(col, &eig.eigenvectors.column(idx));
        canonical_sign(&mut vectors.column_mut(col));
    }
    Ok(EigenSystem { values, vectors })
}

/// Spectral embedding `W = U_d Lambda_d^{1/2}` over the top positive modes.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    /// Row per item, one column per retained mode.
    pub w: DMatrix<f64>,
    pub retained: usize,
    pub requested: usize,
    /// Set when the source matrix had no positive eigenvalues at all.
    pub no_positive_modes: bool,
}

impl EmbeddingMatrix {
    pub fn gram(&self) -> DMatrix<f64> {
        &self.w * self.w.transpose()
    }
}

/// Build an embedding from the top `min(d, #positive modes)` positive
/// eigenmodes of a symmetric matrix. Negative modes are dropped, so the
/// embedding Gram is the rank-truncated PSD component of the input.
pub fn build_embedding(mstar: &DMatrix<f64>, d: usize) -> Result<EmbeddingMatrix, SpectraError> {
    if d == 0 {
        return Err(SpectraError::ZeroDimension);
    }
    let psd = kernel::psd_component(mstar, Some(d))?;
    let n = mstar.nrows();
    let mut w = DMatrix::zeros(n, psd.rank);
    for (col, &lambda) in psd.eigenvalues.iter().enumerate() {
        let scaled = psd.eigenvectors.column(col) * lambda.sqrt();
        w.set_column(col, &scaled);
    }
    Ok(EmbeddingMatrix {
        w,
        retained: psd.rank,
        requested: d,
        no_positive_modes: psd.rank == 0,
    })
}

/// One verified inequality family: `pass` iff the worst margin is above
/// `-tolerance`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CheckResult {
    pub pass: bool,
    /// Worst margin across the family; nonnegative when the chain holds
    /// exactly, slightly negative within tolerance when it holds numerically.
    pub slack: f64,
}

fn check(margins: impl IntoIterator<Item = f64>, tol: f64) -> CheckResult {
    let slack = margins.into_iter().fold(f64::INFINITY, f64::min);
    CheckResult {
        pass: slack >= -tol,
        slack: if slack == f64::INFINITY { 0.0 } else { slack },
    }
}

/// Checks tied to the exponential-kernel rank-one identity.
#[derive(Debug, Clone, Serialize)]
pub struct RankOneChecks {
    /// Frobenius residual of the rank-one relation; passes below
    /// `1e-10 * alpha`.
    pub residual: f64,
    pub residual_pass: bool,
    /// Alternating chain `l^sc_1 >= l^(L)_1 >= l^sc_2 >= ... >= l^sc_{L+1}`.
    pub alternating_chain: CheckResult,
    /// Placements `l^(L-k)_1 >= l^(L)_{k+1} >= l^sc_{k+2}` for `k = 1..L-1`.
    pub corollary_placements: CheckResult,
}

/// Outcome of the full spectral-ordering verification.
#[derive(Debug, Clone, Serialize)]
pub struct OrderingReport {
    pub scaling_eigenvalues: Vec<f64>,
    /// Split-block eigenvalues keyed by subtree height, descending.
    pub split_eigenvalues: BTreeMap<usize, Vec<f64>>,
    /// Slack tolerance used by every check: `1e-10 * ||M||_2`.
    pub tolerance: f64,
    /// The top of the spectrum is the leading scaling eigenvalue.
    pub perron_top: CheckResult,
    /// Leading scaling eigenvector has strictly positive level coefficients.
    pub scaling_leading_positive: CheckResult,
    /// Leading eigenvector of every split block is sign-coherent.
    pub split_leading_positive: CheckResult,
    /// Every split-block entry is positive (requires strictly decreasing f).
    pub split_entries_positive: CheckResult,
    /// Cauchy interlacing between consecutive-height split blocks.
    pub interlacing: CheckResult,
    /// Leading split eigenvalues are monotone in subtree height.
    pub coarse_to_fine: CheckResult,
    /// Present for exponential kernels on constant-branching trees.
    pub rank_one: Option<RankOneChecks>,
    /// Largest entrywise spread between same-height blocks of the input
    /// decomposition; a diagnostic, not a pass/fail check.
    pub same_height_spread: f64,
}

impl OrderingReport {
    /// True when every evaluated check holds.
    pub fn all_pass(&self) -> bool {
        let base = self.perron_top.pass
            && self.scaling_leading_positive.pass
            && self.split_leading_positive.pass
            && self.split_entries_positive.pass
            && self.interlacing.pass
            && self.coarse_to_fine.pass;
        let rank_one = self.rank_one.as_ref().is_none_or(|r| {
            r.residual_pass && r.alternating_chain.pass && r.corollary_placements.pass
        });
        base && rank_one
    }
}

fn ordering_from_height_blocks(
    scaling: &DMatrix<f64>,
    split_by_height: &BTreeMap<usize, DMatrix<f64>>,
    kernel_spec: &KernelSpec,
    constant_branching: Option<usize>,
    depth: usize,
    same_height_spread: f64,
) -> Result<OrderingReport, SpectraError> {
    let scaling_eig = sym_eig(scaling)?;
    let mut split_eigs: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut split_leading = Vec::new();
    let mut entry_margins = Vec::new();
    for (&h, block) in split_by_height {
        let eig = sym_eig(block)?;
        split_eigs.insert(h, eig.values.clone());
        let lead = eig.vectors.column(0);
        split_leading.extend(lead.iter().copied());
        entry_margins.extend(block.iter().copied());
    }
    let radius = scaling_eig
        .values
        .iter()
        .chain(split_eigs.values().flatten())
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let tol = 1e-10 * radius;

    let max_split = split_eigs
        .values()
        .flat_map(|v| v.iter())
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let perron_top = check([scaling_eig.values[0] - max_split], tol);
    let scaling_leading_positive = check(scaling_eig.vectors.column(0).iter().copied(), tol);
    let split_leading_positive = check(split_leading, tol);
    let split_entries_positive = check(entry_margins, tol);

    let mut interlace_margins = Vec::new();
    for &h in split_by_height.keys() {
        if let Some(upper) = split_eigs.get(&(h + 1)) {
            let low = &split_eigs[&h];
            for i in 0..h {
                interlace_margins.push(upper[i] - low[i]);
                interlace_margins.push(low[i] - upper[i + 1]);
            }
        }
    }
    let interlacing = check(interlace_margins, tol);

    let heights: Vec<usize> = split_eigs.keys().copied().collect();
    let mut coarse_margins = Vec::new();
    for w in heights.windows(2) {
        coarse_margins.push(split_eigs[&w[1]][0] - split_eigs[&w[0]][0]);
    }
    let coarse_to_fine = check(coarse_margins, tol);

    let rank_one = match (kernel_spec, constant_branching) {
        (KernelSpec::Exponential { alpha, .. }, Some(s)) if depth >= 1 => {
            let residual = kernel::rank_one_check(kernel_spec, s, depth)?;
            let sc = &scaling_eig.values;
            let root = &split_eigs[&depth];
            let mut chain = Vec::new();
            for k in 0..depth {
                chain.push(sc[k] - root[k]);
                chain.push(root[k] - sc[k + 1]);
            }
            let mut placements = Vec::new();
            for k in 1..depth {
                if let Some(lower) = split_eigs.get(&(depth - k)) {
                    placements.push(lower[0] - root[k]);
                }
                placements.push(root[k] - sc[k + 1]);
            }
            Some(RankOneChecks {
                residual,
                residual_pass: residual <= 1e-10 * alpha,
                alternating_chain: check(chain, tol),
                corollary_placements: check(placements, tol),
            })
        }
        _ => None,
    };

    Ok(OrderingReport {
        scaling_eigenvalues: scaling_eig.values,
        split_eigenvalues: split_eigs,
        tolerance: tol,
        perron_top,
        scaling_leading_positive,
        split_leading_positive,
        split_entries_positive,
        interlacing,
        coarse_to_fine,
        rank_one,
        same_height_spread,
    })
}

/// Evaluate every spectral-ordering claim on a block decomposition obtained
/// from a regular tree with a positive decreasing kernel. Violations are
/// reported in the result, never thrown.
pub fn verify_ordering(
    blocks: &BlockDecomposition,
    kernel_spec: &KernelSpec,
) -> Result<OrderingReport, SpectraError> {
    let tree = &blocks.tree;
    let mut by_height: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
    let mut spread = 0.0f64;
    for (&node, block) in &blocks.split {
        let h = tree.height(node);
        match by_height.get(&h) {
            None => {
                by_height.insert(h, block.clone());
            }
            Some(existing) => {
                let diff = (existing - block).amax();
                spread = spread.max(diff);
            }
        }
    }
    let profile = tree.profile();
    let constant = profile
        .first()
        .copied()
        .filter(|&s| profile.iter().all(|&b| b == s));
    ordering_from_height_blocks(
        &blocks.scaling,
        &by_height,
        kernel_spec,
        constant,
        tree.depth(),
        spread,
    )
}

/// Ordering verification straight from the closed-form blocks of the full
/// `s`-ary tree of the given depth; no Gram matrix is materialized.
pub fn verify_ordering_closed_form(
    kernel_spec: &KernelSpec,
    s: usize,
    depth: usize,
) -> Result<OrderingReport, SpectraError> {
    let scaling = kernel::scaling_block_closed_form(kernel_spec, s, depth)?;
    let mut split_by_height = BTreeMap::new();
    for h in 1..=depth {
        split_by_height.insert(h, kernel::split_block_closed_form(kernel_spec, s, h)?);
    }
    ordering_from_height_blocks(&scaling, &split_by_height, kernel_spec, Some(s), depth, 0.0)
}

/// Top-k eigenspace alignment curve between two symmetric matrices.
#[derive(Debug, Clone, Serialize)]
pub struct AlignmentCurve {
    /// `g(k) = ||U_k^T V_k||_F^2 / k` for `k = 1..=k_max`.
    pub g: Vec<f64>,
    /// Eigenvalue gap of the first matrix above each k (infinite at k = n);
    /// callers use these to detect cuts inside degenerate clusters.
    pub gaps_first: Vec<f64>,
    /// Same for the second matrix.
    pub gaps_second: Vec<f64>,
    /// Ambient dimension.
    pub n: usize,
}

/// Compute `g(k)` for `k = 1..=k_max` between the leading eigenspaces of two
/// equal-size symmetric matrices, using descending eigenvalue order.
pub fn topk_alignment(
    gram_first: &DMatrix<f64>,
    gram_second: &DMatrix<f64>,
    k_max: usize,
) -> Result<AlignmentCurve, SpectraError> {
    let n = gram_first.nrows();
    if gram_second.nrows() != n {
        return Err(SpectraError::SizeMismatch(n, gram_second.nrows()));
    }
    if k_max > n {
        return Err(SpectraError::KTooLarge(k_max, n));
    }
    let first = sym_eig(gram_first)?;
    let second = sym_eig(gram_second)?;
    Ok(alignment_from_eigensystems(&first, &second, k_max))
}

/// Alignment curve from precomputed eigensystems (shared by the sweep, which
/// reuses the theory-side decomposition across many trees).
pub fn alignment_from_eigensystems(
    first: &EigenSystem,
    second: &EigenSystem,
    k_max: usize,
) -> AlignmentCurve {
    let n = first.len();
    let cross = first.vectors.transpose() * &second.vectors;
    let mut g = Vec::with_capacity(k_max);
    let mut cum = 0.0;
    for k in 1..=k_max {
        // add the new ring: row k-1 and column k-1 up to index k-1
        for j in 0..k {
            cum += cross[(k - 1, j)] * cross[(k - 1, j)];
        }
        for i in 0..k - 1 {
            cum += cross[(i, k - 1)] * cross[(i, k - 1)];
        }
        g.push(cum / k as f64);
    }
    AlignmentCurve {
        g,
        gaps_first: (1..=k_max).map(|k| first.gap(k)).collect(),
        gaps_second: (1..=k_max).map(|k| second.gap(k)).collect(),
        n,
    }
}

/// Excess alignment over the random-subspace baseline,
/// `sum_k (g(k) - k/ambient)`.
pub fn alignment_area(g: &[f64], ambient: usize) -> f64 {
    g.iter()
        .enumerate()
        .map(|(i, &gk)| gk - (i + 1) as f64 / ambient as f64)
        .sum()
}

/// Shuffle-baseline variants for alignment nulls.
#[derive(Debug, Clone, Copy)]
pub enum ShuffleMode<'a> {
    /// Re-draw the n vectors from a larger vocabulary pool under a global
    /// permutation of the item-to-vector map.
    GlobalLabel { pool: &'a DMatrix<f64> },
    /// Permute the n rows in place; preserves the Gram spectrum and the
    /// multiset of vectors.
    WithinTree,
}

/// Gram matrix of the shuffled vector assignment.
pub fn shuffle_baseline(
    vectors: &DMatrix<f64>,
    mode: ShuffleMode,
    rng: &mut impl Rng,
) -> Result<DMatrix<f64>, SpectraError> {
    match mode {
        ShuffleMode::WithinTree => within_tree_shuffle_gram(vectors, rng),
        ShuffleMode::GlobalLabel { pool } => global_shuffle_gram(pool, vectors.nrows(), rng),
    }
}

/// Permute rows, then form the Gram. Rejects fewer than two rows.
pub fn within_tree_shuffle_gram(
    vectors: &DMatrix<f64>,
    rng: &mut impl Rng,
) -> Result<DMatrix<f64>, SpectraError> {
    let n = vectors.nrows();
    if n < 2 {
        return Err(SpectraError::TooFewVectors(n));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let permuted = DMatrix::from_fn(n, vectors.ncols(), |i, j| vectors[(perm[i], j)]);
    Ok(&permuted * permuted.transpose())
}

/// Draw `n` distinct rows from `pool` (a uniform random injection, as induced
/// by a global permutation of the vocabulary-to-vector map) and form their
/// Gram.
pub fn global_shuffle_gram(
    pool: &DMatrix<f64>,
    n: usize,
    rng: &mut impl Rng,
) -> Result<DMatrix<f64>, SpectraError> {
    if n > pool.nrows() {
        return Err(SpectraError::PoolTooSmall(n, pool.nrows()));
    }
    let mut idx: Vec<usize> = (0..pool.nrows()).collect();
    idx.shuffle(rng);
    idx.truncate(n);
    let rows = DMatrix::from_fn(n, pool.ncols(), |i, j| pool[(idx[i], j)]);
    Ok(&rows * rows.transpose())
}

/// Result of a sin-theta stability check for one eigenvalue cluster.
#[derive(Debug, Clone, Serialize)]
pub struct DavisKahanReport {
    /// Operator norm of `sin Theta(U, U_hat)` between the cluster eigenspaces
    /// of the clean and perturbed matrices.
    pub sin_theta: f64,
    /// `||E||_2 / gap`; only meaningful when `applicable`.
    pub bound: f64,
    pub gap: f64,
    pub perturbation_norm: f64,
    /// False when the gap does not dominate the perturbation, in which case
    /// the bound carries no information.
    pub applicable: bool,
    /// `sin_theta <= bound` (up to roundoff); only meaningful when applicable.
    pub holds: bool,
}

/// Compare the invariant subspace spanned by the eigenvalue cluster
/// `cluster` (indices into the descending spectrum of `m0`) before and after
/// adding a symmetric perturbation.
pub fn davis_kahan_check(
    m0: &DMatrix<f64>,
    perturbation: &DMatrix<f64>,
    cluster: std::ops::Range<usize>,
) -> Result<DavisKahanReport, SpectraError> {
    let n = m0.nrows();
    if perturbation.nrows() != n {
        return Err(SpectraError::SizeMismatch(n, perturbation.nrows()));
    }
    if cluster.is_empty() || cluster.end > n {
        return Err(SpectraError::BadCluster(cluster.start, cluster.end, n));
    }
    let clean = sym_eig(m0)?;
    let perturbed = sym_eig(&(m0 + perturbation))?;
    let e_norm = {
        let eig = ((perturbation + perturbation.transpose()) * 0.5).symmetric_eigen();
        eig.eigenvalues.amax()
    };
    let top_gap = if cluster.start == 0 {
        f64::INFINITY
    } else {
        clean.values[cluster.start - 1] - clean.values[cluster.start]
    };
    let bottom_gap = if cluster.end == n {
        f64::INFINITY
    } else {
        clean.values[cluster.end - 1] - clean.values[cluster.end]
    };
    let gap = top_gap.min(bottom_gap);

    let k = cluster.len();
    let u = clean.vectors.columns(cluster.start, k);
    let u_hat = perturbed.vectors.columns(cluster.start, k);
    let overlap = u.transpose() * u_hat;
    let svd = overlap.svd(false, false);
    let sigma_min = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .clamp(0.0, 1.0);
    let sin_theta = (1.0 - sigma_min * sigma_min).max(0.0).sqrt();

    let applicable = e_norm < gap;
    let bound = if gap > 0.0 { e_norm / gap } else { f64::INFINITY };
    Ok(DavisKahanReport {
        sin_theta,
        bound,
        gap,
        perturbation_norm: e_norm,
        applicable,
        holds: sin_theta <= bound + 1e-12,
    })
}
