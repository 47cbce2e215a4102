//! Distance kernels, their Gram matrices, closed-form scaling/split blocks on
//! regular trees, the exponential rank-one identity, and PSD components of
//! indefinite symmetric matrices.

use crate::tree::DistanceMatrix;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Eigenvalues this small relative to the spectral radius count as zero when
/// splitting a matrix into positive and negative components.
pub const EIG_ZERO_REL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("alpha must be positive, got {0}")]
    BadAlpha(f64),
    #[error("beta must be positive, got {0}")]
    BadBeta(f64),
    #[error("tabulated kernel has no value at distance {0} (table covers 0..={1})")]
    TabulatedOutOfRange(usize, usize),
    #[error("tabulated kernel values must be finite")]
    NonFiniteTable,
    #[error("empty kernel table")]
    EmptyTable,
    #[error("operation requires the exponential family")]
    ExponentialOnly,
    #[error("split block requires height >= 1")]
    ZeroHeight,
    #[error("branching factor must be >= 2, got {0}")]
    BadBranching(usize),
    #[error("matrix is not symmetric: max |M - M^T| = {0:.3e}")]
    Asymmetric(f64),
}

/// A kernel of tree distance: the matrix entry model `M_ij = f(dist(i, j))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `f(d) = alpha * exp(-beta * d)`
    Exponential { alpha: f64, beta: f64 },
    /// `f(d) = alpha * (1 + d)^(-beta)`
    ShiftedPowerLaw { alpha: f64, beta: f64 },
    /// Arbitrary values `f(0), f(1), ..`; evaluation beyond the table errors
    /// out rather than extrapolating.
    Tabulated { values: Vec<f64> },
}

impl KernelSpec {
    pub fn exponential(alpha: f64, beta: f64) -> Self {
        KernelSpec::Exponential { alpha, beta }
    }

    pub fn shifted_power_law(alpha: f64, beta: f64) -> Self {
        KernelSpec::ShiftedPowerLaw { alpha, beta }
    }

    pub fn tabulated(values: Vec<f64>) -> Result<Self, KernelError> {
        if values.is_empty() {
            return Err(KernelError::EmptyTable);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KernelError::NonFiniteTable);
        }
        Ok(KernelSpec::Tabulated { values })
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        match self {
            KernelSpec::Exponential { alpha, beta }
            | KernelSpec::ShiftedPowerLaw { alpha, beta } => {
                // NaN fails both checks
                if alpha.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                    return Err(KernelError::BadAlpha(*alpha));
                }
                if beta.is_nan() || *beta < 0.0 {
                    return Err(KernelError::BadBeta(*beta));
                }
                Ok(())
            }
            KernelSpec::Tabulated { values } => {
                if values.is_empty() {
                    Err(KernelError::EmptyTable)
                } else if values.iter().any(|v| !v.is_finite()) {
                    Err(KernelError::NonFiniteTable)
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Kernel value at integer distance `d`.
pub fn eval_kernel(spec: &KernelSpec, d: usize) -> Result<f64, KernelError> {
    match spec {
        KernelSpec::Exponential { alpha, beta } => Ok(alpha * (-beta * d as f64).exp()),
        KernelSpec::ShiftedPowerLaw { alpha, beta } => Ok(alpha * (1.0 + d as f64).powf(-beta)),
        KernelSpec::Tabulated { values } => values
            .get(d)
            .copied()
            .ok_or(KernelError::TabulatedOutOfRange(d, values.len() - 1)),
    }
}

/// Entrywise map of the kernel over a distance matrix: `M_ij = f(D_ij)`.
pub fn kernel_gram(spec: &KernelSpec, distances: &DistanceMatrix) -> Result<DMatrix<f64>, KernelError> {
    let n = distances.size();
    let max_d = distances.max_entry() as usize;
    let mut table = Vec::with_capacity(max_d + 1);
    for d in 0..=max_d {
        table.push(eval_kernel(spec, d)?);
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        table[distances.get(i, j) as usize]
    }))
}

/// Closed-form local scaling block of a height-`h` subtree of the full
/// `s`-ary tree, size `(h+1) x (h+1)`.
///
/// Entries group ordered pairs of layer nodes by the relative depth of their
/// lowest common ancestor; empty sums are zero.
pub fn scaling_block_closed_form(
    spec: &KernelSpec,
    s: usize,
    h: usize,
) -> Result<DMatrix<f64>, KernelError> {
    if s < 2 {
        return Err(KernelError::BadBranching(s));
    }
    let b = s as f64;
    let f = |d: usize| eval_kernel(spec, d);
    let mut block = DMatrix::zeros(h + 1, h + 1);
    for r in 0..=h {
        for t in r..=h {
            let mut total = 0.0;
            for l in 0..r.min(t) {
                total += (b - 1.0) * b.powi((r + t - l - 1) as i32) * f(r + t - 2 * l)?;
            }
            total += b.powi(r.max(t) as i32) * f(t - r)?;
            let v = total / b.powf((r + t) as f64 / 2.0);
            block[(r, t)] = v;
            block[(t, r)] = v;
        }
    }
    Ok(block)
}

/// Closed-form depth block of the wavelet span at a height-`h` internal node
/// of the full `s`-ary tree, size `h x h`.
///
/// Pairs on opposite sides of the split enter with a negative sign (all at
/// distance `r + t`); same-side pairs group like the scaling block. The block
/// is the leading principal submatrix of the height-`h+1` block.
pub fn split_block_closed_form(
    spec: &KernelSpec,
    s: usize,
    h: usize,
) -> Result<DMatrix<f64>, KernelError> {
    if s < 2 {
        return Err(KernelError::BadBranching(s));
    }
    if h == 0 {
        return Err(KernelError::ZeroHeight);
    }
    let b = s as f64;
    let f = |d: usize| eval_kernel(spec, d);
    let mut block = DMatrix::zeros(h, h);
    for r in 1..=h {
        for t in r..=h {
            let mut total = -b.powi((r + t - 2) as i32) * f(r + t)?;
            for l in 1..r.min(t) {
                total += (b - 1.0) * b.powi((r + t - l - 2) as i32) * f(r + t - 2 * l)?;
            }
            total += b.powi((r.max(t) - 1) as i32) * f(t - r)?;
            let v = total / b.powf((r + t - 2) as f64 / 2.0);
            block[(r - 1, t - 1)] = v;
            block[(t - 1, r - 1)] = v;
        }
    }
    Ok(block)
}

/// Compact exponential form of the split block, `A_rt = alpha q_r q_t
/// [theta^m + ((s-1)/s) sum_{a=1}^{m-1} theta^a - 1/s]` with `q_r = s^{r/2}
/// x^r`, `theta = 1/(s x^2)`, `x = e^{-beta}`, `m = min(r, t)`.
pub fn exp_split_block_compact(
    alpha: f64,
    beta: f64,
    s: usize,
    h: usize,
) -> Result<DMatrix<f64>, KernelError> {
    if s < 2 {
        return Err(KernelError::BadBranching(s));
    }
    if h == 0 {
        return Err(KernelError::ZeroHeight);
    }
    let b = s as f64;
    let x = (-beta).exp();
    let q = |r: usize| b.powf(r as f64 / 2.0) * x.powi(r as i32);
    let theta = 1.0 / (b * x * x);
    let mut block = DMatrix::zeros(h, h);
    for r in 1..=h {
        for t in 1..=h {
            let m = r.min(t);
            let mut bracket = theta.powi(m as i32) - 1.0 / b;
            for a in 1..m {
                bracket += (b - 1.0) / b * theta.powi(a as i32);
            }
            block[(r - 1, t - 1)] = alpha * q(r) * q(t) * bracket;
        }
    }
    Ok(block)
}

/// Compact exponential form of the local scaling block, indices `0..=h`.
pub fn exp_scaling_block_compact(
    alpha: f64,
    beta: f64,
    s: usize,
    h: usize,
) -> Result<DMatrix<f64>, KernelError> {
    if s < 2 {
        return Err(KernelError::BadBranching(s));
    }
    let b = s as f64;
    let x = (-beta).exp();
    let q = |r: usize| b.powf(r as f64 / 2.0) * x.powi(r as i32);
    let theta = 1.0 / (b * x * x);
    let mut block = DMatrix::zeros(h + 1, h + 1);
    for r in 0..=h {
        for t in 0..=h {
            let m = r.min(t);
            let mut bracket = theta.powi(m as i32);
            for a in 0..m {
                bracket += (b - 1.0) / b * theta.powi(a as i32);
            }
            block[(r, t)] = alpha * q(r) * q(t) * bracket;
        }
    }
    Ok(block)
}

/// Frobenius residual of the exponential rank-one identity
/// `A^{sc,(h)} = (0 ⊕ A^{(h)}) + alpha (1, q)(1, q)^T` with
/// `q_r = s^{r/2} e^{-beta r}`. Exponential kernels only.
pub fn rank_one_check(spec: &KernelSpec, s: usize, h: usize) -> Result<f64, KernelError> {
    let (alpha, beta) = match spec {
        KernelSpec::Exponential { alpha, beta } => (*alpha, *beta),
        _ => return Err(KernelError::ExponentialOnly),
    };
    let scaling = scaling_block_closed_form(spec, s, h)?;
    let mut model = DMatrix::zeros(h + 1, h + 1);
    if h > 0 {
        let split = split_block_closed_form(spec, s, h)?;
        model.view_mut((1, 1), (h, h)).copy_from(&split);
    }
    let b = s as f64;
    let v = DVector::from_fn(h + 1, |r, _| b.powf(r as f64 / 2.0) * (-beta * r as f64).exp());
    model += alpha * &v * v.transpose();
    Ok((scaling - model).norm())
}

/// Positive spectral component of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct PsdComponent {
    /// Number of retained positive modes.
    pub rank: usize,
    /// Retained eigenvectors, one column per mode, descending eigenvalue.
    pub eigenvectors: DMatrix<f64>,
    /// Retained (positive) eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// The rank-`rank` PSD Gram `U_r Λ_r U_r^T`.
    pub gram: DMatrix<f64>,
    /// Negative component `M^-` (always full, so `M = M^+ - M^-` when the
    /// rank is unrestricted).
    pub negative_gram: DMatrix<f64>,
    /// Set when a requested rank exceeded the number of positive modes.
    pub rank_truncated: bool,
}

/// Split a symmetric matrix into positive and negative spectral components,
/// optionally keeping only the top `rank` positive modes.
///
/// Eigenvalues within `EIG_ZERO_REL` of zero (relative to the spectral
/// radius) are treated as zero. Requesting more modes than exist returns all
/// positive modes with `rank_truncated` set.
pub fn psd_component(matrix: &DMatrix<f64>, rank: Option<usize>) -> Result<PsdComponent, KernelError> {
    let n = matrix.nrows();
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
        }
    }
    let scale = matrix.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if asym > 1e-9 * scale.max(1.0) {
        return Err(KernelError::Asymmetric(asym));
    }
    let sym = (matrix + matrix.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let radius = order
        .iter()
        .map(|&i| eig.eigenvalues[i].abs())
        .fold(0.0f64, f64::max);
    let cutoff = EIG_ZERO_REL * radius;

    let positive: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| eig.eigenvalues[i] > cutoff)
        .collect();
    let negative: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| eig.eigenvalues[i] < -cutoff)
        .collect();

    let requested = rank.unwrap_or(positive.len());
    let kept = requested.min(positive.len());
    let rank_truncated = requested > positive.len();

    let mut eigenvectors = DMatrix::zeros(n, kept);
    let mut eigenvalues = Vec::with_capacity(kept);
    let mut gram = DMatrix::zeros(n, n);
    for (col, &idx) in positive.iter().take(kept).enumerate() {
        let v = eig.eigenvectors.column(idx);
        eigenvectors.set_column(col, &v);
        eigenvalues.push(eig.eigenvalues[idx]);
        gram += eig.eigenvalues[idx] * &v * v.transpose();
    }
    let mut negative_gram = DMatrix::zeros(n, n);
    for &idx in &negative {
        let v = eig.eigenvectors.column(idx);
        negative_gram += (-eig.eigenvalues[idx]) * &v * v.transpose();
    }
    Ok(PsdComponent {
        rank: kept,
        eigenvectors,
        eigenvalues,
        gram,
        negative_gram,
        rank_truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::{assemble_basis, project_to_blocks};
    use crate::tree::{build_regular_tree, tree_distance_matrix};
    use approx::assert_relative_eq;
    use rand::prelude::*;

    #[test]
    fn eval_examples() {
        let fitted = KernelSpec::exponential(1.967, 1.235);
        assert_relative_eq!(eval_kernel(&fitted, 0).unwrap(), 1.967);
        let flat = KernelSpec::exponential(1.0, 0.0);
        for d in 0..5 {
            assert_relative_eq!(eval_kernel(&flat, d).unwrap(), 1.0);
        }
        let pl = KernelSpec::shifted_power_law(1.967, 2.153);
        assert_relative_eq!(
            eval_kernel(&pl, 1).unwrap(),
            1.967 * 2.0f64.powf(-2.153),
            epsilon = 1e-12
        );
        let tab = KernelSpec::tabulated(vec![1.0, 0.5]).unwrap();
        assert_relative_eq!(eval_kernel(&tab, 1).unwrap(), 0.5);
        assert_eq!(
            eval_kernel(&tab, 2),
            Err(KernelError::TabulatedOutOfRange(2, 1))
        );
    }

    #[test]
    fn kernel_spec_json_shape() {
        let spec = KernelSpec::exponential(1.5, 0.5);
        let json = serde_json::to_value(&spec).unwrap();
        assert_eq!(json["family"], "exponential");
        assert_eq!(json["alpha"], 1.5);
        let back: KernelSpec = serde_json::from_value(json).unwrap();
        assert_eq!(back, spec);
        let tab = KernelSpec::tabulated(vec![1.0, 0.2]).unwrap();
        let json = serde_json::to_value(&tab).unwrap();
        assert_eq!(json["family"], "tabulated");
        assert_eq!(json["values"][1], 0.2);
    }

    #[test]
    fn gram_on_depth1_binary() {
        let t = build_regular_tree(&[2], 1).unwrap();
        let d = tree_distance_matrix(&t);
        let g = kernel_gram(&KernelSpec::exponential(1.0, 1.0), &d).unwrap();
        let e1 = (-1.0f64).exp();
        let e2 = (-2.0f64).exp();
        let expect = DMatrix::from_row_slice(3, 3, &[1.0, e1, e1, e1, 1.0, e2, e1, e2, 1.0]);
        assert_relative_eq!((g.clone() - expect).norm(), 0.0, epsilon = 1e-15);
        // trace check for the eigenvalue example
        assert_eq!(g.trace(), 3.0);
        // exponential tree kernels are PSD
        let eig = g.symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-10 * eig.eigenvalues.amax());
    }

    #[test]
    fn constant_kernel_gram_is_rank_one() {
        let t = build_regular_tree(&[2, 2], 2).unwrap();
        let d = tree_distance_matrix(&t);
        let g = kernel_gram(&KernelSpec::tabulated(vec![0.7; 5]).unwrap(), &d).unwrap();
        let eig = g.symmetric_eigen();
        let mut vals: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_relative_eq!(vals[0], 0.7 * 7.0, epsilon = 1e-12);
        assert!(vals[1].abs() < 1e-12);
    }

    #[test]
    fn scaling_block_small_cases() {
        let spec = KernelSpec::exponential(1.0, 1.0);
        let a = scaling_block_closed_form(&spec, 2, 1).unwrap();
        let e1 = (-1.0f64).exp();
        let e2 = (-2.0f64).exp();
        assert_relative_eq!(a[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(a[(0, 1)], 2.0f64.sqrt() * e1, epsilon = 1e-14);
        assert_relative_eq!(a[(1, 1)], 1.0 + e2, epsilon = 1e-14);
        // h = 0 gives [f(0)]
        let a0 = scaling_block_closed_form(&spec, 2, 0).unwrap();
        assert_eq!(a0.nrows(), 1);
        assert_relative_eq!(a0[(0, 0)], 1.0);
        // ternary off-diagonal
        let a3 = scaling_block_closed_form(&spec, 3, 1).unwrap();
        assert_relative_eq!(a3[(0, 1)], 3.0f64.sqrt() * e1, epsilon = 1e-14);
    }

    #[test]
    fn split_block_small_cases() {
        let spec = KernelSpec::exponential(1.0, 1.0);
        let a = split_block_closed_form(&spec, 2, 1).unwrap();
        assert_relative_eq!(a[(0, 0)], 1.0 - (-2.0f64).exp(), epsilon = 1e-14);
        // constant kernel: same-side and opposite-side masses cancel exactly
        let c = KernelSpec::tabulated(vec![0.3; 20]).unwrap();
        for h in 1..=4 {
            let a = split_block_closed_form(&c, 2, h).unwrap();
            assert!(a.iter().all(|&v| v.abs() < 1e-14), "h={h}");
        }
        // nesting: the h block is the top-left corner of the h+1 block
        for s in [2usize, 3, 4] {
            for h in 1..=4 {
                let small = split_block_closed_form(&spec, s, h).unwrap();
                let big = split_block_closed_form(&spec, s, h + 1).unwrap();
                let corner = big.view((0, 0), (h, h)).into_owned();
                assert_relative_eq!((small - corner).norm(), 0.0, epsilon = 1e-13);
            }
        }
        assert_eq!(
            split_block_closed_form(&spec, 2, 0),
            Err(KernelError::ZeroHeight)
        );
    }

    #[test]
    fn closed_forms_match_haar_projection() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut decreasing = vec![1.5];
        for _ in 0..12 {
            let last = *decreasing.last().unwrap();
            decreasing.push(last * rng.gen_range(0.4..0.95));
        }
        let kernels = vec![
            KernelSpec::exponential(1.3, 0.7),
            KernelSpec::shifted_power_law(1.1, 1.4),
            KernelSpec::tabulated(decreasing).unwrap(),
        ];
        for spec in &kernels {
            for s in [2usize, 3] {
                for depth in 1..=3 {
                    let t = build_regular_tree(&vec![s; depth], depth).unwrap();
                    let gram = kernel_gram(spec, &tree_distance_matrix(&t)).unwrap();
                    let blocks = project_to_blocks(&gram, &assemble_basis(&t)).unwrap();
                    let sc = scaling_block_closed_form(spec, s, depth).unwrap();
                    assert_relative_eq!((blocks.scaling.clone() - sc).norm(), 0.0, epsilon = 1e-10);
                    for (&u, block) in &blocks.split {
                        let h = t.height(u);
                        let cf = split_block_closed_form(spec, s, h).unwrap();
                        assert_relative_eq!((block.clone() - cf).norm(), 0.0, epsilon = 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn exponential_compact_forms_match_grouped() {
        for s in [2usize, 3, 4] {
            for h in 1..=5 {
                let spec = KernelSpec::exponential(1.967, 1.235);
                let grouped = split_block_closed_form(&spec, s, h).unwrap();
                let compact = exp_split_block_compact(1.967, 1.235, s, h).unwrap();
                assert_relative_eq!((grouped - compact).norm(), 0.0, epsilon = 1e-12);
                let grouped = scaling_block_closed_form(&spec, s, h).unwrap();
                let compact = exp_scaling_block_compact(1.967, 1.235, s, h).unwrap();
                assert_relative_eq!((grouped - compact).norm(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rank_one_identity() {
        // h = 0: A^sc = [alpha], model = alpha * 1 * 1
        let spec = KernelSpec::exponential(1.0, 1.0);
        assert!(rank_one_check(&spec, 2, 0).unwrap() <= 1e-14);
        // explicit h = 1 arithmetic: A^sc_11 = (f(0) - f(2)) + 2 e^{-2}
        assert!(rank_one_check(&spec, 2, 1).unwrap() <= 1e-14);
        let fitted = KernelSpec::exponential(1.967, 1.235);
        assert!(rank_one_check(&fitted, 3, 2).unwrap() <= 1e-10 * 1.967);
        assert_eq!(
            rank_one_check(&KernelSpec::shifted_power_law(1.0, 1.0), 2, 1),
            Err(KernelError::ExponentialOnly)
        );
    }

    #[test]
    fn split_entries_positive_for_decreasing_kernels() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut vals = vec![rng.gen_range(0.5..2.0)];
            for _ in 0..12 {
                let last = *vals.last().unwrap();
                vals.push(last * rng.gen_range(0.2..0.95));
            }
            let spec = KernelSpec::tabulated(vals).unwrap();
            for s in [2usize, 3, 4] {
                for h in 1..=4 {
                    let a = split_block_closed_form(&spec, s, h).unwrap();
                    assert!(a.iter().all(|&v| v > 0.0), "s={s} h={h}");
                }
            }
        }
    }

    #[test]
    fn psd_component_cases() {
        // PSD input, full rank: output equals input
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let c = psd_component(&m, None).unwrap();
        assert_relative_eq!((c.gram.clone() - m).norm(), 0.0, epsilon = 1e-12);
        assert_eq!(c.rank, 2);
        assert!(!c.rank_truncated);

        // diag(2, -1) splits cleanly
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -1.0]);
        let c = psd_component(&m, None).unwrap();
        assert_relative_eq!(c.gram[(0, 0)], 2.0, epsilon = 1e-14);
        assert_relative_eq!(c.gram[(1, 1)], 0.0, epsilon = 1e-14);
        assert_relative_eq!(c.negative_gram[(1, 1)], 1.0, epsilon = 1e-14);

        // reconstruction identity on a random indefinite matrix
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut m = DMatrix::zeros(10, 10);
        for i in 0..10 {
            for j in i..10 {
                let v = rng.gen_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let c = psd_component(&m, None).unwrap();
        let recon = &c.gram - &c.negative_gram;
        assert!((recon - &m).norm() <= 1e-10 * m.norm());

        // over-requested rank flags rather than errors
        let c = psd_component(&m, Some(100)).unwrap();
        assert!(c.rank_truncated);
        assert!(c.rank <= 10);

        // min eigenvalue of the PSD part is nonnegative up to tolerance
        let eig = c.gram.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-10 * c.gram.norm());
    }
}
