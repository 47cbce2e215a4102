//! The root-sweep experiment: for every eligible root of a contracted
//! hierarchy, sample perfect binary subtrees, compare empirical embedding
//! Gram matrices against the kernel-induced theoretical Gram, and summarize
//! top-k alignment with global-shuffle and within-tree-shuffle baselines.
//!
//! Parallel over roots; every (root, tree) pair draws its randomness from an
//! independent substream of the master seed, so results do not depend on
//! scheduling.

use crate::hierarchy::{count_binary_subtrees, sample_binary_subtree, ContractedHierarchy};
use crate::kernel::{kernel_gram, KernelSpec};
use crate::spectra::{
    alignment_area, alignment_from_eigensystems, global_shuffle_gram, sym_eig,
    within_tree_shuffle_gram, EigenSystem, SpectraError,
};
use crate::tree::{build_regular_tree, tree_distance_matrix};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("no root admits a valid depth-{0} binary subtree")]
    NoEligibleRoots(usize),
    #[error("embedding has {rows} rows but the hierarchy has {nodes} nodes")]
    RowsMismatch { rows: usize, nodes: usize },
    #[error(transparent)]
    Hierarchy(#[from] crate::hierarchy::HierarchyError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Kernel(#[from] crate::kernel::KernelError),
    #[error(transparent)]
    Tree(#[from] crate::tree::TreeError),
}

/// Sweep parameters; defaults follow the experiment configuration
/// (depth-3 trees, up to 5000 samples per root).
#[derive(Debug, Clone, Serialize)]
pub struct SweepConfig {
    pub master_seed: u64,
    pub trees_per_root: usize,
    pub tree_depth: usize,
    /// Shuffle-baseline draws per sampled tree (each mode).
    pub baseline_repeats: usize,
    /// Control mode: re-draw the node-to-vector assignment from a fresh
    /// global permutation for every sampled tree. The resulting alignment
    /// should be statistically indistinguishable from the global-shuffle
    /// baseline.
    pub shuffle_input: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            master_seed: 0,
            trees_per_root: 5000,
            tree_depth: 3,
            baseline_repeats: 1000,
            shuffle_input: false,
        }
    }
}

/// splitmix64-style stream derivation: deterministic per (root, tree).
pub fn substream_seed(master: u64, a: u64, b: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e3779b97f4a7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(master) ^ a.wrapping_mul(0xa076_1d64_78bd_642f)) ^ b)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CurveStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub samples: usize,
}

fn curve_stats(curves: &[Vec<f64>]) -> CurveStats {
    if curves.is_empty() {
        return CurveStats::default();
    }
    let k = curves[0].len();
    let n = curves.len() as f64;
    let mut mean = vec![0.0; k];
    for c in curves {
        for (m, v) in mean.iter_mut().zip(c) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut sd = vec![0.0; k];
    if curves.len() > 1 {
        for c in curves {
            for ((s, v), m) in sd.iter_mut().zip(c).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut sd {
            *s = (*s / (n - 1.0)).sqrt();
        }
    }
    CurveStats {
        mean,
        sd,
        samples: curves.len(),
    }
}

/// Per-root sweep outcome.
#[derive(Debug, Clone, Serialize)]
pub struct RootReport {
    pub root: usize,
    pub root_name: String,
    pub trees: usize,
    pub curve_emp: CurveStats,
    pub curve_global: CurveStats,
    pub curve_within: CurveStats,
    pub areas_emp: Vec<f64>,
    pub areas_global: Vec<f64>,
    pub areas_within: Vec<f64>,
}

/// Full sweep outcome. `theory_gaps[k-1]` is the spectral gap of the
/// theoretical Gram above index k; alignment values at k cutting inside a
/// near-zero gap are basis-dependent.
#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub ambient: usize,
    pub theory_gaps: Vec<f64>,
    pub roots: Vec<RootReport>,
}

/// Run the sweep. `embedding_rows` holds one row per hierarchy node, in
/// hierarchy index order; the whole matrix doubles as the vocabulary pool
/// for global shuffles.
pub fn run_root_sweep(
    hierarchy: &ContractedHierarchy,
    embedding_rows: &DMatrix<f64>,
    kernel: &KernelSpec,
    config: &SweepConfig,
) -> Result<SweepReport, SweepError> {
    if embedding_rows.nrows() != hierarchy.len() {
        return Err(SweepError::RowsMismatch {
            rows: embedding_rows.nrows(),
            nodes: hierarchy.len(),
        });
    }
    let depth = config.tree_depth;
    let table = count_binary_subtrees(hierarchy, depth);
    let eligible: Vec<usize> = (0..hierarchy.len())
        .filter(|&u| table.count(u, depth) >= 1.0)
        .collect();
    if eligible.is_empty() {
        return Err(SweepError::NoEligibleRoots(depth));
    }

    let shape = build_regular_tree(&vec![2; depth], depth)?;
    let n = shape.node_count();
    let gram_th = kernel_gram(kernel, &tree_distance_matrix(&shape))?;
    let eig_th = sym_eig(&gram_th)?;
    let theory_gaps: Vec<f64> = (1..=n).map(|k| eig_th.gap(k)).collect();

    let roots: Result<Vec<RootReport>, SweepError> = eligible
        .par_iter()
        .map(|&root| {
            sweep_one_root(
                hierarchy,
                embedding_rows,
                &table,
                &eig_th,
                root,
                n,
                config,
            )
        })
        .collect();

    Ok(SweepReport {
        config: config.clone(),
        ambient: n,
        theory_gaps,
        roots: roots?,
    })
}

fn gather_rows(pool: &DMatrix<f64>, ids: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(ids.len(), pool.ncols(), |i, j| pool[(ids[i], j)])
}

fn sweep_one_root(
    hierarchy: &ContractedHierarchy,
    pool: &DMatrix<f64>,
    table: &crate::hierarchy::SubtreeCountTable,
    eig_th: &EigenSystem,
    root: usize,
    n: usize,
    config: &SweepConfig,
) -> Result<RootReport, SweepError> {
    let mut curves_emp = Vec::with_capacity(config.trees_per_root);
    let mut curves_global = Vec::new();
    let mut curves_within = Vec::new();
    let mut areas_emp = Vec::new();
    let mut areas_global = Vec::new();
    let mut areas_within = Vec::new();

    for t in 0..config.trees_per_root {
        let mut rng =
            ChaCha8Rng::seed_from_u64(substream_seed(config.master_seed, root as u64, t as u64));
        let nodes = sample_binary_subtree(hierarchy, table, root, config.tree_depth, &mut rng)?;
        let rows = if config.shuffle_input {
            // fresh global permutation of the node-to-vector map per tree
            let mut ids: Vec<usize> = (0..pool.nrows()).collect();
            use rand::seq::SliceRandom;
            ids.shuffle(&mut rng);
            gather_rows(pool, &ids[..n])
        } else {
            gather_rows(pool, &nodes)
        };
        let eig_emp = sym_eig(&(&rows * rows.transpose()))?;
        let curve = alignment_from_eigensystems(&eig_emp, eig_th, n);
        areas_emp.push(alignment_area(&curve.g, n));
        curves_emp.push(curve.g);

        for _ in 0..config.baseline_repeats {
            let gram = global_shuffle_gram(pool, n, &mut rng)?;
            let curve = alignment_from_eigensystems(&sym_eig(&gram)?, eig_th, n);
            areas_global.push(alignment_area(&curve.g, n));
            curves_global.push(curve.g);

            let gram = within_tree_shuffle_gram(&rows, &mut rng)?;
            let curve = alignment_from_eigensystems(&sym_eig(&gram)?, eig_th, n);
            areas_within.push(alignment_area(&curve.g, n));
            curves_within.push(curve.g);
        }
    }

    Ok(RootReport {
        root,
        root_name: hierarchy.name(root).to_string(),
        trees: config.trees_per_root,
        curve_emp: curve_stats(&curves_emp),
        curve_global: curve_stats(&curves_global),
        curve_within: curve_stats(&curves_within),
        areas_emp,
        areas_global,
        areas_within,
    })
}

/// Pooled mean/standard-error pair.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub samples: usize,
}

fn mean_se(values: impl Iterator<Item = f64> + Clone) -> MeanSe {
    let n = values.clone().count();
    if n == 0 {
        return MeanSe {
            mean: f64::NAN,
            se: f64::NAN,
            samples: 0,
        };
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    MeanSe {
        mean,
        se: (var / n as f64).sqrt(),
        samples: n,
    }
}

/// Sweep-level aggregation over every root and tree.
#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub area_emp: MeanSe,
    pub area_global: MeanSe,
    pub area_within: MeanSe,
    /// Mean excess of the empirical area over each baseline with the
    /// combined standard error; the headline statistics.
    pub excess_over_global: MeanSe,
    pub excess_over_within: MeanSe,
}

pub fn summarize(report: &SweepReport) -> SweepSummary {
    let emp = mean_se(report.roots.iter().flat_map(|r| r.areas_emp.iter().copied()));
    let global = mean_se(report.roots.iter().flat_map(|r| r.areas_global.iter().copied()));
    let within = mean_se(report.roots.iter().flat_map(|r| r.areas_within.iter().copied()));
    let combine = |a: MeanSe, b: MeanSe| MeanSe {
        mean: a.mean - b.mean,
        se: (a.se * a.se + b.se * b.se).sqrt(),
        samples: a.samples.min(b.samples),
    };
    SweepSummary {
        area_emp: emp,
        area_global: global,
        area_within: within,
        excess_over_global: combine(emp, global),
        excess_over_within: combine(emp, within),
    }
}

/// Alignment-curve CSV: one row per (root, k) with empirical and baseline
/// means/deviations and the theory-side spectral gap at k.
pub fn alignment_csv(report: &SweepReport) -> String {
    let mut out =
        String::from("root,k,g_emp,g_emp_sd,g_global_mean,g_global_sd,g_within_mean,g_within_sd,theory_gap\n");
    for root in &report.roots {
        for k in 0..report.ambient {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                root.root_name,
                k + 1,
                root.curve_emp.mean[k],
                root.curve_emp.sd[k],
                root.curve_global.mean[k],
                root.curve_global.sd[k],
                root.curve_within.mean[k],
                root.curve_within.sd[k],
                report.theory_gaps[k],
            ));
        }
    }
    out
}

/// Per-root alignment-area CSV.
pub fn area_csv(report: &SweepReport) -> String {
    let mut out = String::from(
        "root,trees,area_emp_mean,area_emp_se,area_global_mean,area_global_se,area_within_mean,area_within_se\n",
    );
    for root in &report.roots {
        let emp = mean_se(root.areas_emp.iter().copied());
        let global = mean_se(root.areas_global.iter().copied());
        let within = mean_se(root.areas_within.iter().copied());
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            root.root_name, root.trees, emp.mean, emp.se, global.mean, global.se, within.mean,
            within.se,
        ));
    }
    out
}
