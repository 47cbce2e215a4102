//! Distance-binned estimation of the mean normalized co-occurrence with
//! Kish-weighted standard errors, weighted log-linear kernel fits, and the
//! LCA-conditioned decay diagnostic.

use crate::hierarchy::WeightedPair;
use crate::kernel::KernelSpec;
use crate::tree::{build_regular_tree, TreeTopology};
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

/// Fits use distances `0..=DEFAULT_MAX_DISTANCE` unless told otherwise.
pub const DEFAULT_MAX_DISTANCE: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least 2 usable bins (positive finite mean), got {0}")]
    TooFewBins(usize),
}

/// Weighted running moments for one distance bin. Mergeable across shards.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BinStats {
    pub sum_w: f64,
    pub sum_wx: f64,
    pub sum_wx2: f64,
    pub sum_w2: f64,
    pub n_raw: usize,
}

impl BinStats {
    pub fn push(&mut self, x: f64, w: f64) {
        self.sum_w += w;
        self.sum_wx += w * x;
        self.sum_wx2 += w * x * x;
        self.sum_w2 += w * w;
        self.n_raw += 1;
    }

    pub fn merge(&mut self, other: &BinStats) {
        self.sum_w += other.sum_w;
        self.sum_wx += other.sum_wx;
        self.sum_wx2 += other.sum_wx2;
        self.sum_w2 += other.sum_w2;
        self.n_raw += other.n_raw;
    }

    pub fn mean(&self) -> f64 {
        self.sum_wx / self.sum_w
    }

    /// Kish effective sample size `(sum w)^2 / sum w^2`.
    pub fn n_eff(&self) -> f64 {
        self.sum_w * self.sum_w / self.sum_w2
    }

    /// Standard error of the weighted mean: frequency-weighted variance with
    /// the Kish effective count, `se^2 = [sum w (x - mean)^2 / sum w] /
    /// (n_eff - 1)`. Infinite when `n_eff <= 1`.
    pub fn se(&self) -> f64 {
        let n_eff = self.n_eff();
        if n_eff <= 1.0 {
            return f64::INFINITY;
        }
        let var = (self.sum_wx2 / self.sum_w - self.mean() * self.mean()).max(0.0);
        (var / (n_eff - 1.0)).sqrt()
    }
}

/// Per-distance weighted decay estimates.
#[derive(Debug, Clone, Default, Serialize)]
pub struct DecayBins {
    pub bins: BTreeMap<usize, BinStats>,
}

impl DecayBins {
    pub fn merge(&self, other: &DecayBins) -> DecayBins {
        let mut out = self.clone();
        for (&d, stats) in &other.bins {
            out.bins.entry(d).or_default().merge(stats);
        }
        out
    }

    /// CSV rows `d,mean,se,n_eff,n_raw` in distance order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("d,mean,se,n_eff,n_raw\n");
        for (d, stats) in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                d,
                stats.mean(),
                stats.se(),
                stats.n_eff(),
                stats.n_raw
            ));
        }
        out
    }
}

/// Aggregate weighted pairs into per-distance bins, reading values through
/// the provided accessor. Distances with no pairs simply never appear.
pub fn binned_decay(
    pairs: &[WeightedPair],
    mut value: impl FnMut(usize, usize) -> f64,
) -> DecayBins {
    let mut bins = DecayBins::default();
    for p in pairs {
        let x = value(p.i, p.j);
        bins.bins.entry(p.distance).or_default().push(x, p.weight);
    }
    bins
}

/// A fitted parametric kernel together with its per-bin log-scale residuals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FittedKernel {
    pub spec: KernelSpec,
    /// `(distance, log mean - fitted log value)` for every used bin.
    pub residuals: Vec<(usize, f64)>,
    pub used_bins: Vec<usize>,
    /// Regression standard error of the decay rate (GLS form,
    /// `1/sqrt(sum w (x - xbar)^2)` with inverse-variance weights); infinite
    /// when the weights carry no uncertainty information.
    pub beta_se: f64,
}

fn weighted_log_linear(
    points: &[(f64, f64, f64)], // (regressor, log mean, weight)
) -> (f64, f64, f64) {
    let sw: f64 = points.iter().map(|p| p.2).sum();
    let xb: f64 = points.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let yb: f64 = points.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = points.iter().map(|p| p.2 * (p.0 - xb) * (p.0 - xb)).sum();
    let sxy: f64 = points.iter().map(|p| p.2 * (p.0 - xb) * (p.1 - yb)).sum();
    let slope = sxy / sxx;
    (yb - slope * xb, slope, 1.0 / sxx.sqrt())
}

fn fit_log_linear(
    bins: &DecayBins,
    regressor: impl Fn(usize) -> f64,
) -> Result<(f64, f64, f64, Vec<(usize, f64)>, Vec<usize>), FitError> {
    // usable bins: positive finite mean
    let usable: Vec<(usize, f64, f64)> = bins
        .bins
        .iter()
        .filter_map(|(&d, s)| {
            let m = s.mean();
            (m > 0.0 && m.is_finite()).then(|| (d, m, s.se()))
        })
        .collect();
    if usable.len() < 2 {
        return Err(FitError::TooFewBins(usable.len()));
    }
    // Weights are the inverse variance of each regressand log(mean); the bin
    // standard error propagates as se(log mean) = se / mean. Exact bins
    // (se = 0) carry all the information, so when any exist the fit runs on
    // just those with equal weights; if no bin has a finite positive se the
    // fit falls back to equal weights.
    let exact: Vec<&(usize, f64, f64)> = usable.iter().filter(|(_, _, se)| *se == 0.0).collect();
    let mut se_override = None;
    let points: Vec<(f64, f64, f64)> = if !exact.is_empty() {
        se_override = Some(0.0); // exact points pin the parameters
        exact
            .iter()
            .map(|(d, m, _)| (regressor(*d), m.ln(), 1.0))
            .collect()
    } else if usable.iter().all(|(_, _, se)| !se.is_finite()) {
        se_override = Some(f64::INFINITY); // no uncertainty information at all
        usable
            .iter()
            .map(|(d, m, _)| (regressor(*d), m.ln(), 1.0))
            .collect()
    } else {
        usable
            .iter()
            .filter(|(_, _, se)| se.is_finite())
            .map(|(d, m, se)| (regressor(*d), m.ln(), (m / se) * (m / se)))
            .collect()
    };
    if points.len() < 2 {
        return Err(FitError::TooFewBins(points.len()));
    }
    let (intercept, slope, slope_se) = weighted_log_linear(&points);
    let slope_se = se_override.unwrap_or(slope_se);
    let used: Vec<usize> = usable.iter().map(|(d, _, _)| *d).collect();
    let residuals = usable
        .iter()
        .map(|(d, m, _)| (*d, m.ln() - (intercept + slope * regressor(*d))))
        .collect();
    Ok((intercept, slope, slope_se, residuals, used))
}

/// Fit `f(d) = alpha * exp(-beta d)` by weighted log-linear regression on the
/// binned means; bins with nonpositive mean are excluded.
pub fn fit_exponential(bins: &DecayBins) -> Result<FittedKernel, FitError> {
    let (intercept, slope, beta_se, residuals, used_bins) = fit_log_linear(bins, |d| d as f64)?;
    Ok(FittedKernel {
        spec: KernelSpec::Exponential {
            alpha: intercept.exp(),
            beta: -slope,
        },
        residuals,
        used_bins,
        beta_se,
    })
}

/// Fit `f(d) = alpha * (1 + d)^(-beta)`; same regression with `log(1 + d)`
/// as the regressor.
pub fn fit_power_law(bins: &DecayBins) -> Result<FittedKernel, FitError> {
    let (intercept, slope, beta_se, residuals, used_bins) =
        fit_log_linear(bins, |d| (1.0 + d as f64).ln())?;
    Ok(FittedKernel {
        spec: KernelSpec::ShiftedPowerLaw {
            alpha: intercept.exp(),
            beta: -slope,
        },
        residuals,
        used_bins,
        beta_se,
    })
}

/// One stratum of the LCA-conditioned decay table.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct LcaStratum {
    /// Mean of per-root means.
    pub mean: f64,
    /// Number of roots contributing to the stratum.
    pub roots: usize,
    /// Total pair count underlying the stratum across all roots.
    pub pairs: usize,
}

/// Decay conditioned on lowest-common-ancestor depth, over sampled perfect
/// binary trees grouped by root.
///
/// Every unordered node pair of every sampled tree (diagonal included) is
/// binned by its induced tree distance and induced LCA depth. Bin means are
/// first aggregated per root over that root's trees, then averaged across
/// roots.
pub fn lca_conditioned_decay(
    trees_by_root: &[(usize, Vec<Vec<usize>>)],
    tree_depth: usize,
    mut value: impl FnMut(usize, usize) -> f64,
) -> BTreeMap<(usize, usize), LcaStratum> {
    let shape: TreeTopology = build_regular_tree(&vec![2; tree_depth], tree_depth)
        .expect("binary profile is valid");
    let n = shape.node_count();
    let mut strata: BTreeMap<(usize, usize), LcaStratum> = BTreeMap::new();
    let mut root_sums: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for (_root, trees) in trees_by_root {
        root_sums.clear();
        for tree in trees {
            debug_assert_eq!(tree.len(), n);
            for a in 0..n {
                for b in a..n {
                    let key = (shape.distance(a, b), shape.lca_depth(a, b));
                    let entry = root_sums.entry(key).or_insert((0.0, 0));
                    entry.0 += value(tree[a], tree[b]);
                    entry.1 += 1;
                }
            }
        }
        for (&key, &(sum, count)) in &root_sums {
            if count == 0 {
                continue;
            }
            let stratum = strata.entry(key).or_default();
            stratum.mean += sum / count as f64; // running sum; divide at the end
            stratum.roots += 1;
            stratum.pairs += count;
        }
    }
    for stratum in strata.values_mut() {
        stratum.mean /= stratum.roots as f64;
    }
    strata
}

/// CSV rows `d,lca_depth,mean,roots,pairs` for the LCA-conditioned table.
pub fn lca_table_csv(table: &BTreeMap<(usize, usize), LcaStratum>) -> String {
    let mut out = String::from("d,lca_depth,mean,roots,pairs\n");
    for (&(d, lca), s) in table {
        out.push_str(&format!("{},{},{},{},{}\n", d, lca, s.mean, s.roots, s.pairs));
    }
    out
}
