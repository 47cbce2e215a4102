//! Cross-module pipeline invariants that no single module can check alone.

use hiergram::cooccur::{generate_synthetic_counts, mstar_restricted};
use hiergram::fit::{binned_decay, fit_exponential};
use hiergram::hierarchy::{build_arborescence, contract, enumerate_distance_pairs};
use hiergram::kernel::KernelSpec;
use hiergram::tree::DistanceMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

fn binary_hierarchy(depth: usize) -> hiergram::hierarchy::ContractedHierarchy {
    let n = (1usize << (depth + 1)) - 1;
    let mut pairs = Vec::new();
    for i in 1..n {
        pairs.push((format!("n{:02}", i), format!("n{:02}", (i - 1) / 2)));
    }
    let arbor = build_arborescence(&pairs, "n00").unwrap();
    let all: HashSet<String> = (0..n).map(|i| format!("n{:02}", i)).collect();
    contract(&arbor, &all).unwrap()
}

#[test]
fn planted_decay_detected_with_high_confidence() {
    // strictly decreasing planted kernel: fitted beta is positive at 99%
    // confidence, and the bin means track the planted values
    let hierarchy = binary_hierarchy(5);
    let n = hierarchy.len();
    let tokens: Vec<String> = (0..n).map(|i| hierarchy.name(i).to_string()).collect();
    let distances = DistanceMatrix::from_fn(n, |i, j| hierarchy.distance(i, j) as u32).unwrap();
    let planted = KernelSpec::exponential(0.5, 0.8);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let stats = generate_synthetic_counts(
        &tokens,
        &distances,
        &planted,
        &vec![1.0; n],
        10_000_000,
        &mut rng,
    )
    .unwrap();
    let view = mstar_restricted(&stats, &tokens).unwrap();

    // all pairs per distance: the cross-cell spread is then an honest
    // standard error (frontier sampling revisits the same few cells at small
    // d and understates uncertainty)
    let mut pairs = Vec::new();
    for d in 0..=6usize {
        pairs.extend(enumerate_distance_pairs(&hierarchy, d));
    }
    let bins = binned_decay(&pairs, |i, j| view.matrix[(i, j)]);

    // bin means sit near the planted kernel at a few standard errors
    for (&d, stats) in &bins.bins {
        let truth = 0.5 * (-0.8 * d as f64).exp();
        let dev = (stats.mean() - truth).abs();
        assert!(
            dev <= 6.0 * stats.se().max(1e-4),
            "d={d}: mean {} vs planted {truth} (se {})",
            stats.mean(),
            stats.se()
        );
    }

    let fitted = fit_exponential(&bins).unwrap();
    let beta = match fitted.spec {
        KernelSpec::Exponential { beta, .. } => beta,
        _ => unreachable!(),
    };
    assert!(fitted.beta_se.is_finite() && fitted.beta_se > 0.0);
    // one-sided 99% confidence that the decay rate is positive
    assert!(
        beta / fitted.beta_se > 2.326,
        "beta {beta} +- {}",
        fitted.beta_se
    );
    assert!((beta - 0.8).abs() / 0.8 < 0.10);
}
