//! Spectral analysis of hierarchy-induced co-occurrence structure.
//!
//! The library covers the full pipeline from raw pair counting to eigenspace
//! diagnostics:
//!
//! - [`tree`]: regular rooted trees, breadth-first indexing, tree metrics.
//! - [`haar`]: the hierarchy-adapted orthonormal basis and block projection.
//! - [`kernel`]: distance kernels, closed-form blocks, PSD components.
//! - [`spectra`]: eigendecomposition, embeddings, spectral-ordering checks,
//!   top-k subspace alignment, shuffle baselines, sin-theta stability.
//! - [`cooccur`]: corpus tokenization, windowed pair counting, the normalized
//!   statistic, and synthetic count generation.
//! - [`hierarchy`]: DAG-to-arborescence conversion, eligibility contraction,
//!   binary-subtree counting/sampling, distance-stratified pair sampling.
//! - [`fit`]: distance-binned decay estimation and parametric kernel fits.
//! - [`concept`]: embedding ingestion, whitening, concept-vector estimation,
//!   parent-child innovation diagnostics.
//! - [`sweep`]: the root-sweep experiment tying everything together.

pub mod concept;
pub mod cooccur;
pub mod fit;
pub mod haar;
pub mod hierarchy;
pub mod kernel;
pub mod spectra;
pub mod sweep;
pub mod tree;

pub use haar::{assemble_basis, project_to_blocks, BlockDecomposition, HaarBasis};
pub use kernel::{eval_kernel, kernel_gram, psd_component, KernelSpec, PsdComponent};
pub use spectra::{
    alignment_area, build_embedding, sym_eig, topk_alignment, verify_ordering, AlignmentCurve,
    EigenSystem, EmbeddingMatrix, OrderingReport,
};
pub use tree::{
    build_regular_tree, lca_depth_matrix, tree_distance_matrix, DistanceMatrix, TreeTopology,
};
