//! Regular rooted trees with breadth-first node indexing and tree-metric queries.
//!
//! Every matrix in this crate is indexed by the breadth-first node order
//! defined here: the root is node 0, levels are laid out contiguously, and
//! the children of each node occupy a contiguous index range. This makes the
//! block structure of hierarchy-adapted bases contiguous as well.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard cap on dense tree sizes. The analysis targets trees of at most a few
/// thousand nodes; anything larger indicates a misconfigured profile.
pub const MAX_NODES: usize = 20_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("branching profile has {got} entries but depth is {depth}")]
    ProfileLengthMismatch { got: usize, depth: usize },
    #[error("branching factor {0} at level {1} is below 2")]
    BranchingTooSmall(usize, usize),
    #[error("tree would have {0} nodes, exceeding the cap of {MAX_NODES}")]
    TooLarge(usize),
    #[error("level {0} out of range (depth is {1})")]
    LevelOutOfRange(usize, usize),
    #[error("node {0} out of range ({1} nodes)")]
    NodeOutOfRange(usize, usize),
}

/// A regular rooted tree: every node at depth `d` has exactly
/// `branching_profile[d]` children, and all leaves sit at the same depth.
///
/// Node indexing is breadth-first: root = 0, then level by level, with the
/// children of consecutive parents laid out consecutively.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeTopology {
    depth: usize,
    profile: Vec<usize>,
    /// `level_start[d]` is the index of the first node at depth `d`;
    /// one extra entry holds the total node count.
    level_start: Vec<usize>,
    parent: Vec<usize>,
}

/// JSON wire form of a topology: `{"depth": L, "profile": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyJson {
    pub depth: usize,
    pub profile: Vec<usize>,
}

/// Build the regular tree described by `branching_profile`.
///
/// `branching_profile[d]` is the child count of every node at depth `d`,
/// so the profile must have exactly `depth` entries, each at least 2.
pub fn build_regular_tree(branching_profile: &[usize], depth: usize) -> Result<TreeTopology, TreeError> {
    if branching_profile.len() != depth {
        return Err(TreeError::ProfileLengthMismatch {
            got: branching_profile.len(),
            depth,
        });
    }
    for (d, &b) in branching_profile.iter().enumerate() {
        if b < 2 {
            return Err(TreeError::BranchingTooSmall(b, d));
        }
    }
    let mut level_start = Vec::with_capacity(depth + 2);
    level_start.push(0);
    let mut level_size = 1usize;
    let mut total = 1usize;
    for &b in branching_profile {
        level_start.push(total);
        level_size = level_size
            .checked_mul(b)
            .filter(|&n| n <= MAX_NODES)
            .ok_or(TreeError::TooLarge(usize::MAX))?;
        total = total.checked_add(level_size).ok_or(TreeError::TooLarge(usize::MAX))?;
        if total > MAX_NODES {
            return Err(TreeError::TooLarge(total));
        }
    }
    level_start.push(total);

    let mut parent = vec![0usize; total];
    for d in 0..depth {
        let b = branching_profile[d];
        let start = level_start[d];
        let next = level_start[d + 1];
        let count = level_start[d + 1] - level_start[d];
        for p in 0..count {
            for c in 0..b {
                parent[next + p * b + c] = start + p;
            }
        }
    }
    Ok(TreeTopology {
        depth,
        profile: branching_profile.to_vec(),
        level_start,
        parent,
    })
}

impl TreeTopology {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn profile(&self) -> &[usize] {
        &self.profile
    }

    pub fn node_count(&self) -> usize {
        *self.level_start.last().unwrap()
    }

    /// Depth of `node` (root has depth 0).
    pub fn node_depth(&self, node: usize) -> usize {
        debug_assert!(node < self.node_count());
        // level_start is sorted; the partition point is the node's level + 1.
        self.level_start.partition_point(|&s| s <= node) - 1
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        if node == 0 {
            None
        } else {
            Some(self.parent[node])
        }
    }

    /// Children of `node`, contiguous under breadth-first indexing.
    pub fn children(&self, node: usize) -> std::ops::Range<usize> {
        let d = self.node_depth(node);
        if d == self.depth {
            return 0..0;
        }
        let b = self.profile[d];
        let pos = node - self.level_start[d];
        let first = self.level_start[d + 1] + pos * b;
        first..first + b
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.node_depth(node) == self.depth
    }

    pub fn level_size(&self, level: usize) -> Result<usize, TreeError> {
        if level > self.depth {
            return Err(TreeError::LevelOutOfRange(level, self.depth));
        }
        Ok(self.level_start[level + 1] - self.level_start[level])
    }

    /// Nodes at `level` as an index range.
    pub fn level_nodes(&self, level: usize) -> Result<std::ops::Range<usize>, TreeError> {
        if level > self.depth {
            return Err(TreeError::LevelOutOfRange(level, self.depth));
        }
        Ok(self.level_start[level]..self.level_start[level + 1])
    }

    /// Height of the subtree rooted at `node`.
    pub fn height(&self, node: usize) -> usize {
        self.depth - self.node_depth(node)
    }

    /// Depth of the lowest common ancestor of `i` and `j`.
    pub fn lca_depth(&self, i: usize, j: usize) -> usize {
        let (mut i, mut j) = (i, j);
        let (mut di, mut dj) = (self.node_depth(i), self.node_depth(j));
        while di > dj {
            i = self.parent[i];
            di -= 1;
        }
        while dj > di {
            j = self.parent[j];
            dj -= 1;
        }
        while i != j {
            i = self.parent[i];
            j = self.parent[j];
            di -= 1;
        }
        di
    }

    /// Edge distance between `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> usize {
        self.node_depth(i) + self.node_depth(j) - 2 * self.lca_depth(i, j)
    }

    /// Descendants of `node` at relative depth `r`, as an index range
    /// (contiguous under breadth-first indexing).
    pub fn descendants_at(&self, node: usize, r: usize) -> std::ops::Range<usize> {
        let d = self.node_depth(node);
        if d + r > self.depth {
            return 0..0;
        }
        let mut first = node;
        let mut count = 1usize;
        for q in d..d + r {
            let b = self.profile[q];
            let pos = first - self.level_start[q];
            first = self.level_start[q + 1] + pos * b;
            count *= b;
        }
        first..first + count
    }

    pub fn to_json(&self) -> TopologyJson {
        TopologyJson {
            depth: self.depth,
            profile: self.profile.clone(),
        }
    }

    pub fn from_json(json: &TopologyJson) -> Result<Self, TreeError> {
        build_regular_tree(&json.profile, json.depth)
    }
}

/// Symmetric matrix of pairwise edge distances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<u32>,
}

impl DistanceMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.data[i * self.n + j]
    }

    pub fn max_entry(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Build from an explicit pairwise distance closure (used by the
    /// contracted-hierarchy pipeline, which is not a regular tree).
    pub fn from_fn(n: usize, mut dist: impl FnMut(usize, usize) -> u32) -> Result<Self, TreeError> {
        if n > MAX_NODES {
            return Err(TreeError::TooLarge(n));
        }
        let mut data = vec![0u32; n * n];
        for i in 0..n {
            for j in i..n {
                let d = dist(i, j);
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Ok(DistanceMatrix { n, data })
    }
}

/// All-pairs edge distances of a regular tree, `D_ij = depth(i) + depth(j) - 2 lca_depth(i,j)`.
pub fn tree_distance_matrix(tree: &TreeTopology) -> DistanceMatrix {
    let n = tree.node_count();
    DistanceMatrix::from_fn(n, |i, j| tree.distance(i, j) as u32)
        .expect("node count already bounded by MAX_NODES")
}

/// Matrix of lowest-common-ancestor depths; the diagonal holds node depths.
pub fn lca_depth_matrix(tree: &TreeTopology) -> Vec<Vec<u32>> {
    let n = tree.node_count();
    (0..n)
        .map(|i| (0..n).map(|j| tree.lca_depth(i, j) as u32).collect())
        .collect()
}
