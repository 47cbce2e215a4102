//! Hierarchy ingestion: DAG-to-arborescence conversion by depth-maximizing
//! parent choice, contraction onto an eligible node set, monosemy scoring,
//! perfect-binary-subtree counting and uniform sampling, and
//! distance-stratified pair sampling.
//!
//! Hierarchies enter as generic TSV edge lists (`child_id <TAB> parent_id
//! [<TAB> lemma [<TAB> sense_count]]`); nothing here parses any particular
//! lexical database.

use rand::Rng;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HierarchyError {
    #[error("root {0:?} does not appear in the edge list")]
    UnknownRoot(String),
    #[error("cycle detected through {0:?}")]
    Cycle(String),
    #[error("nodes cannot reach the root: {0:?}")]
    Unreachable(Vec<String>),
    #[error("node {0:?} not found")]
    NodeNotFound(String),
    #[error("eligible nodes with no eligible ancestor: {0:?}; contraction needs a unique top")]
    MultipleTopEligible(Vec<String>),
    #[error("no eligible nodes")]
    NoEligible,
    #[error("no valid depth-{depth} binary subtree rooted at {root:?}")]
    NoValidSubtree { root: String, depth: usize },
    #[error("no node has a nonempty distance-{0} frontier")]
    EmptyDistance(usize),
    #[error("malformed edge list line {0}: {1:?}")]
    Parse(usize, String),
}

/// A rooted arborescence: every node except the root has exactly one parent.
#[derive(Debug, Clone)]
pub struct Arborescence {
    names: Vec<String>,
    index: HashMap<String, usize>,
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
    root: usize,
}

impl Arborescence {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn root_name(&self) -> &str {
        &self.names[self.root]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn parent_name(&self, name: &str) -> Option<&str> {
        let i = self.id(name)?;
        self.parent[i].map(|p| self.names[p].as_str())
    }

    pub fn depth_of(&self, name: &str) -> Option<usize> {
        self.id(name).map(|i| self.depth[i])
    }
}

/// Convert child-to-parent multi-edges into an arborescence by assigning each
/// node the parent that maximizes its depth from `root`; depth ties break on
/// lexicographic parent-name order.
pub fn build_arborescence(
    edges: &[(String, String)],
    root: &str,
) -> Result<Arborescence, HierarchyError> {
    let mut names: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let intern = |name: &str, names: &mut Vec<String>, index: &mut HashMap<String, usize>| {
        *index.entry(name.to_string()).or_insert_with(|| {
            names.push(name.to_string());
            names.len() - 1
        })
    };
    let root_id = intern(root, &mut names, &mut index);
    let mut parents: Vec<Vec<usize>> = vec![Vec::new()];
    for (child, parent) in edges {
        let c = intern(child, &mut names, &mut index);
        let p = intern(parent, &mut names, &mut index);
        parents.resize(names.len(), Vec::new());
        parents[c].push(p);
    }
    parents.resize(names.len(), Vec::new());
    let n = names.len();

    // longest path to the root over candidate parents, with cycle detection
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        New,
        Active,
        Done,
    }
    let mut state = vec![State::New; n];
    let mut depth: Vec<Option<usize>> = vec![None; n];
    let mut chosen: Vec<Option<usize>> = vec![None; n];
    depth[root_id] = Some(0);
    state[root_id] = State::Done;

    for start in 0..n {
        if state[start] == State::Done {
            continue;
        }
        // iterative DFS over parent edges
        let mut stack = vec![(start, 0usize)];
        state[start] = State::Active;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if *next < parents[v].len() {
                let p = parents[v][*next];
                *next += 1;
                match state[p] {
                    State::New => {
                        state[p] = State::Active;
                        stack.push((p, 0));
                    }
                    State::Active => {
                        return Err(HierarchyError::Cycle(names[p].clone()));
                    }
                    State::Done => {}
                }
            } else {
                // all parents resolved: pick the depth-maximizing candidate
                let mut best: Option<(usize, usize)> = None; // (depth, parent)
                for &p in &parents[v] {
                    if let Some(dp) = depth[p] {
                        let better = match best {
                            None => true,
                            Some((bd, bp)) => {
                                dp > bd || (dp == bd && names[p] < names[bp])
                            }
                        };
                        if better {
                            best = Some((dp, p));
                        }
                    }
                }
                if let Some((dp, p)) = best {
                    depth[v] = Some(dp + 1);
                    chosen[v] = Some(p);
                }
                state[v] = State::Done;
                stack.pop();
            }
        }
    }

    let unreachable: Vec<String> = (0..n)
        .filter(|&v| depth[v].is_none())
        .map(|v| names[v].clone())
        .collect();
    if !unreachable.is_empty() {
        let mut sorted = unreachable;
        sorted.sort();
        return Err(HierarchyError::Unreachable(sorted));
    }
    if !index.contains_key(root) {
        return Err(HierarchyError::UnknownRoot(root.to_string()));
    }
    Ok(Arborescence {
        parent: chosen,
        depth: depth.into_iter().map(Option::unwrap).collect(),
        root: root_id,
        names,
        index,
    })
}

/// An arborescence restricted to eligible nodes: each node's parent is its
/// nearest eligible ancestor in the source tree.
///
/// Node ids are assigned in breadth-first order of the contracted tree with
/// children sorted by name, so indexing is deterministic.
#[derive(Debug, Clone)]
pub struct ContractedHierarchy {
    names: Vec<String>,
    index: HashMap<String, usize>,
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
    children: Vec<Vec<usize>>,
    /// Number of source-tree edges each contracted edge spans (0 at the root).
    original_hops: Vec<usize>,
}

impl ContractedHierarchy {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn depth_of(&self, i: usize) -> usize {
        self.depth[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn original_hops(&self, i: usize) -> usize {
        self.original_hops[i]
    }

    /// Undirected edge distance in the contracted tree.
    pub fn distance(&self, i: usize, j: usize) -> usize {
        let (mut a, mut b) = (i, j);
        let mut steps = 0;
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].unwrap();
            steps += 1;
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].unwrap();
            steps += 1;
        }
        while a != b {
            a = self.parent[a].unwrap();
            b = self.parent[b].unwrap();
            steps += 2;
        }
        steps
    }

    /// `i` and every node below it.
    pub fn descendants(&self, i: usize) -> Vec<usize> {
        let mut out = vec![i];
        let mut queue = VecDeque::from([i]);
        while let Some(u) = queue.pop_front() {
            for &c in &self.children[u] {
                out.push(c);
                queue.push_back(c);
            }
        }
        out
    }

    /// Nodes at exactly distance `d` from `u`.
    pub fn frontier(&self, u: usize, d: usize) -> Vec<usize> {
        if d == 0 {
            return vec![u];
        }
        let n = self.len();
        let mut dist = vec![usize::MAX; n];
        dist[u] = 0;
        let mut queue = VecDeque::from([u]);
        let mut out = Vec::new();
        while let Some(x) = queue.pop_front() {
            if dist[x] == d {
                out.push(x);
                continue; // no need to expand past the target shell
            }
            let push = |y: usize, dist: &mut Vec<usize>, queue: &mut VecDeque<usize>| {
                if dist[y] == usize::MAX {
                    dist[y] = dist[x] + 1;
                    queue.push_back(y);
                }
            };
            if let Some(p) = self.parent[x] {
                push(p, &mut dist, &mut queue);
            }
            for &c in &self.children[x] {
                push(c, &mut dist, &mut queue);
            }
        }
        out.sort_unstable();
        out
    }

    /// Serialize as TSV rows `node <TAB> parent <TAB> depth` (root's parent
    /// is the empty string), in index order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            let parent = self.parent[i].map(|p| self.names[p].as_str()).unwrap_or("");
            out.push_str(&format!("{}\t{}\t{}\n", self.names[i], parent, self.depth[i]));
        }
        out
    }

    /// Rebuild from the TSV form written by [`Self::to_tsv`].
    pub fn from_tsv(text: &str) -> Result<Self, HierarchyError> {
        let mut parent_of: HashMap<String, Option<String>> = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 2 {
                return Err(HierarchyError::Parse(lineno + 1, line.to_string()));
            }
            let parent = if fields[1].is_empty() {
                None
            } else {
                Some(fields[1].to_string())
            };
            parent_of.insert(fields[0].to_string(), parent);
        }
        let roots: Vec<&String> = parent_of
            .iter()
            .filter(|(_, p)| p.is_none())
            .map(|(n, _)| n)
            .collect();
        if roots.len() != 1 {
            return Err(HierarchyError::MultipleTopEligible(
                roots.into_iter().cloned().collect(),
            ));
        }
        let root = roots[0].clone();
        let mut kids: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (child, parent) in &parent_of {
            if let Some(p) = parent {
                if !parent_of.contains_key(p) {
                    return Err(HierarchyError::NodeNotFound(p.clone()));
                }
                kids.entry(p.clone()).or_default().push(child.clone());
            }
        }
        for v in kids.values_mut() {
            v.sort();
        }
        let hops: HashMap<String, usize> = parent_of.keys().map(|k| (k.clone(), 1)).collect();
        Ok(Self::from_structure(&root, &kids, &hops))
    }

    fn from_structure(
        root: &str,
        kids: &BTreeMap<String, Vec<String>>,
        hops: &HashMap<String, usize>,
    ) -> Self {
        let mut names = Vec::new();
        let mut index = HashMap::new();
        let mut parent = Vec::new();
        let mut depth = Vec::new();
        let mut original_hops = Vec::new();
        let mut children: Vec<Vec<usize>> = Vec::new();
        let mut queue = VecDeque::from([(root.to_string(), None::<usize>, 0usize)]);
        while let Some((name, par, dep)) = queue.pop_front() {
            let id = names.len();
            index.insert(name.clone(), id);
            parent.push(par);
            depth.push(dep);
            original_hops.push(if par.is_none() {
                0
            } else {
                hops.get(&name).copied().unwrap_or(1)
            });
            children.push(Vec::new());
            if let Some(p) = par {
                children[p].push(id);
            }
            if let Some(cs) = kids.get(&name) {
                for c in cs {
                    queue.push_back((c.clone(), Some(id), dep + 1));
                }
            }
            names.push(name);
        }
        ContractedHierarchy {
            names,
            index,
            parent,
            depth,
            children,
            original_hops,
        }
    }
}

/// Contract an arborescence onto an eligible node set: each eligible node's
/// parent becomes its nearest eligible ancestor. Exactly one eligible node
/// may lack an eligible ancestor; it becomes the contracted root.
pub fn contract(
    arbor: &Arborescence,
    eligible: &HashSet<String>,
) -> Result<ContractedHierarchy, HierarchyError> {
    if eligible.is_empty() {
        return Err(HierarchyError::NoEligible);
    }
    for name in eligible {
        if arbor.id(name).is_none() {
            return Err(HierarchyError::NodeNotFound(name.clone()));
        }
    }
    let mut kids: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut hops: HashMap<String, usize> = HashMap::new();
    let mut tops: Vec<String> = Vec::new();
    for name in eligible {
        let id = arbor.id(name).unwrap();
        let mut cur = arbor.parent[id];
        let mut steps = 1usize;
        let mut attached = false;
        while let Some(p) = cur {
            if eligible.contains(&arbor.names[p]) {
                kids.entry(arbor.names[p].clone()).or_default().push(name.clone());
                hops.insert(name.clone(), steps);
                attached = true;
                break;
            }
            cur = arbor.parent[p];
            steps += 1;
        }
        if !attached {
            tops.push(name.clone());
        }
    }
    if tops.len() != 1 {
        tops.sort();
        return Err(HierarchyError::MultipleTopEligible(tops));
    }
    for v in kids.values_mut() {
        v.sort();
    }
    Ok(ContractedHierarchy::from_structure(&tops[0], &kids, &hops))
}

/// Per-sense monosemy scores: `count_s / sum_s count_s`, all zero when the
/// total is zero.
pub fn monosemy_score(sense_counts: &[f64]) -> Vec<f64> {
    let total: f64 = sense_counts.iter().sum();
    if total <= 0.0 {
        return vec![0.0; sense_counts.len()];
    }
    sense_counts.iter().map(|c| c / total).collect()
}

/// Dynamic-programming counts `N(u, l)` of valid depth-`l` perfect binary
/// subtrees rooted at each node: `N(u, 0) = 1`, and `N(u, l)` sums
/// `N(c1, l-1) * N(c2, l-1)` over unordered pairs of distinct children.
#[derive(Debug, Clone, Serialize)]
pub struct SubtreeCountTable {
    /// `counts[node][l]`, `l = 0..=max_depth`. Stored as f64; counts grow
    /// combinatorially.
    pub counts: Vec<Vec<f64>>,
    pub max_depth: usize,
}

impl SubtreeCountTable {
    pub fn count(&self, node: usize, depth: usize) -> f64 {
        self.counts[node][depth]
    }
}

pub fn count_binary_subtrees(h: &ContractedHierarchy, max_depth: usize) -> SubtreeCountTable {
    let n = h.len();
    let mut counts = vec![vec![0.0; max_depth + 1]; n];
    // process nodes bottom-up: children always have larger BFS ids
    for u in (0..n).rev() {
        counts[u][0] = 1.0;
        for l in 1..=max_depth {
            let kids = h.children(u);
            let mut total = 0.0;
            for (a, &c1) in kids.iter().enumerate() {
                for &c2 in &kids[a + 1..] {
                    total += counts[c1][l - 1] * counts[c2][l - 1];
                }
            }
            counts[u][l] = total;
        }
    }
    SubtreeCountTable { counts, max_depth }
}

/// Sample a valid depth-`depth` perfect binary subtree rooted at `root`,
/// uniformly over tree structures. Returns `2^(depth+1) - 1` hierarchy node
/// ids in breadth-first order of the sampled tree.
pub fn sample_binary_subtree(
    h: &ContractedHierarchy,
    table: &SubtreeCountTable,
    root: usize,
    depth: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, HierarchyError> {
    if table.count(root, depth) < 1.0 {
        return Err(HierarchyError::NoValidSubtree {
            root: h.name(root).to_string(),
            depth,
        });
    }
    let mut out = vec![root];
    let mut level = vec![root];
    for l in (1..=depth).rev() {
        let mut next = Vec::with_capacity(level.len() * 2);
        for &u in &level {
            let kids = h.children(u);
            // pick an unordered child pair with probability proportional to
            // the number of valid completions below it
            let mut weights = Vec::new();
            let mut pairs = Vec::new();
            for (a, &c1) in kids.iter().enumerate() {
                for &c2 in &kids[a + 1..] {
                    let w = table.count(c1, l - 1) * table.count(c2, l - 1);
                    if w > 0.0 {
                        weights.push(w);
                        pairs.push((c1, c2));
                    }
                }
            }
            debug_assert!(!pairs.is_empty());
            let total: f64 = weights.iter().sum();
            let mut draw = rng.gen_range(0.0..total);
            let mut pick = pairs.len() - 1;
            for (k, &w) in weights.iter().enumerate() {
                if draw < w {
                    pick = k;
                    break;
                }
                draw -= w;
            }
            let (c1, c2) = pairs[pick];
            next.push(c1);
            next.push(c2);
        }
        out.extend(&next);
        level = next;
    }
    Ok(out)
}

/// A sampled node pair with its distance and frontier-size weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedPair {
    pub i: usize,
    pub j: usize,
    pub distance: usize,
    pub weight: f64,
}

/// Sample `count` pairs at distance `d`: draw a start node uniformly, then a
/// partner uniformly from its distance-`d` frontier, weighting the pair by
/// the frontier size. Draws landing on empty frontiers are skipped and
/// redrawn; errors if every frontier at distance `d` is empty.
pub fn sample_distance_pairs(
    h: &ContractedHierarchy,
    d: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<WeightedPair>, HierarchyError> {
    let n = h.len();
    if !(0..n).any(|u| !h.frontier(u, d).is_empty()) {
        return Err(HierarchyError::EmptyDistance(d));
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.gen_range(0..n);
        let frontier = h.frontier(u, d);
        if frontier.is_empty() {
            continue;
        }
        let v = frontier[rng.gen_range(0..frontier.len())];
        out.push(WeightedPair {
            i: u,
            j: v,
            distance: d,
            weight: frontier.len() as f64,
        });
    }
    Ok(out)
}

/// All unordered pairs at distance `d` (including the diagonal when `d = 0`),
/// each with weight 1. A deterministic alternative to sampling for
/// desk-scale hierarchies.
pub fn enumerate_distance_pairs(h: &ContractedHierarchy, d: usize) -> Vec<WeightedPair> {
    let n = h.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i..n {
            if h.distance(i, j) == d {
                out.push(WeightedPair {
                    i,
                    j,
                    distance: d,
                    weight: 1.0,
                });
            }
        }
    }
    out
}

/// Parse a TSV edge list: `child <TAB> parent [<TAB> lemma [<TAB> count]]`.
/// Lines starting with `#` and blank lines are skipped.
pub fn parse_edge_list(text: &str) -> Result<Vec<(String, String)>, HierarchyError> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(HierarchyError::Parse(lineno + 1, line.to_string()));
        }
        edges.push((fields[0].to_string(), fields[1].to_string()));
    }
    Ok(edges)
}
