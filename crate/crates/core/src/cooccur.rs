//! Corpus ingestion, article-bounded weighted skip-gram counting, the
//! normalized co-occurrence statistic, and synthetic count generation.
//!
//! Counting follows the symmetric windowed sum: a position pair at offset
//! `d` within the same article adds weight `window / d` to both ordered
//! entries `#(i,j)` and `#(j,i)`; pairs never cross article boundaries.
//! Self-pairs (`i = j` in the window) are counted by the same sum, so each
//! occurrence contributes twice to the diagonal entry. Probabilities are
//! counts normalized by the total ordered mass, and unigram probabilities
//! are the marginals `P_i = sum_j P_ij`.

use crate::kernel::{eval_kernel, KernelSpec};
use crate::tree::DistanceMatrix;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use thiserror::Error;

/// Token appended by the synthetic generator to absorb the co-occurrence
/// mass balance (see [`generate_synthetic_counts`]).
pub const BACKGROUND_TOKEN: &str = "__background__";

const HGC_MAGIC: &[u8; 4] = b"HGC1";

#[derive(Debug, Error)]
pub enum CooccurError {
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("duplicate token in vocabulary: {0}")]
    DuplicateToken(String),
    #[error("marginal probabilities must be positive (token index {0})")]
    ZeroMarginal(u32),
    #[error("pair probability must be nonnegative, got {0}")]
    NegativePair(f64),
    #[error("tokens missing from the vocabulary: {0:?}")]
    MissingTokens(Vec<String>),
    #[error("vocabularies differ; counts can only merge over the same vocabulary")]
    VocabMismatch,
    #[error("kernel value f({0}) = {1} is outside (-2, 2); the ratio transform is undefined")]
    KernelOutOfRange(usize, f64),
    #[error("unigram weights must be positive and match the node count")]
    BadUnigramWeights,
    #[error(transparent)]
    Kernel(#[from] crate::kernel::KernelError),
    #[error("count file is corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Token-to-id map with a stable order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, CooccurError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(CooccurError::DuplicateToken(t.clone()));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Lowercase `text` and extract maximal `[a-z]+` spans, keeping those in the
/// vocabulary. Digits and punctuation break spans, so "cat9" yields "cat".
pub fn tokenize_article(text: &str, vocab: &Vocab) -> Vec<u32> {
    let mut out = Vec::new();
    let mut span = String::new();
    let flush = |span: &mut String, out: &mut Vec<u32>| {
        if !span.is_empty() {
            if let Some(id) = vocab.id(span) {
                out.push(id);
            }
            span.clear();
        }
    };
    for ch in text.chars() {
        let lower = ch.to_ascii_lowercase();
        if lower.is_ascii_lowercase() {
            span.push(lower);
        } else {
            flush(&mut span, &mut out);
        }
    }
    flush(&mut span, &mut out);
    out
}

/// Tokenize a stream of articles, dropping articles with fewer than
/// `min_tokens` retained tokens. Article boundaries are preserved as the
/// outer vector; downstream counting never pairs across them.
pub fn tokenize_corpus<'a>(
    articles: impl Iterator<Item = &'a str>,
    vocab: &Vocab,
    min_tokens: usize,
) -> Vec<Vec<u32>> {
    articles
        .map(|a| tokenize_article(a, vocab))
        .filter(|toks| toks.len() >= min_tokens)
        .collect()
}

/// Sparse symmetric weighted pair counts with unigram marginals.
///
/// `counts` stores the symmetric matrix entry `#(i,j)` once per unordered
/// key `i <= j`; `total_mass` is the ordered total
/// `sum_ij #(i,j) = 2 * sum_{i<j} #(i,j) + sum_i #(i,i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceStats {
    vocab: Vocab,
    counts: BTreeMap<(u32, u32), f64>,
    total_mass: f64,
    row_mass: Vec<f64>,
}

impl CooccurrenceStats {
    fn from_counts(vocab: Vocab, counts: BTreeMap<(u32, u32), f64>) -> Self {
        let mut row_mass = vec![0.0; vocab.len()];
        let mut total = 0.0;
        for (&(i, j), &w) in &counts {
            if i == j {
                row_mass[i as usize] += w;
                total += w;
            } else {
                row_mass[i as usize] += w;
                row_mass[j as usize] += w;
                total += 2.0 * w;
            }
        }
        CooccurrenceStats {
            vocab,
            counts,
            total_mass: total,
            row_mass,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn nnz(&self) -> usize {
        self.counts.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// No pairs observed at all.
    pub fn is_degenerate(&self) -> bool {
        self.total_mass <= 0.0
    }

    /// Raw symmetric count entry `#(i,j)`.
    pub fn count(&self, i: u32, j: u32) -> f64 {
        let key = (i.min(j), i.max(j));
        self.counts.get(&key).copied().unwrap_or(0.0)
    }

    /// Pair probability `P_ij`.
    pub fn p_pair(&self, i: u32, j: u32) -> f64 {
        if self.total_mass <= 0.0 {
            0.0
        } else {
            self.count(i, j) / self.total_mass
        }
    }

    /// Unigram probability `P_i` (marginal of the pair distribution).
    pub fn p_unigram(&self, i: u32) -> f64 {
        if self.total_mass <= 0.0 {
            0.0
        } else {
            self.row_mass[i as usize] / self.total_mass
        }
    }

    /// Normalized co-occurrence for one pair.
    pub fn mstar(&self, i: u32, j: u32) -> Result<f64, CooccurError> {
        let (pi, pj) = (self.p_unigram(i), self.p_unigram(j));
        if pi <= 0.0 {
            return Err(CooccurError::ZeroMarginal(i));
        }
        if pj <= 0.0 {
            return Err(CooccurError::ZeroMarginal(j));
        }
        mstar_entry(self.p_pair(i, j), pi, pj)
    }

    /// Merge two shards counted over the same vocabulary; counts add exactly.
    pub fn merge(&self, other: &CooccurrenceStats) -> Result<CooccurrenceStats, CooccurError> {
        if self.vocab != other.vocab {
            return Err(CooccurError::VocabMismatch);
        }
        let mut counts = self.counts.clone();
        for (&k, &w) in &other.counts {
            *counts.entry(k).or_insert(0.0) += w;
        }
        Ok(CooccurrenceStats::from_counts(self.vocab.clone(), counts))
    }

    /// Serialize to the binary count format (little-endian):
    /// header `HGC1`, vocab size u32, nnz u64; length-prefixed UTF-8 tokens;
    /// triplets (i u32, j u32, weight f64) with `i <= j` in ascending order.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), CooccurError> {
        w.write_all(HGC_MAGIC)?;
        w.write_all(&(self.vocab.len() as u32).to_le_bytes())?;
        w.write_all(&(self.counts.len() as u64).to_le_bytes())?;
        for token in self.vocab.tokens() {
            let bytes = token.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
        }
        for (&(i, j), &weight) in &self.counts {
            w.write_all(&i.to_le_bytes())?;
            w.write_all(&j.to_le_bytes())?;
            w.write_all(&weight.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<CooccurrenceStats, CooccurError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != HGC_MAGIC {
            return Err(CooccurError::Corrupt("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let vocab_size = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let nnz = u64::from_le_bytes(b8) as usize;
        let mut tokens = Vec::with_capacity(vocab_size);
        for _ in 0..vocab_size {
            r.read_exact(&mut b4)?;
            let len = u32::from_le_bytes(b4) as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            tokens.push(
                String::from_utf8(buf).map_err(|_| CooccurError::Corrupt("bad token".into()))?,
            );
        }
        let vocab = Vocab::from_tokens(tokens)?;
        let mut counts = BTreeMap::new();
        for _ in 0..nnz {
            r.read_exact(&mut b4)?;
            let i = u32::from_le_bytes(b4);
            r.read_exact(&mut b4)?;
            let j = u32::from_le_bytes(b4);
            r.read_exact(&mut b8)?;
            let w = f64::from_le_bytes(b8);
            if i > j || j as usize >= vocab.len() {
                return Err(CooccurError::Corrupt(format!("bad triplet ({i}, {j})")));
            }
            counts.insert((i, j), w);
        }
        Ok(CooccurrenceStats::from_counts(vocab, counts))
    }
}

/// Count weighted skip-gram pairs over tokenized articles.
///
/// For positions `v` and `v + d` (1 <= d <= window) within one article, the
/// displayed symmetric sum adds `window/d` to `#(i,j)` and `#(j,i)`; the
/// diagonal receives both terms, so a self-pair occurrence adds `2*window/d`.
pub fn count_cooccurrence(
    articles: &[Vec<u32>],
    window: usize,
    vocab: &Vocab,
) -> Result<CooccurrenceStats, CooccurError> {
    if window == 0 {
        return Err(CooccurError::ZeroWindow);
    }
    let mut counts: HashMap<(u32, u32), f64> = HashMap::new();
    for article in articles {
        for v in 0..article.len() {
            for d in 1..=window.min(article.len().saturating_sub(v + 1)) {
                let (x, y) = (article[v], article[v + d]);
                let w = window as f64 / d as f64;
                if x == y {
                    *counts.entry((x, x)).or_insert(0.0) += 2.0 * w;
                } else {
                    *counts.entry((x.min(y), x.max(y))).or_insert(0.0) += w;
                }
            }
        }
    }
    Ok(CooccurrenceStats::from_counts(
        vocab.clone(),
        counts.into_iter().collect(),
    ))
}

/// The bounded normalized co-occurrence statistic
/// `(p_ij - p_i p_j) / (0.5 (p_ij + p_i p_j))`, equal to `2 tanh(PMI / 2)`
/// for positive `p_ij` and `-2` in the `p_ij = 0` limit.
pub fn mstar_entry(p_ij: f64, p_i: f64, p_j: f64) -> Result<f64, CooccurError> {
    if p_i <= 0.0 {
        return Err(CooccurError::ZeroMarginal(0));
    }
    if p_j <= 0.0 {
        return Err(CooccurError::ZeroMarginal(0));
    }
    if p_ij < 0.0 {
        return Err(CooccurError::NegativePair(p_ij));
    }
    let product = p_i * p_j;
    Ok((p_ij - product) / (0.5 * (p_ij + product)))
}

/// Dense symmetric view of the statistic over a node subset.
#[derive(Debug, Clone)]
pub struct MstarView {
    pub tokens: Vec<String>,
    pub matrix: nalgebra::DMatrix<f64>,
    /// Fraction of unordered pairs with no co-occurrence support; such
    /// entries sit at the `-2` limit of the statistic.
    pub unseen_fraction: f64,
}

/// Restrict the statistic to `subset` (dense, in subset order). Tokens absent
/// from the vocabulary are reported together in the error.
pub fn mstar_restricted(
    stats: &CooccurrenceStats,
    subset: &[String],
) -> Result<MstarView, CooccurError> {
    let mut missing = Vec::new();
    let mut ids = Vec::with_capacity(subset.len());
    for t in subset {
        match stats.vocab.id(t) {
            Some(id) => ids.push(id),
            None => missing.push(t.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(CooccurError::MissingTokens(missing));
    }
    let n = ids.len();
    let mut matrix = nalgebra::DMatrix::zeros(n, n);
    let mut unseen = 0usize;
    let mut pairs = 0usize;
    for a in 0..n {
        for b in a..n {
            let v = stats.mstar(ids[a], ids[b])?;
            if stats.count(ids[a], ids[b]) == 0.0 {
                unseen += 1;
            }
            pairs += 1;
            matrix[(a, b)] = v;
            matrix[(b, a)] = v;
        }
    }
    let matrix = (&matrix + matrix.transpose()) * 0.5;
    Ok(MstarView {
        tokens: subset.to_vec(),
        matrix,
        unseen_fraction: unseen as f64 / pairs as f64,
    })
}

/// Draw synthetic co-occurrence counts whose normalized statistic converges
/// entrywise to `f(dist)` on the node set as the pair count grows.
///
/// The pair distribution over the nodes is `q_i q_j * C(dist(i,j))` with
/// `C = (2 + f) / (2 - f)`, the inverse of the ratio transform. Because the
/// statistic measures excess over independence, its product-marginal average
/// is pinned to zero; a positive-everywhere kernel therefore cannot hold on
/// the whole vocabulary. One background token carries the balancing deficit:
/// node-background weights are chosen so node marginals stay proportional to
/// `unigram_weights` and the node-block ratio equals `C` exactly.
pub fn generate_synthetic_counts(
    tokens: &[String],
    distances: &DistanceMatrix,
    kernel: &KernelSpec,
    unigram_weights: &[f64],
    total_pairs: u64,
    rng: &mut impl Rng,
) -> Result<CooccurrenceStats, CooccurError> {
    let n = distances.size();
    if unigram_weights.len() != n || unigram_weights.iter().any(|&w| !(w > 0.0)) {
        return Err(CooccurError::BadUnigramWeights);
    }
    assert_eq!(tokens.len(), n, "one token per node required");

    // normalized node weights and the ratio-transformed kernel
    let weight_sum: f64 = unigram_weights.iter().sum();
    let p: Vec<f64> = unigram_weights.iter().map(|w| w / weight_sum).collect();
    let max_d = distances.max_entry() as usize;
    let mut ratio = Vec::with_capacity(max_d + 1);
    for d in 0..=max_d {
        let f = eval_kernel(kernel, d)?;
        if f >= 2.0 || f <= -2.0 {
            return Err(CooccurError::KernelOutOfRange(d, f));
        }
        ratio.push((2.0 + f) / (2.0 - f));
    }

    // z_i = sum_j p_j C(dist(i,j)); the node-mass fraction s must satisfy
    // s * max(z) < 1 so every node-background weight stays positive.
    let mut z = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            z[i] += p[j] * ratio[distances.get(i, j) as usize];
        }
    }
    let max_z = z.iter().cloned().fold(0.0f64, f64::max);
    let s = (0.9f64).min(0.95 / max_z);
    let gamma = s * s;

    // unordered cell weights over n nodes plus the background token
    let mut cells: Vec<((u32, u32), f64)> = Vec::with_capacity(n * (n + 1) / 2 + n + 1);
    let bg = n as u32;
    let mut qq = 0.0; // sum_ij p_i p_j C_ij
    for i in 0..n {
        for j in i..n {
            let q = gamma * p[i] * p[j] * ratio[distances.get(i, j) as usize];
            let w = if i == j { q } else { 2.0 * q };
            cells.push(((i as u32, j as u32), w));
            qq += w;
        }
    }
    for i in 0..n {
        let w = p[i] * (s - gamma * z[i]);
        debug_assert!(w >= 0.0);
        cells.push(((i as u32, bg), 2.0 * w));
    }
    let bg_bg = 1.0 - 2.0 * s + qq;
    debug_assert!(bg_bg >= -1e-12);
    cells.push(((bg, bg), bg_bg.max(0.0)));

    // exact multinomial via sequential conditional binomials; the last cell
    // absorbs whatever floating-point drift leaves over, so the total mass
    // is exactly the requested pair count
    let mut counts = BTreeMap::new();
    let mut remaining_n = total_pairs;
    let mut remaining_p: f64 = cells.iter().map(|(_, w)| w).sum();
    let last = cells.len() - 1;
    for (idx, ((i, j), w)) in cells.into_iter().enumerate() {
        if remaining_n == 0 {
            break;
        }
        let prob = (w / remaining_p).clamp(0.0, 1.0);
        let draw = if idx == last || prob >= 1.0 {
            remaining_n
        } else {
            Binomial::new(remaining_n, prob)
                .expect("probability in range")
                .sample(rng)
        };
        remaining_p = (remaining_p - w).max(0.0);
        remaining_n -= draw;
        if draw > 0 {
            // unordered draw count splits across the two ordered entries
            let entry = if i == j { draw as f64 } else { draw as f64 / 2.0 };
            counts.insert((i, j), entry);
        }
    }

    let mut all_tokens: Vec<String> = tokens.to_vec();
    all_tokens.push(BACKGROUND_TOKEN.to_string());
    Ok(CooccurrenceStats::from_counts(
        Vocab::from_tokens(all_tokens)?,
        counts,
    ))
}
