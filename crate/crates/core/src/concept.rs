//! External-embedding ingestion with centering/whitening, concept-vector
//! estimation with shrinkage covariance, and parent-child innovation
//! diagnostics.
//!
//! The concept estimator maximizes `(u' mu)^2 / (u' Sigma u)` over
//! directions `u`, giving `g = Sigma^+ mu / ||Sigma^+ mu||`; the concept
//! vector is `(g' mu) g`. The covariance is shrunk toward the scaled
//! identity `(trace(S)/d) I` with the analytic shrinkage intensity before
//! the pseudoinverse, since descendant sets are routinely smaller than the
//! embedding dimension.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::HashMap;
use std::io::{Read, Write};
use thiserror::Error;

const HGE_MAGIC: &[u8; 4] = b"HGE1";

/// Relative eigenvalue floor used when inverting the whitening covariance.
pub const WHITEN_EIG_FLOOR: f64 = 1e-8;
/// Relative cutoff for the covariance pseudoinverse.
pub const PINV_CUTOFF: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ConceptError {
    #[error("need at least {need} vectors, got {got}")]
    TooFewVectors { need: usize, got: usize },
    #[error("duplicate token in embedding table: {0}")]
    DuplicateToken(String),
    #[error("token {0:?} not present in the embedding table")]
    MissingToken(String),
    #[error("parent concept vector is zero")]
    ZeroParent,
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("embedding file is corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a table's rows have been preprocessed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preprocessing {
    None,
    Centered,
    CenteredWhitened,
}

/// Token-indexed row vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    matrix: DMatrix<f64>,
    pub preprocessing: Preprocessing,
}

impl EmbeddingTable {
    pub fn new(tokens: Vec<String>, matrix: DMatrix<f64>) -> Result<Self, ConceptError> {
        assert_eq!(tokens.len(), matrix.nrows(), "one row per token");
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(ConceptError::DuplicateToken(t.clone()));
            }
        }
        Ok(EmbeddingTable {
            tokens,
            index,
            matrix,
            preprocessing: Preprocessing::None,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn row_of(&self, token: &str) -> Result<DVector<f64>, ConceptError> {
        let i = self
            .index
            .get(token)
            .ok_or_else(|| ConceptError::MissingToken(token.to_string()))?;
        Ok(self.matrix.row(*i).transpose())
    }

    /// Rows for a list of tokens, stacked in order.
    pub fn rows_of(&self, tokens: &[String]) -> Result<DMatrix<f64>, ConceptError> {
        let mut out = DMatrix::zeros(tokens.len(), self.dim());
        for (r, t) in tokens.iter().enumerate() {
            let i = self
                .index
                .get(t)
                .ok_or_else(|| ConceptError::MissingToken(t.clone()))?;
            out.set_row(r, &self.matrix.row(*i));
        }
        Ok(out)
    }

    /// Write the binary embedding format (little-endian): magic `HGE1`,
    /// n u64, d u32, length-prefixed UTF-8 tokens, row-major f32 matrix.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), ConceptError> {
        w.write_all(HGE_MAGIC)?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        for t in &self.tokens {
            w.write_all(&(t.len() as u32).to_le_bytes())?;
            w.write_all(t.as_bytes())?;
        }
        for i in 0..self.len() {
            for j in 0..self.dim() {
                w.write_all(&(self.matrix[(i, j)] as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, ConceptError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != HGE_MAGIC {
            return Err(ConceptError::Corrupt("bad magic".into()));
        }
        let mut b8 = [0u8; 8];
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b4)?;
        let d = u32::from_le_bytes(b4) as usize;
        let mut tokens = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b4)?;
            let len = u32::from_le_bytes(b4) as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            tokens
                .push(String::from_utf8(buf).map_err(|_| ConceptError::Corrupt("bad token".into()))?);
        }
        let mut matrix = DMatrix::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                r.read_exact(&mut b4)?;
                matrix[(i, j)] = f32::from_le_bytes(b4) as f64;
            }
        }
        Self::new(tokens, matrix)
    }
}

/// Frozen centering + whitening transform, fit once and applied to any
/// subset.
#[derive(Debug, Clone)]
pub struct WhiteningTransform {
    pub mean: DVector<f64>,
    /// Symmetric inverse square root of the covariance (eigenvalues floored
    /// at `WHITEN_EIG_FLOOR * lambda_max`).
    pub inverse_sqrt: DMatrix<f64>,
}

impl WhiteningTransform {
    /// Fit on all rows of a table. Covariance uses the `1/n` convention.
    pub fn fit(table: &EmbeddingTable) -> Result<Self, ConceptError> {
        let n = table.len();
        if n < 2 {
            return Err(ConceptError::TooFewVectors { need: 2, got: n });
        }
        let x = table.matrix();
        let mean = x.row_mean().transpose();
        let centered = center_rows(x, &mean);
        let cov = centered.transpose() * &centered / n as f64;
        let eig = cov.symmetric_eigen();
        let lambda_max = eig.eigenvalues.amax();
        let floor = WHITEN_EIG_FLOOR * lambda_max.max(f64::MIN_POSITIVE);
        let d = table.dim();
        let mut inverse_sqrt = DMatrix::zeros(d, d);
        for k in 0..d {
            let lambda = eig.eigenvalues[k].max(floor);
            let v = eig.eigenvectors.column(k);
            inverse_sqrt += (1.0 / lambda.sqrt()) * &v * v.transpose();
        }
        Ok(WhiteningTransform { mean, inverse_sqrt })
    }

    /// Apply to arbitrary rows: `(x - mean) * Sigma^{-1/2}`.
    pub fn apply_rows(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        center_rows(rows, &self.mean) * &self.inverse_sqrt
    }

    pub fn apply_table(&self, table: &EmbeddingTable) -> EmbeddingTable {
        let mut out = table.clone();
        out.matrix = self.apply_rows(table.matrix());
        out.preprocessing = Preprocessing::CenteredWhitened;
        out
    }
}

fn center_rows(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        row -= mean.transpose();
    }
    out
}

/// Center and whiten a table on its own rows; returns the transformed table
/// and the frozen transform for later subsets.
pub fn center_whiten(
    table: &EmbeddingTable,
) -> Result<(EmbeddingTable, WhiteningTransform), ConceptError> {
    let transform = WhiteningTransform::fit(table)?;
    Ok((transform.apply_table(table), transform))
}

/// Analytic shrinkage covariance toward the scaled identity
/// `(trace(S)/d) I`. Returns the shrunk matrix and the intensity in [0, 1].
pub fn ledoit_wolf(rows: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = rows.nrows();
    let d = rows.ncols();
    let mean = rows.row_mean().transpose();
    let x = center_rows(rows, &mean);
    let sample = x.transpose() * &x / n as f64;
    let mu = sample.trace() / d as f64;
    let target = DMatrix::from_diagonal_element(d, d, mu);
    // dispersion of S around the target, per-dimension normalized
    let delta2 = (&sample - &target).iter().map(|v| v * v).sum::<f64>() / d as f64;
    if delta2 <= f64::EPSILON * mu * mu {
        return (target, 1.0);
    }
    // average dispersion of per-sample outer products around S
    let sample_sq = sample.iter().map(|v| v * v).sum::<f64>();
    let quartic: f64 = (0..n)
        .map(|k| {
            let norm2: f64 = x.row(k).iter().map(|v| v * v).sum();
            norm2 * norm2
        })
        .sum();
    let beta2 = ((quartic - n as f64 * sample_sq) / (n as f64 * n as f64 * d as f64)).max(0.0);
    let intensity = (beta2 / delta2).min(1.0);
    let shrunk = &sample * (1.0 - intensity) + target * intensity;
    (shrunk, intensity)
}

/// Symmetric pseudoinverse with a relative eigenvalue cutoff.
fn sym_pinv(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.amax();
    let cutoff = rel_cutoff * lambda_max;
    let d = m.nrows();
    let mut out = DMatrix::zeros(d, d);
    for k in 0..d {
        let lambda = eig.eigenvalues[k];
        if lambda.abs() > cutoff && lambda.abs() > 0.0 {
            let v = eig.eigenvectors.column(k);
            out += (1.0 / lambda) * &v * v.transpose();
        }
    }
    out
}

/// An estimated concept: unit direction, scalar magnitude along it, and the
/// resulting concept vector.
#[derive(Debug, Clone)]
pub struct ConceptVector {
    pub id: String,
    pub direction: DVector<f64>,
    pub magnitude: f64,
    pub vector: DVector<f64>,
    pub train_count: usize,
    /// Set when the training mean vanished and no direction exists.
    pub degenerate: bool,
    pub shrinkage_intensity: f64,
}

/// Direction maximizing `(u' mu)^2 / (u' Sigma u)`, before normalization of
/// the concept scale. Exposed for direct verification against closed forms.
pub fn direction_from_moments(mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Option<DVector<f64>> {
    let g = sym_pinv(sigma, PINV_CUTOFF) * mu;
    let norm = g.norm();
    (norm > 0.0).then(|| g / norm)
}

/// Estimate the concept vector of one synset from its training rows.
pub fn estimate_concept_vector(
    id: &str,
    training_rows: &DMatrix<f64>,
) -> Result<ConceptVector, ConceptError> {
    let n = training_rows.nrows();
    if n < 2 {
        return Err(ConceptError::TooFewVectors { need: 2, got: n });
    }
    let d = training_rows.ncols();
    let mu = training_rows.row_mean().transpose();
    let (sigma, shrinkage_intensity) = ledoit_wolf(training_rows);
    let direction = if mu.norm() == 0.0 {
        None
    } else {
        direction_from_moments(&mu, &sigma)
    };
    Ok(match direction {
        Some(direction) => {
            let magnitude = direction.dot(&mu);
            let vector = &direction * magnitude;
            ConceptVector {
                id: id.to_string(),
                direction,
                magnitude,
                vector,
                train_count: n,
                degenerate: false,
                shrinkage_intensity,
            }
        }
        None => ConceptVector {
            id: id.to_string(),
            direction: DVector::zeros(d),
            magnitude: 0.0,
            vector: DVector::zeros(d),
            train_count: n,
            degenerate: true,
            shrinkage_intensity,
        },
    })
}

/// Cosine of the angle between the child innovation `l_w - l_p` and the
/// parent vector `l_p`. A vanishing innovation counts as orthogonal.
pub fn innovation_cosine(child: &ConceptVector, parent: &ConceptVector) -> Result<f64, ConceptError> {
    let p_norm = parent.vector.norm();
    if p_norm == 0.0 {
        return Err(ConceptError::ZeroParent);
    }
    let diff = &child.vector - &parent.vector;
    let d_norm = diff.norm();
    if d_norm == 0.0 {
        return Ok(0.0);
    }
    Ok((diff.dot(&parent.vector) / (d_norm * p_norm)).clamp(-1.0, 1.0))
}

/// Projection statistics of held-out versus baseline vectors along a concept
/// direction.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SeparationStats {
    pub mean_heldout: f64,
    pub mean_baseline: f64,
    pub pooled_sd: f64,
    /// `(mean_heldout - mean_baseline) / pooled_sd`.
    pub separation: f64,
}

pub fn projection_separation(
    concept: &ConceptVector,
    heldout: &DMatrix<f64>,
    baseline: &DMatrix<f64>,
) -> Result<SeparationStats, ConceptError> {
    if heldout.nrows() == 0 {
        return Err(ConceptError::EmptySet("held-out"));
    }
    if baseline.nrows() == 0 {
        return Err(ConceptError::EmptySet("baseline"));
    }
    let project = |rows: &DMatrix<f64>| -> Vec<f64> {
        (0..rows.nrows())
            .map(|i| rows.row(i).transpose().dot(&concept.direction))
            .collect()
    };
    let h = project(heldout);
    let b = project(baseline);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64], m: f64| {
        if v.len() < 2 {
            0.0
        } else {
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
        }
    };
    let (mh, mb) = (mean(&h), mean(&b));
    let dof = (h.len() + b.len()).saturating_sub(2).max(1) as f64;
    let pooled_sd =
        (((h.len() - 1) as f64 * var(&h, mh) + (b.len() - 1) as f64 * var(&b, mb)) / dof).sqrt();
    let separation = if pooled_sd > 0.0 {
        (mh - mb) / pooled_sd
    } else if mh == mb {
        0.0
    } else {
        f64::INFINITY * (mh - mb).signum()
    };
    Ok(SeparationStats {
        mean_heldout: mh,
        mean_baseline: mb,
        pooled_sd,
        separation,
    })
}

/// Seeded train/held-out split: `round(fraction * n)` indices (at least 2,
/// at most n) drawn without replacement; both halves sorted.
pub fn select_training_subset(
    n: usize,
    fraction: f64,
    rng: &mut impl Rng,
) -> (Vec<usize>, Vec<usize>) {
    let count = ((fraction * n as f64).round() as usize).clamp(2.min(n), n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut train: Vec<usize> = idx[..count].to_vec();
    let mut held: Vec<usize> = idx[count..].to_vec();
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}
