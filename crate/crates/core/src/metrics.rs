//! Clustering quality (ACC, NMI, macro-F1) and nearest-neighbour privacy
//! measures.

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI};

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::parallel;
use crate::{Error, FeatureMatrix, Result};

pub const DEFAULT_NEIGHBORS: usize = 3;
pub const MIN_PRIVACY_SAMPLES: usize = 100;
/// A conditional entropy this many bits below the marginal marks the
/// estimate as degenerate (near-deterministic dependence).
pub const DEGENERATE_GAP_BITS: f64 = 8.0;

/// Counts of (predicted cluster, true class) pairs over dense indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contingency {
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

impl Contingency {
    pub fn new(predicted: &[usize], truth: &[usize]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} predictions for {} labels",
                predicted.len(),
                truth.len()
            )));
        }
        let p_index = dense_index(predicted);
        let t_index = dense_index(truth);
        let mut counts = vec![vec![0u64; t_index.len()]; p_index.len()];
        for (p, t) in predicted.iter().zip(truth) {
            counts[p_index[p]][t_index[t]] += 1;
        }
        Ok(Self {
            counts,
            n: predicted.len() as u64,
        })
    }

    fn rows(&self) -> usize {
        self.counts.len()
    }

    fn cols(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_sums(&self) -> Vec<u64> {
        (0..self.cols())
            .map(|c| self.counts.iter().map(|r| r[c]).sum())
            .collect()
    }

    /// Maximum-weight one-to-one matching; `result[cluster] = Some(class)`.
    pub fn best_matching(&self) -> Vec<Option<usize>> {
        let (r, c) = (self.rows(), self.cols());
        if r == 0 || c == 0 {
            return vec![None; r];
        }
        if r <= c {
            let m = Matrix::from_fn(r, c, |(i, j)| self.counts[i][j] as i64);
            let (_, cols) = kuhn_munkres(&m);
            cols.into_iter().map(Some).collect()
        } else {
            let m = Matrix::from_fn(c, r, |(j, i)| self.counts[i][j] as i64);
            let (_, rows) = kuhn_munkres(&m);
            let mut out = vec![None; r];
            for (class, cluster) in rows.into_iter().enumerate() {
                out[cluster] = Some(class);
            }
            out
        }
    }
}

fn dense_index(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for l in labels {
        m.entry(*l).or_insert(0);
    }
    for (i, v) in m.values_mut().enumerate() {
        *v = i;
    }
    m
}

/// Fraction of nodes whose cluster maps to their class under the best
/// one-to-one matching.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    let c = Contingency::new(predicted, truth)?;
    if c.n == 0 {
        return Ok(0.0);
    }
    let matched: u64 = c
        .best_matching()
        .iter()
        .enumerate()
        .filter_map(|(p, t)| t.map(|t| c.counts[p][t]))
        .sum();
    Ok(matched as f64 / c.n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmiScore {
    pub value: f64,
    /// Set when either labeling has a single class, where NMI is taken as 0.
    pub degenerate: bool,
}

/// Normalized mutual information with arithmetic-mean normalization.
pub fn nmi(predicted: &[usize], truth: &[usize]) -> Result<NmiScore> {
    let c = Contingency::new(predicted, truth)?;
    let n = c.n as f64;
    let entropy = |sums: &[u64]| -> f64 {
        sums.iter()
            .filter(|s| **s > 0)
            .map(|s| {
                let p = *s as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let (rs, cs) = (c.row_sums(), c.col_sums());
    let (hp, ht) = (entropy(&rs), entropy(&cs));
    if rs.len() <= 1 || cs.len() <= 1 {
        return Ok(NmiScore {
            value: 0.0,
            degenerate: true,
        });
    }
    // sorted terms keep the sum independent of argument order
    let mut terms = Vec::new();
    for (i, row) in c.counts.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                terms.push(nij / n * (n * nij / (rs[i] as f64 * cs[j] as f64)).ln());
            }
        }
    }
    terms.sort_by(f64::total_cmp);
    let mi: f64 = terms.iter().sum();
    Ok(NmiScore {
        value: (mi / ((hp + ht) / 2.0)).clamp(0.0, 1.0),
        degenerate: false,
    })
}

/// Unweighted mean over true classes of the F1 score of the matched cluster;
/// classes left unmatched score 0.
pub fn macro_f1(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    let c = Contingency::new(predicted, truth)?;
    if c.cols() == 0 {
        return Ok(0.0);
    }
    let (rs, cs) = (c.row_sums(), c.col_sums());
    let mut f1 = vec![0.0; c.cols()];
    for (p, t) in c.best_matching().into_iter().enumerate() {
        if let Some(t) = t {
            let tp = c.counts[p][t] as f64;
            if tp > 0.0 {
                let precision = tp / rs[p] as f64;
                let recall = tp / cs[t] as f64;
                f1[t] = 2.0 * precision * recall / (precision + recall);
            }
        }
    }
    Ok(f1.iter().sum::<f64>() / f1.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringScores {
    pub accuracy: f64,
    pub nmi: f64,
    pub macro_f1: f64,
    pub nmi_degenerate: bool,
}

pub fn evaluate(predicted: &[usize], truth: &[usize]) -> Result<ClusteringScores> {
    let n = nmi(predicted, truth)?;
    Ok(ClusteringScores {
        accuracy: accuracy(predicted, truth)?,
        nmi: n.value,
        macro_f1: macro_f1(predicted, truth)?,
        nmi_degenerate: n.degenerate,
    })
}

/// Privacy level and leakage of a shared quantity `Y` given private `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    /// `2^{h(Y|X)}`.
    pub privacy_level: f64,
    /// `1 - 2^{h(Y|X) - h(Y)}`, clipped to `[0, 1]`.
    pub privacy_leakage: f64,
    pub entropy_y_bits: f64,
    pub entropy_x_bits: f64,
    pub entropy_joint_bits: f64,
    pub conditional_entropy_bits: f64,
    pub neighbors: usize,
    pub samples: usize,
    pub clipped: bool,
    pub degenerate: bool,
}

/// Kozachenko-Leonenko differential entropy estimate in bits, using the
/// Euclidean distance to the `k`-th nearest neighbour. Returns `-inf` when
/// some sample has `k` exact duplicates.
pub fn knn_entropy_bits(samples: &FeatureMatrix, k: usize) -> Result<f64> {
    let n = samples.rows();
    let d = samples.cols();
    if k == 0 || n <= k {
        return Err(Error::InvalidArgument(format!(
            "need more than {k} samples, got {n}"
        )));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("samples have no dimensions".into()));
    }
    let radii = parallel::map_range(n, |i| kth_neighbor_distance(samples, i, k));
    if radii.contains(&0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let df = d as f64;
    let log_unit_ball = df / 2.0 * PI.ln() - ln_gamma(df / 2.0 + 1.0);
    let mean_log_radius = radii.iter().map(|r| r.ln()).sum::<f64>() / n as f64;
    let nats = digamma(n as f64) - digamma(k as f64) + log_unit_ball + df * mean_log_radius;
    Ok(nats / LN_2)
}

fn kth_neighbor_distance(x: &FeatureMatrix, i: usize, k: usize) -> f64 {
    // k smallest squared distances, kept sorted
    let mut best = vec![f64::INFINITY; k];
    let row = x.row(i);
    for j in 0..x.rows() {
        if j == i {
            continue;
        }
        let d: f64 = row.iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best[k - 1] {
            let pos = best.partition_point(|v| *v <= d);
            best.insert(pos, d);
            best.pop();
        }
    }
    best[k - 1].sqrt()
}

/// Estimates `Π(Y|X)` and `P(Y|X)` from paired samples (row `i` of `shared_y`
/// pairs with row `i` of `private_x`), using `h(Y|X) = h(X, Y) - h(X)`.
pub fn privacy_metrics(
    shared_y: &FeatureMatrix,
    private_x: &FeatureMatrix,
    neighbors: usize,
) -> Result<PrivacyReport> {
    let n = shared_y.rows();
    if private_x.rows() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} samples of Y but {} of X",
            private_x.rows()
        )));
    }
    if n < MIN_PRIVACY_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "privacy estimates need at least {MIN_PRIVACY_SAMPLES} samples, got {n}"
        )));
    }
    let plain = |m: &FeatureMatrix| FeatureMatrix::new(m.rows(), m.cols(), m.data().to_vec());
    let joint = FeatureMatrix::hconcat(&[plain(shared_y)?, plain(private_x)?])?;
    let hy = knn_entropy_bits(shared_y, neighbors)?;
    let hx = knn_entropy_bits(private_x, neighbors)?;
    let hxy = knn_entropy_bits(&joint, neighbors)?;
    let conditional = hxy - hx;
    let finite = hy.is_finite() && hx.is_finite() && hxy.is_finite();
    let raw = 1.0 - (conditional - hy).exp2();
    let leakage = if raw.is_nan() { 1.0 } else { raw.clamp(0.0, 1.0) };
    Ok(PrivacyReport {
        privacy_level: conditional.exp2(),
        privacy_leakage: leakage,
        entropy_y_bits: hy,
        entropy_x_bits: hx,
        entropy_joint_bits: hxy,
        conditional_entropy_bits: conditional,
        neighbors,
        samples: n,
        clipped: !(0.0..=1.0).contains(&raw),
        degenerate: !finite || conditional.is_nan() || hy - conditional > DEGENERATE_GAP_BITS,
    })
}
