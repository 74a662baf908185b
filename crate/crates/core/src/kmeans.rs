//! Proximity-initialized weighted k-means.
//!
//! [`cluster_protocol1`] chains a rank-k projection, careful seeding, one
//! proximity round that only keeps confidently assigned rows, and Lloyd
//! iterations on the unprojected features.
//!
//! Distances are always accumulated per column block: each block's partial
//! sum starts from zero and the block sums are added in block order. This is
//! the order in which a federation of column owners adds their partial
//! distances, which keeps the centralized and collaborative runs bitwise
//! comparable.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::parallel;
use crate::{Error, FeatureMatrix, Result};

pub use crate::linalg::project_top_k;

/// Marker for rows left out by the proximity round.
pub const UNASSIGNED: usize = usize::MAX;
/// Ratio used by the proximity round: `d(i, r) <= d(i, s) / 9`.
pub const PROXIMITY_RATIO: f64 = 1.0 / 9.0;
pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ROUNDS: usize = 10;

/// Cluster assignment with per-cluster centers and weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub k: usize,
    /// Cluster of each row, or [`UNASSIGNED`].
    pub assignment: Vec<usize>,
    /// `k x m` matrix of centers.
    pub centers: FeatureMatrix,
    /// Total weight assigned to each cluster.
    pub sizes: Vec<f64>,
    /// Lloyd rounds executed, including the final unchanged one.
    pub rounds: usize,
    /// Whether Lloyd stopped because the assignment stopped changing.
    pub converged: bool,
}

impl Partition {
    pub fn unassigned(&self) -> usize {
        self.assignment.iter().filter(|a| **a == UNASSIGNED).count()
    }

    /// Row indices of each cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &a) in self.assignment.iter().enumerate() {
            if a != UNASSIGNED {
                out[a].push(i);
            }
        }
        out
    }
}

/// Settings for [`cluster_protocol1_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol1Config {
    pub clusters: usize,
    pub max_rounds: usize,
    pub seed: u64,
    pub restarts: usize,
    /// Column blocks projected and seeded independently, as separate feature
    /// owners would. `None` treats the matrix as a single block.
    pub column_blocks: Option<Vec<Range<usize>>>,
}

impl Protocol1Config {
    pub fn new(clusters: usize, max_rounds: usize, seed: u64) -> Self {
        Self {
            clusters,
            max_rounds,
            seed,
            restarts: DEFAULT_RESTARTS,
            column_blocks: None,
        }
    }
}

/// Squared distance from one row to one center, restricted to `block`.
#[inline]
pub fn partial_distance(row: &[f64], center: &[f64], block: Range<usize>) -> f64 {
    let mut acc = 0.0;
    for j in block {
        let d = row[j] - center[j];
        acc += d * d;
    }
    acc
}

/// Row-major `n x k` squared distances, summed block by block.
pub fn squared_distances(
    x: &FeatureMatrix,
    centers: &FeatureMatrix,
    blocks: &[Range<usize>],
) -> Vec<f64> {
    let k = centers.rows();
    let mut out = vec![0.0; x.rows() * k];
    parallel::for_each_chunk_mut(&mut out, k.max(1), |i, d| {
        let row = x.row(i);
        for (r, slot) in d.iter_mut().enumerate() {
            let c = centers.row(r);
            let mut total = 0.0;
            for b in blocks {
                total += partial_distance(row, c, b.clone());
            }
            *slot = total;
        }
    });
    out
}

/// Index of the smallest entry; ties go to the lowest index.
pub fn nearest(distances: &[f64]) -> usize {
    let mut best = 0;
    for (r, d) in distances.iter().enumerate().skip(1) {
        if *d < distances[best] {
            best = r;
        }
    }
    best
}

/// The cluster whose distance is at most 1/9 of every other, if any.
pub fn proximity_choice(distances: &[f64]) -> Option<usize> {
    let r = nearest(distances);
    let ok = distances
        .iter()
        .enumerate()
        .all(|(s, d)| s == r || distances[r] <= PROXIMITY_RATIO * d);
    ok.then_some(r)
}

/// Weighted k-means cost of `centers` on `x`.
pub fn kmeans_cost(x: &FeatureMatrix, centers: &FeatureMatrix) -> f64 {
    let blocks = [0..x.cols()];
    let d = squared_distances(x, centers, &blocks);
    let k = centers.rows();
    (0..x.rows())
        .map(|i| {
            let row = &d[i * k..(i + 1) * k];
            x.weight(i) * row[nearest(row)]
        })
        .sum()
}

/// Weighted means of the rows assigned to each cluster. Clusters with no
/// weight keep their row of `previous`.
pub fn update_centers(
    x: &FeatureMatrix,
    assignment: &[usize],
    previous: &FeatureMatrix,
) -> (FeatureMatrix, Vec<f64>) {
    let (k, m) = (previous.rows(), x.cols());
    let mut sums = vec![0.0; k * m];
    let mut sizes = vec![0.0; k];
    for (i, &a) in assignment.iter().enumerate() {
        if a == UNASSIGNED {
            continue;
        }
        let w = x.weight(i);
        sizes[a] += w;
        for (s, v) in sums[a * m..(a + 1) * m].iter_mut().zip(x.row(i)) {
            *s += w * v;
        }
    }
    let mut centers = previous.clone();
    for r in 0..k {
        if sizes[r] > 0.0 {
            for (c, s) in centers.row_mut(r).iter_mut().zip(&sums[r * m..(r + 1) * m]) {
                *c = s / sizes[r];
            }
        }
    }
    (centers, sizes)
}

/// Careful (D²-weighted) seeding with `DEFAULT_RESTARTS` restarts.
pub fn init_ten_approx(x: &FeatureMatrix, k: usize, seed: u64) -> Result<FeatureMatrix> {
    init_ten_approx_with(x, k, seed, DEFAULT_RESTARTS)
}

/// Careful seeding with `restarts` independent draws from one seeded stream,
/// keeping the cheapest. Candidates are scanned in increasing id order so the
/// result does not depend on row order.
pub fn init_ten_approx_with(
    x: &FeatureMatrix,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<FeatureMatrix> {
    let n = x.rows();
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!(
            "cannot seed {k} centers from {n} rows"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| x.ids()[i]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, FeatureMatrix)> = None;
    for _ in 0..restarts.max(1) {
        let centers = seed_once(x, k, &order, &mut rng);
        let cost = kmeans_cost(x, &centers);
        if best.as_ref().map_or(true, |(c, _)| cost < *c) {
            best = Some((cost, centers));
        }
    }
    Ok(best.expect("at least one restart").1)
}

fn seed_once(x: &FeatureMatrix, k: usize, order: &[usize], rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let m = x.cols();
    let weights: Vec<f64> = order.iter().map(|&i| x.weight(i)).collect();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(order[sample(&weights, rng)]);
    let mut closest: Vec<f64> = order
        .iter()
        .map(|&i| partial_distance(x.row(i), x.row(chosen[0]), 0..m))
        .collect();
    while chosen.len() < k {
        let scores: Vec<f64> = weights.iter().zip(&closest).map(|(w, d)| w * d).collect();
        let pick = if scores.iter().sum::<f64>() > 0.0 {
            sample(&scores, rng)
        } else {
            sample(&weights, rng)
        };
        let c = order[pick];
        chosen.push(c);
        for (d, &i) in closest.iter_mut().zip(order) {
            *d = d.min(partial_distance(x.row(i), x.row(c), 0..m));
        }
    }
    let mut centers = FeatureMatrix::zeros(k, m);
    for (r, &c) in chosen.iter().enumerate() {
        centers.row_mut(r).copy_from_slice(x.row(c));
    }
    centers
}

/// Draws an index with probability proportional to `scores`.
fn sample(scores: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = scores.iter().sum();
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > 0.0 {
            acc += s;
            last = i;
            if target < acc {
                return i;
            }
        }
    }
    last
}

/// One proximity round: rows within 1/9 of a single center's distance are
/// assigned, the rest stay [`UNASSIGNED`]. Centers are recomputed from the
/// assigned rows of `x_projected`.
pub fn proximity_assign(x_projected: &FeatureMatrix, centers: &FeatureMatrix) -> Partition {
    let assignment = proximity_assignment(x_projected, centers, &[0..x_projected.cols()]);
    let (centers, sizes) = update_centers(x_projected, &assignment, centers);
    Partition {
        k: centers.rows(),
        assignment,
        centers,
        sizes,
        rounds: 0,
        converged: false,
    }
}

fn proximity_assignment(
    x: &FeatureMatrix,
    centers: &FeatureMatrix,
    blocks: &[Range<usize>],
) -> Vec<usize> {
    let k = centers.rows();
    let d = squared_distances(x, centers, blocks);
    (0..x.rows())
        .map(|i| proximity_choice(&d[i * k..(i + 1) * k]).unwrap_or(UNASSIGNED))
        .collect()
}

/// Weighted Lloyd iterations from `centers` for at most `max_rounds` rounds.
pub fn lloyd(x: &FeatureMatrix, centers: &FeatureMatrix, max_rounds: usize) -> Partition {
    let start = vec![UNASSIGNED; x.rows()];
    lloyd_blocks(x, centers, &start, max_rounds, &[0..x.cols()])
}

/// Lloyd iterations continuing from `previous`, with block-ordered distances.
pub fn lloyd_blocks(
    x: &FeatureMatrix,
    centers: &FeatureMatrix,
    previous: &[usize],
    max_rounds: usize,
    blocks: &[Range<usize>],
) -> Partition {
    let k = centers.rows();
    let mut centers = centers.clone();
    let mut assignment = previous.to_vec();
    let mut sizes = vec![0.0; k];
    let mut rounds = 0;
    let mut converged = false;
    while rounds < max_rounds.max(1) {
        rounds += 1;
        let d = squared_distances(x, &centers, blocks);
        let next: Vec<usize> = (0..x.rows())
            .map(|i| nearest(&d[i * k..(i + 1) * k]))
            .collect();
        let unchanged = next == assignment;
        assignment = next;
        let (c, s) = update_centers(x, &assignment, &centers);
        centers = c;
        sizes = s;
        if unchanged {
            converged = true;
            break;
        }
    }
    Partition {
        k,
        assignment,
        centers,
        sizes,
        rounds,
        converged,
    }
}

/// Centralized clustering: project, seed, one proximity round, then Lloyd on
/// the unprojected features.
pub fn cluster_protocol1(
    x: &FeatureMatrix,
    k: usize,
    max_rounds: usize,
    seed: u64,
) -> Result<Partition> {
    cluster_protocol1_with(x, &Protocol1Config::new(k, max_rounds, seed))
}

pub fn cluster_protocol1_with(x: &FeatureMatrix, cfg: &Protocol1Config) -> Result<Partition> {
    let k = cfg.clusters;
    if k == 0 || k > x.rows() {
        return Err(Error::InvalidArgument(format!(
            "cannot form {k} clusters from {} rows",
            x.rows()
        )));
    }
    let blocks = match &cfg.column_blocks {
        Some(b) => validate_blocks(b, x.cols())?,
        None => vec![0..x.cols()],
    };
    let mut projected_parts = Vec::with_capacity(blocks.len());
    let mut center_parts = Vec::with_capacity(blocks.len());
    for b in &blocks {
        let (projected, centers) = seed_block(&x.column_slice(b.clone())?, k, cfg)?;
        projected_parts.push(projected);
        center_parts.push(centers);
    }
    let projected = FeatureMatrix::hconcat(&projected_parts)?;
    let init = FeatureMatrix::hconcat(&center_parts)?;
    let first = proximity_assignment(&projected, &init, &blocks);
    let (centers, _) = update_centers(x, &first, &init);
    Ok(lloyd_blocks(x, &centers, &first, cfg.max_rounds, &blocks))
}

/// Projects one column block onto its top-k subspace and seeds k centers on
/// the projection. Blocks narrower than k are used unprojected.
pub fn seed_block(
    block: &FeatureMatrix,
    k: usize,
    cfg: &Protocol1Config,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let rank = k.min(block.rows()).min(block.cols());
    let projected = if rank == block.cols() || rank == 0 {
        block.clone()
    } else {
        project_top_k(block, rank)?
    };
    let centers = init_ten_approx_with(&projected, k, cfg.seed, cfg.restarts)?;
    Ok((projected, centers))
}

fn validate_blocks(blocks: &[Range<usize>], cols: usize) -> Result<Vec<Range<usize>>> {
    let mut next = 0;
    for b in blocks {
        if b.start != next || b.end <= b.start {
            return Err(Error::InvalidArgument(format!(
                "column blocks must be nonempty and contiguous, got {blocks:?}"
            )));
        }
        next = b.end;
    }
    if next != cols {
        return Err(Error::InvalidArgument(format!(
            "column blocks cover {next} of {cols} columns"
        )));
    }
    Ok(blocks.to_vec())
}
