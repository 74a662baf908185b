//! Undirected graphs, the symmetric normalized Laplacian and
//! Laplacian-smoothing low-pass filters.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::parallel;
use crate::{Error, FeatureMatrix, Result};

const NORM_SEED: u64 = 0x1a91_ac1a;
const NORM_TOL: f64 = 1e-6;
const NORM_MAX_ITERS: usize = 500;
/// Slack allowed above 2 when validating Laplacian eigenvalues.
pub const SPECTRUM_TOL: f64 = 1e-8;

/// Undirected graph over nodes `0..n` stored as sorted adjacency lists.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphStructure {
    n: usize,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    self_loops: bool,
}

impl GraphStructure {
    /// Builds a graph from undirected pairs. Pairs are canonicalized to
    /// `u < v` and deduplicated; explicit self pairs are dropped (use
    /// [`GraphStructure::with_self_loops`] to put ones on the diagonal).
    pub fn new(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (u, v) in pairs {
            if u >= n || v >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {v}) references a node outside 0..{n}"
                )));
            }
            if u != v {
                set.insert((u.min(v), u.max(v)));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut lists = vec![Vec::new(); n];
        for &(u, v) in &edges {
            lists[u].push(v);
            lists[v].push(u);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::with_capacity(2 * edges.len());
        offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            neighbors.extend(l);
            offsets.push(neighbors.len());
        }
        Ok(Self {
            n,
            edges,
            offsets,
            neighbors,
            self_loops: false,
        })
    }

    /// Adds (or removes) the identity to the adjacency matrix.
    pub fn with_self_loops(mut self, enabled: bool) -> Self {
        self.self_loops = enabled;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Canonical undirected edges, `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn self_loops(&self) -> bool {
        self.self_loops
    }

    /// Neighbors of `i` in increasing order, excluding a self loop.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Row sum of the adjacency matrix, counting the self loop when enabled.
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).len() + usize::from(self.self_loops)
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.degree(i)).collect()
    }

    /// Dense 0/1 adjacency matrix.
    pub fn adjacency_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for &j in self.neighbors(i) {
                a[(i, j)] = 1.0;
            }
            if self.self_loops {
                a[(i, i)] = 1.0;
            }
        }
        a
    }
}

/// Sparse symmetric matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
struct Csr {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for e in self.offsets[i]..self.offsets[i + 1] {
                d[(i, self.cols[e])] = self.values[e];
            }
        }
        d
    }

    fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        parallel::map_range(self.n, |i| {
            (self.offsets[i]..self.offsets[i + 1])
                .map(|e| self.values[e] * x[self.cols[e]])
                .sum()
        })
    }

    /// `self * y` for a row-major `n x cols` block.
    fn mul_block(&self, y: &[f64], cols: usize, out: &mut [f64]) {
        parallel::for_each_chunk_mut(out, cols.max(1), |i, row| {
            row.iter_mut().for_each(|v| *v = 0.0);
            for e in self.offsets[i]..self.offsets[i + 1] {
                let a = self.values[e];
                let src = &y[self.cols[e] * cols..(self.cols[e] + 1) * cols];
                for (o, s) in row.iter_mut().zip(src) {
                    *o += a * s;
                }
            }
        });
    }
}

/// `L_s = I - D^{-1/2} A D^{-1/2}` with its largest eigenvalue estimate.
///
/// Isolated nodes get a zero `D^{-1/2}` entry, so their row is the unit row.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLaplacian {
    matrix: Csr,
    spectral_norm_estimate: f64,
}

/// Builds the normalized Laplacian and estimates its spectral norm.
pub fn build_laplacian(g: &GraphStructure) -> NormalizedLaplacian {
    let n = g.n();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| match g.degree(i) {
            0 => 0.0,
            d => 1.0 / (d as f64).sqrt(),
        })
        .collect();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut values = Vec::new();
    offsets.push(0);
    for i in 0..n {
        let nb = g.neighbors(i);
        let split = nb.partition_point(|&j| j < i);
        let diagonal = if g.self_loops() {
            1.0 - inv_sqrt[i] * inv_sqrt[i]
        } else {
            1.0
        };
        for &j in &nb[..split] {
            cols.push(j);
            values.push(-inv_sqrt[i] * inv_sqrt[j]);
        }
        cols.push(i);
        values.push(diagonal);
        for &j in &nb[split..] {
            cols.push(j);
            values.push(-inv_sqrt[i] * inv_sqrt[j]);
        }
        offsets.push(cols.len());
    }
    let matrix = Csr {
        n,
        offsets,
        cols,
        values,
    };
    let spectral_norm_estimate = power_iteration(&matrix);
    NormalizedLaplacian {
        matrix,
        spectral_norm_estimate,
    }
}

fn power_iteration(m: &Csr) -> f64 {
    if m.n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(NORM_SEED);
    let mut v: Vec<f64> = (0..m.n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut v);
    let mut estimate = 0.0;
    for _ in 0..NORM_MAX_ITERS {
        let mut w = m.mul_vec(&v);
        let next = normalize(&mut w);
        v = w;
        let done = (next - estimate).abs() <= NORM_TOL * next;
        estimate = next;
        if done {
            break;
        }
    }
    estimate
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

impl NormalizedLaplacian {
    pub fn n(&self) -> usize {
        self.matrix.n
    }

    /// Power-iteration estimate of the largest eigenvalue.
    pub fn spectral_norm_estimate(&self) -> f64 {
        self.spectral_norm_estimate
    }

    /// Dense copy, for tests and small-graph diagnostics.
    pub fn to_dense(&self) -> DMatrix<f64> {
        self.matrix.to_dense()
    }

    /// `(i, j, value)` entries in row order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.matrix.n).flat_map(move |i| {
            (self.matrix.offsets[i]..self.matrix.offsets[i + 1])
                .map(move |e| (i, self.matrix.cols[e], self.matrix.values[e]))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterFamily {
    /// `p(λ) = (1 - λ/2)^ψ`
    Half,
    /// `p(λ) = (1 - λ/‖L_s‖)^ψ`
    Norm,
}

impl std::str::FromStr for FilterFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half" => Ok(Self::Half),
            "norm" => Ok(Self::Norm),
            other => Err(Error::InvalidArgument(format!(
                "unknown filter family {other:?}, expected half or norm"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub family: FilterFamily,
    pub order: u32,
}

impl FilterSpec {
    pub fn new(family: FilterFamily, order: u32) -> Self {
        Self { family, order }
    }

    fn divisor(&self, l: &NormalizedLaplacian) -> Result<f64> {
        match self.family {
            FilterFamily::Half => Ok(2.0),
            FilterFamily::Norm if l.spectral_norm_estimate > 0.0 => Ok(l.spectral_norm_estimate),
            FilterFamily::Norm => Err(Error::InvalidArgument(
                "norm filter needs a Laplacian with positive spectral norm".into(),
            )),
        }
    }
}

/// `G X` with `G = (I - L_s/s)^ψ`, computed by ψ sparse products.
pub fn apply_filter(
    x: &FeatureMatrix,
    l: &NormalizedLaplacian,
    spec: &FilterSpec,
) -> Result<FeatureMatrix> {
    if x.rows() != l.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows for a {}-node graph",
            x.rows(),
            l.n()
        )));
    }
    if spec.order == 0 {
        return Ok(x.clone());
    }
    let s = spec.divisor(l)?;
    let mut g = l.matrix.clone();
    for i in 0..g.n {
        for e in g.offsets[i]..g.offsets[i + 1] {
            let identity = if g.cols[e] == i { 1.0 } else { 0.0 };
            g.values[e] = identity - g.values[e] / s;
        }
    }
    let cols = x.cols();
    let mut cur = x.data().to_vec();
    let mut next = vec![0.0; cur.len()];
    for _ in 0..spec.order {
        g.mul_block(&cur, cols, &mut next);
        std::mem::swap(&mut cur, &mut next);
    }
    let mut out = x.clone();
    out.data_mut().copy_from_slice(&cur);
    Ok(out)
}

/// Evaluates the filter's frequency response `p(λ)`.
///
/// For the norm family, `spectral_norm` is `‖L_s‖`; points of `[‖L_s‖, 2]`
/// outside the spectrum map to 0 rather than to a negative base.
pub fn frequency_response(
    spec: &FilterSpec,
    lambdas: &[f64],
    spectral_norm: f64,
) -> Result<Vec<f64>> {
    let divisor = match spec.family {
        FilterFamily::Half => 2.0,
        FilterFamily::Norm if spectral_norm > 0.0 => spectral_norm,
        FilterFamily::Norm => {
            return Err(Error::InvalidArgument(
                "norm filter needs a positive spectral norm".into(),
            ))
        }
    };
    lambdas
        .iter()
        .map(|&lambda| {
            if !(-SPECTRUM_TOL..=2.0 + SPECTRUM_TOL).contains(&lambda) {
                return Err(Error::InvalidArgument(format!(
                    "eigenvalue {lambda} outside [0, 2]"
                )));
            }
            let base = (1.0 - lambda / divisor).max(0.0);
            Ok(base.powi(spec.order as i32))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn path3() -> GraphStructure {
        GraphStructure::new(3, [(0, 1), (1, 2)]).unwrap()
    }

    /// `I - D^{-1/2} A D^{-1/2}` straight from the dense formula.
    fn dense_laplacian(g: &GraphStructure) -> DMatrix<f64> {
        let a = g.adjacency_dense();
        let n = g.n();
        let d: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
        DMatrix::from_fn(n, n, |i, j| {
            let scale = |k: usize| if d[k] > 0.0 { 1.0 / d[k].sqrt() } else { 0.0 };
            let ident = if i == j { 1.0 } else { 0.0 };
            ident - scale(i) * a[(i, j)] * scale(j)
        })
    }

    #[test]
    fn single_edge() {
        let l = build_laplacian(&GraphStructure::new(2, [(0, 1)]).unwrap());
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert!((l.to_dense() - expect).abs().max() < 1e-15);
        assert!((l.spectral_norm_estimate() - 2.0).abs() < 1e-5);
    }

    #[test]
    fn empty_graph_is_identity() {
        let l = build_laplacian(&GraphStructure::new(3, []).unwrap());
        assert_eq!(l.to_dense(), DMatrix::identity(3, 3));
    }

    #[test]
    fn path_graph_matches_dense_formula() {
        let g = path3();
        let l = build_laplacian(&g).to_dense();
        let h = 1.0 / 2f64.sqrt();
        let by_hand = DMatrix::from_row_slice(3, 3, &[1.0, -h, 0.0, -h, 1.0, -h, 0.0, -h, 1.0]);
        assert!((&l - by_hand).abs().max() < 1e-15);
        assert!((&l - dense_laplacian(&g)).abs().max() < 1e-15);
        // path graphs are bipartite: spectrum {0, 1, 2}
        let mut ev: Vec<f64> = SymmetricEigen::new(l).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for (got, want) in ev.iter().zip([0.0, 1.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_and_reversed_edges_collapse() {
        let g = GraphStructure::new(3, [(0, 1), (1, 0), (0, 1), (2, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.degree(2), 0);
        assert!(GraphStructure::new(2, [(0, 2)]).is_err());
    }

    #[test]
    fn self_loops_enter_the_degree() {
        let g = path3().with_self_loops(true);
        let l = build_laplacian(&g).to_dense();
        assert!((&l - dense_laplacian(&g)).abs().max() < 1e-15);
        assert!((l[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_order_filter_is_identity() {
        let g = path3();
        let x = FeatureMatrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let l = build_laplacian(&g);
        for family in [FilterFamily::Half, FilterFamily::Norm] {
            assert_eq!(apply_filter(&x, &l, &FilterSpec::new(family, 0)).unwrap(), x);
        }
        let short = FeatureMatrix::zeros(2, 1);
        assert!(apply_filter(&short, &l, &FilterSpec::new(FilterFamily::Half, 1)).is_err());
    }

    #[test]
    fn response_examples() {
        let half = |order| FilterSpec::new(FilterFamily::Half, order);
        assert_eq!(frequency_response(&half(1), &[2.0], 0.0).unwrap(), vec![0.0]);
        assert_eq!(frequency_response(&half(2), &[1.0], 0.0).unwrap(), vec![0.25]);
        assert!(frequency_response(&half(1), &[2.1], 0.0).is_err());
        assert!(frequency_response(&half(1), &[-0.1], 0.0).is_err());
    }

    #[test]
    fn norm_response_decreases_on_grid() {
        // spectral norm below 2, as in graphs without bipartite components
        let spec = FilterSpec::new(FilterFamily::Norm, 5);
        let grid: Vec<f64> = (0..=200).map(|i| i as f64 / 100.0).collect();
        let r = frequency_response(&spec, &grid, 1.9).unwrap();
        assert!(r.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.iter().all(|v| *v >= 0.0));
        assert_eq!(r[0], 1.0);
    }

    fn arb_graph(max_n: usize) -> impl Strategy<Value = GraphStructure> {
        (2..max_n).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..3 * n)
                .prop_map(move |e| GraphStructure::new(n, e).unwrap())
        })
    }

    fn arb_features(n: usize, m: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::new(n, m, (0..n * m).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn spectrum_within_bounds(g in arb_graph(60)) {
            let l = build_laplacian(&g);
            let ev = SymmetricEigen::new(l.to_dense()).eigenvalues;
            prop_assert!(ev.iter().all(|v| *v >= -SPECTRUM_TOL && *v <= 2.0 + SPECTRUM_TOL));
            prop_assert!(l.spectral_norm_estimate() <= 2.0 + SPECTRUM_TOL);
        }

        #[test]
        fn orders_compose(g in arb_graph(40), a in 0u32..5, b in 0u32..5, seed in any::<u64>()) {
            let l = build_laplacian(&g);
            let x = arb_features(g.n(), 3, seed);
            for family in [FilterFamily::Half, FilterFamily::Norm] {
                let two = apply_filter(
                    &apply_filter(&x, &l, &FilterSpec::new(family, a)).unwrap(),
                    &l,
                    &FilterSpec::new(family, b),
                ).unwrap();
                let one = apply_filter(&x, &l, &FilterSpec::new(family, a + b)).unwrap();
                prop_assert!(one.frobenius_distance(&two).unwrap() < 1e-9);
            }
        }

        #[test]
        fn filter_is_linear(g in arb_graph(40), alpha in -3.0..3.0f64, beta in -3.0..3.0f64, seed in any::<u64>()) {
            let l = build_laplacian(&g);
            let spec = FilterSpec::new(FilterFamily::Half, 4);
            let x = arb_features(g.n(), 2, seed);
            let y = arb_features(g.n(), 2, seed ^ 1);
            let combo = FeatureMatrix::new(
                g.n(), 2,
                x.data().iter().zip(y.data()).map(|(a, b)| alpha * a + beta * b).collect(),
            ).unwrap();
            let lhs = apply_filter(&combo, &l, &spec).unwrap();
            let fx = apply_filter(&x, &l, &spec).unwrap();
            let fy = apply_filter(&y, &l, &spec).unwrap();
            let rhs = FeatureMatrix::new(
                g.n(), 2,
                fx.data().iter().zip(fy.data()).map(|(a, b)| alpha * a + beta * b).collect(),
            ).unwrap();
            let scale = 1.0 + rhs.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(lhs.frobenius_distance(&rhs).unwrap() <= 1e-9 * scale);
        }

        #[test]
        fn half_response_monotone(order in 0u32..40) {
            let grid: Vec<f64> = (0..=400).map(|i| i as f64 / 200.0).collect();
            let r = frequency_response(&FilterSpec::new(FilterFamily::Half, order), &grid, 0.0).unwrap();
            prop_assert!(r.iter().all(|v| *v >= 0.0));
            prop_assert!(r.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn iterative_filter_matches_eigendecomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let n = 50;
        let pairs: Vec<_> = (0..150).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect();
        let g = GraphStructure::new(n, pairs).unwrap();
        let l = build_laplacian(&g);
        let x = arb_features(n, 4, 9);
        let eig = SymmetricEigen::new(l.to_dense());
        for family in [FilterFamily::Half, FilterFamily::Norm] {
            let spec = FilterSpec::new(family, 3);
            let s = match family {
                FilterFamily::Half => 2.0,
                FilterFamily::Norm => l.spectral_norm_estimate(),
            };
            let p = eig.eigenvalues.map(|lambda| (1.0 - lambda / s).powi(3));
            let gmat = &eig.eigenvectors * DMatrix::from_diagonal(&p) * eig.eigenvectors.transpose();
            let oracle = gmat * x.to_dmatrix();
            let got = apply_filter(&x, &l, &spec).unwrap().to_dmatrix();
            assert!((got - oracle).abs().max() < 1e-6);
        }
    }
}
