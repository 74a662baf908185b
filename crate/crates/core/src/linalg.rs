//! Dense linear algebra used by the clustering kernels: top-k singular
//! subspaces, rank-k projections and spectral norms.
//!
//! Small problems go through a symmetric eigendecomposition of the Gram matrix
//! on the smaller side. Large ones use block subspace iteration with
//! Rayleigh-Ritz extraction from a fixed-seed start block, so every result is
//! reproducible.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::parallel;
use crate::{Error, FeatureMatrix, Result};

/// Largest Gram side handled by a dense eigendecomposition.
pub const DENSE_LIMIT: usize = 800;
/// Largest `min(rows, cols)` for which spectral norms use a dense solve.
pub const DENSE_NORM_LIMIT: usize = 500;

const START_SEED: u64 = 0x5eed_0f5b_5ace;
const MAX_SUBSPACE_ITERS: usize = 1000;
const SUBSPACE_TOL: f64 = 1e-10;
/// Singular values below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-12;

/// Orthonormal basis (as columns) of the top right singular subspace of
/// `W^{1/2} X`, where `W` holds the row weights of `x`.
///
/// Directions whose singular value is numerically zero are dropped, so the
/// basis may have fewer than `k` columns. They do not change `X V V^T`.
pub fn top_right_singular_vectors(x: &FeatureMatrix, k: usize) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("rank must be positive".into()));
    }
    let (n, m) = (x.rows(), x.cols());
    let k = k.min(n).min(m);
    if k == 0 {
        return Ok(DMatrix::zeros(m, 0));
    }
    if m <= DENSE_LIMIT && m <= n.max(1) {
        let (values, vectors) = top_eigen(weighted_gram(x), k);
        let keep = significant(&values);
        Ok(vectors.columns(0, keep).into_owned())
    } else if n <= DENSE_LIMIT {
        // Left singular vectors of W^{1/2} X, mapped back to the right side.
        let (values, left) = top_eigen(weighted_outer_gram(x), k);
        let keep = significant(&values);
        let sqrt_w: Vec<f64> = (0..n).map(|i| x.weight(i).sqrt()).collect();
        let scaled: Vec<f64> = left
            .columns(0, keep)
            .row_iter()
            .zip(&sqrt_w)
            .flat_map(|(r, s)| r.iter().map(move |v| v * s).collect::<Vec<_>>())
            .collect();
        let mut v = xt_times(x, &scaled, keep, false);
        for c in 0..keep {
            let sigma = values[c].sqrt();
            v.column_mut(c).scale_mut(1.0 / sigma);
        }
        Ok(v)
    } else {
        let (values, vectors) = subspace_iteration(x, k, k + k.max(10));
        let keep = significant(&values);
        Ok(vectors.columns(0, keep).into_owned())
    }
}

/// Rank-`k` projection `X V V^T` onto the top right singular subspace. Row
/// weights only influence which subspace is chosen.
pub fn project_top_k(x: &FeatureMatrix, k: usize) -> Result<FeatureMatrix> {
    if k == 0 || k > x.rows().min(x.cols()) {
        return Err(Error::InvalidArgument(format!(
            "projection rank {k} outside 1..={}",
            x.rows().min(x.cols())
        )));
    }
    let v = top_right_singular_vectors(x, k)?;
    Ok(project_onto(x, &v))
}

/// `X V V^T` for a basis `V` with orthonormal columns.
pub fn project_onto(x: &FeatureMatrix, v: &DMatrix<f64>) -> FeatureMatrix {
    let (n, m) = (x.rows(), x.cols());
    let r = v.ncols();
    let v_rows = row_major(v);
    let mut out = x.clone();
    parallel::for_each_chunk_mut(out.data_mut(), m.max(1), |i, row_out| {
        if i >= n {
            return;
        }
        let row = x.row(i);
        let mut coeff = vec![0.0; r];
        for (j, xv) in row.iter().enumerate() {
            if *xv != 0.0 {
                let vr = &v_rows[j * r..(j + 1) * r];
                for (c, vv) in coeff.iter_mut().zip(vr) {
                    *c += xv * vv;
                }
            }
        }
        for (j, o) in row_out.iter_mut().enumerate() {
            let vr = &v_rows[j * r..(j + 1) * r];
            *o = coeff.iter().zip(vr).map(|(c, vv)| c * vv).sum();
        }
    });
    out
}

/// Largest singular value of `x` (row weights are ignored).
pub fn spectral_norm(x: &FeatureMatrix) -> f64 {
    let (n, m) = (x.rows(), x.cols());
    if n == 0 || m == 0 {
        return 0.0;
    }
    let plain = if x.weights().is_some() {
        FeatureMatrix::new(n, m, x.data().to_vec()).expect("same shape")
    } else {
        x.clone()
    };
    let lambda = if n.min(m) <= DENSE_NORM_LIMIT {
        let g = if m <= n {
            weighted_gram(&plain)
        } else {
            weighted_outer_gram(&plain)
        };
        top_eigen(g, 1).0[0]
    } else {
        subspace_iteration(&plain, 1, 8).0[0]
    };
    lambda.max(0.0).sqrt()
}

/// `X^T W X` as a dense `cols x cols` matrix.
pub fn weighted_gram(x: &FeatureMatrix) -> DMatrix<f64> {
    let (n, m) = (x.rows(), x.cols());
    let mut cols = vec![0.0; m * n];
    let mut weighted = vec![0.0; m * n];
    for i in 0..n {
        let w = x.weight(i);
        for (j, v) in x.row(i).iter().enumerate() {
            cols[j * n + i] = *v;
            weighted[j * n + i] = w * v;
        }
    }
    let rows: Vec<Vec<f64>> = parallel::map_range(m, |a| {
        let ca = &weighted[a * n..(a + 1) * n];
        (a..m)
            .map(|b| dot(ca, &cols[b * n..(b + 1) * n]))
            .collect()
    });
    symmetric_from_upper(m, &rows)
}

/// `W^{1/2} X X^T W^{1/2}` as a dense `rows x rows` matrix.
pub fn weighted_outer_gram(x: &FeatureMatrix) -> DMatrix<f64> {
    let n = x.rows();
    let rows: Vec<Vec<f64>> = parallel::map_range(n, |a| {
        let wa = x.weight(a).sqrt();
        (a..n)
            .map(|b| wa * x.weight(b).sqrt() * dot(x.row(a), x.row(b)))
            .collect()
    });
    symmetric_from_upper(n, &rows)
}

/// Top-`k` eigenpairs of a symmetric matrix, eigenvalues descending.
pub fn top_eigen(g: DMatrix<f64>, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let dim = g.nrows();
    let eig = SymmetricEigen::new(g);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let k = k.min(dim);
    let values = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(dim, k);
    for (c, &i) in order[..k].iter().enumerate() {
        vectors.set_column(c, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Top-`k` eigenpairs of `X^T W X` by block subspace iteration with `block`
/// columns.
fn subspace_iteration(x: &FeatureMatrix, k: usize, block: usize) -> (Vec<f64>, DMatrix<f64>) {
    let m = x.cols();
    let b = block.max(k).min(m).min(x.rows());
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let start = DMatrix::from_fn(m, b, |_, _| StandardNormal.sample(&mut rng));
    let mut q = start.qr().q();
    let mut values = vec![0.0; k];
    let mut vectors = DMatrix::zeros(m, k);
    for _ in 0..MAX_SUBSPACE_ITERS {
        let z = apply_gram(x, &q);
        let h = q.transpose() * &z;
        let h = (&h + h.transpose()) * 0.5;
        let (theta, e) = top_eigen(h, b);
        let ritz = &q * &e;
        let az = &z * &e;
        let scale = theta[0].abs().max(f64::MIN_POSITIVE);
        let converged = (0..k).all(|c| {
            let res: DVector<f64> = az.column(c) - ritz.column(c) * theta[c];
            res.norm() <= SUBSPACE_TOL * scale
        });
        values.copy_from_slice(&theta[..k]);
        vectors = ritz.columns(0, k).into_owned();
        if converged {
            break;
        }
        q = z.qr().q();
    }
    (values, vectors)
}

/// `X^T W X Q` without forming the Gram matrix.
fn apply_gram(x: &FeatureMatrix, q: &DMatrix<f64>) -> DMatrix<f64> {
    let b = q.ncols();
    let xq = x_times(x, &row_major(q), b);
    xt_times(x, &xq, b, true)
}

/// `X Q` for row-major `Q` with `b` columns; row-major result.
fn x_times(x: &FeatureMatrix, q: &[f64], b: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.rows() * b];
    parallel::for_each_chunk_mut(&mut out, b.max(1), |i, o| {
        for (j, xv) in x.row(i).iter().enumerate() {
            if *xv != 0.0 {
                for (oc, qv) in o.iter_mut().zip(&q[j * b..(j + 1) * b]) {
                    *oc += xv * qv;
                }
            }
        }
    });
    out
}

/// `X^T Y` (or `X^T W Y`) for row-major `Y` with `b` columns.
fn xt_times(x: &FeatureMatrix, y: &[f64], b: usize, weighted: bool) -> DMatrix<f64> {
    const BLOCK: usize = 64;
    let m = x.cols();
    let mut out = vec![0.0; m * b];
    parallel::for_each_chunk_mut(&mut out, BLOCK * b.max(1), |blk, o| {
        let j0 = blk * BLOCK;
        let width = o.len() / b.max(1);
        for i in 0..x.rows() {
            let w = if weighted { x.weight(i) } else { 1.0 };
            let yr = &y[i * b..(i + 1) * b];
            let xr = &x.row(i)[j0..j0 + width];
            for (jj, xv) in xr.iter().enumerate() {
                if *xv != 0.0 {
                    let s = w * xv;
                    for (oc, yv) in o[jj * b..(jj + 1) * b].iter_mut().zip(yr) {
                        *oc += s * yv;
                    }
                }
            }
        }
    });
    DMatrix::from_row_slice(m, b, &out)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn symmetric_from_upper(dim: usize, rows: &[Vec<f64>]) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(dim, dim);
    for (a, r) in rows.iter().enumerate() {
        for (off, v) in r.iter().enumerate() {
            g[(a, a + off)] = *v;
            g[(a + off, a)] = *v;
        }
    }
    g
}

fn significant(values: &[f64]) -> usize {
    let top = values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    values.iter().take_while(|v| **v > RANK_TOL * top).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(n: usize, m: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::new(n, m, (0..n * m).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Rank-k projection through nalgebra's SVD.
    fn oracle_projection(x: &FeatureMatrix, k: usize) -> DMatrix<f64> {
        let svd = x.to_dmatrix().svd(true, true);
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
        let vt = svd.v_t.unwrap();
        let mut p = DMatrix::zeros(x.cols(), x.cols());
        for &i in order.iter().take(k) {
            let v = vt.row(i).transpose();
            p += &v * v.transpose();
        }
        x.to_dmatrix() * p
    }

    fn assert_close(a: &FeatureMatrix, b: &DMatrix<f64>, tol: f64) {
        let diff = (a.to_dmatrix() - b).abs().max();
        assert!(diff < tol, "max deviation {diff}");
    }

    #[test]
    fn projection_matches_svd_on_all_paths() {
        // tall (column Gram), wide (row Gram) and large (subspace iteration)
        for &(n, m, k) in &[(60, 12, 3), (15, 40, 4), (900, 850, 5)] {
            let x = random(n, m, (n * m) as u64);
            let got = project_top_k(&x, k).unwrap();
            assert_close(&got, &oracle_projection(&x, k), 1e-7);
        }
    }

    #[test]
    fn spectral_norm_matches_svd() {
        for &(n, m) in &[(30, 10), (10, 30), (700, 620)] {
            let x = random(n, m, 7 + n as u64);
            let oracle = x.to_dmatrix().singular_values().max();
            let got = spectral_norm(&x);
            assert!((got - oracle).abs() <= 1e-8 * oracle, "{got} vs {oracle}");
        }
    }

    #[test]
    fn weighted_projection_uses_weighted_subspace() {
        let x = random(40, 6, 3);
        let w: Vec<f64> = (0..40).map(|i| 1.0 + (i % 5) as f64).collect();
        let xw = x.clone().with_weights(w.clone()).unwrap();
        let scaled = FeatureMatrix::new(
            40,
            6,
            (0..40)
                .flat_map(|i| {
                    let s = w[i].sqrt();
                    x.row(i).iter().map(move |v| v * s).collect::<Vec<_>>()
                })
                .collect(),
        )
        .unwrap();
        let v = top_right_singular_vectors(&xw, 2).unwrap();
        let v_ref = top_right_singular_vectors(&scaled, 2).unwrap();
        let diff = (&v * v.transpose() - &v_ref * v_ref.transpose()).abs().max();
        assert!(diff < 1e-9);
    }

    #[test]
    fn rank_deficient_input_keeps_projection_exact() {
        // two identical rows: rank 1
        let x = FeatureMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        let p = project_top_k(&x, 2).unwrap();
        assert_close(&p, &x.to_dmatrix(), 1e-12);
    }
}
