//! Checks of the separation and proximity conditions behind the recovery
//! guarantees, evaluated against known target clusterings.

use serde::{Deserialize, Serialize};

use crate::parallel;
use crate::{Error, FeatureMatrix, Result};

pub use crate::linalg::spectral_norm;

/// Ground-truth clusters of one matrix: member rows, means and sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
    /// `k x m` cluster means.
    pub centers: FeatureMatrix,
}

impl Targets {
    /// Labels must cover `0..k` with every cluster nonempty.
    pub fn new(x: &FeatureMatrix, labels: &[usize]) -> Result<Self> {
        if labels.len() != x.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                x.rows()
            )));
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; k];
        let mut sums = FeatureMatrix::zeros(k, x.cols());
        for (i, &q) in labels.iter().enumerate() {
            sizes[q] += 1;
            sums.row_mut(q).iter_mut().zip(x.row(i)).for_each(|(s, v)| *s += v);
        }
        if let Some(q) = sizes.iter().position(|s| *s == 0) {
            return Err(Error::EmptyCluster(q));
        }
        for (q, &s) in sizes.iter().enumerate() {
            sums.row_mut(q).iter_mut().for_each(|v| *v /= s as f64);
        }
        Ok(Self {
            labels: labels.to_vec(),
            sizes,
            centers: sums,
        })
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    /// Matrix whose row `i` is the mean of row `i`'s cluster.
    pub fn center_matrix(&self) -> FeatureMatrix {
        let m = self.centers.cols();
        let data = self
            .labels
            .iter()
            .flat_map(|q| self.centers.row(*q).iter().copied())
            .collect();
        FeatureMatrix::new(self.labels.len(), m, data).expect("shape follows labels")
    }

    /// Spectral norm of `x` minus its center matrix.
    pub fn residual_norm(&self, x: &FeatureMatrix) -> Result<f64> {
        let c = self.center_matrix();
        if c.cols() != x.cols() {
            return Err(Error::DimensionMismatch("targets built from another matrix".into()));
        }
        let diff = x.data().iter().zip(c.data()).map(|(a, b)| a - b).collect();
        Ok(spectral_norm(&FeatureMatrix::new(x.rows(), x.cols(), diff)?))
    }
}

/// `Δ_q = sqrt(k) * norm / sqrt(n_q)` for each cluster, where `k` is the
/// number of clusters.
pub fn delta(sizes: &[usize], residual_norm: f64) -> Result<Vec<f64>> {
    let k = sizes.len() as f64;
    sizes
        .iter()
        .enumerate()
        .map(|(q, &n)| {
            if n == 0 {
                Err(Error::EmptyCluster(q))
            } else {
                Ok(k.sqrt() * residual_norm / (n as f64).sqrt())
            }
        })
        .collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    /// `pass[p][q]`; the diagonal is `true`.
    pub pass: Vec<Vec<bool>>,
    pub passed: bool,
    /// Largest `c` the centers satisfy, `min ||μ_p - μ_q|| / (Δ_p + Δ_q)`;
    /// infinite when every Δ is zero and centers are distinct.
    pub achieved_c: f64,
}

/// Tests `||μ_p - μ_q|| >= c (Δ_p + Δ_q)` on every unordered pair.
pub fn check_center_separation(centers: &FeatureMatrix, deltas: &[f64], c: f64) -> Result<SeparationReport> {
    let k = centers.rows();
    if deltas.len() != k {
        return Err(Error::DimensionMismatch(format!("{} deltas for {k} centers", deltas.len())));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidArgument("separation constant must be positive".into()));
    }
    let mut pass = vec![vec![true; k]; k];
    let mut achieved = f64::INFINITY;
    for p in 0..k {
        for q in p + 1..k {
            let gap = distance(centers.row(p), centers.row(q));
            let spread = deltas[p] + deltas[q];
            let ok = gap >= c * spread;
            pass[p][q] = ok;
            pass[q][p] = ok;
            let ratio = if spread > 0.0 {
                gap / spread
            } else if gap > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            achieved = achieved.min(ratio);
        }
    }
    Ok(SeparationReport {
        passed: pass.iter().flatten().all(|b| *b),
        pass,
        achieved_c: achieved,
    })
}

/// How much closer the projection of `x` onto the line through `own` and
/// `other` lies to `own` than to `other`. Zero when the centers coincide.
pub fn margin(x: &[f64], own: &[f64], other: &[f64]) -> f64 {
    let d = distance(own, other);
    if d == 0.0 {
        return 0.0;
    }
    let t: f64 = x
        .iter()
        .zip(own)
        .zip(other)
        .map(|((xi, a), b)| (xi - a) * (b - a))
        .sum::<f64>()
        / d;
    (d - t).abs() - t.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    /// Centralized proximity condition on the whole matrix.
    Def1,
    /// Proximity condition of each party's slice against its local targets.
    Local,
    /// Restricted condition allowing local 1-bad nodes.
    Def2a,
    /// Restricted condition when every node is local 1-good.
    Def2b,
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "def1" => Ok(Self::Def1),
            "local" => Ok(Self::Local),
            "def2a" => Ok(Self::Def2a),
            "def2b" => Ok(Self::Def2b),
            other => Err(Error::InvalidArgument(format!("unknown condition {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionParams {
    /// Separation constant.
    pub c: f64,
    /// Stand-in for the unspecified `O(1/c)` factor of the restricted
    /// condition.
    pub kappa: f64,
}

impl ConditionParams {
    pub fn new(c: f64) -> Self {
        Self { c, kappa: 1.0 / c }
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }
}

/// Per-node outcome of one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub condition: Condition,
    /// `good[i]` for global conditions. For [`Condition::Local`] a node is
    /// good only if it is local 1-good at every party.
    pub good: Vec<bool>,
    pub bad_count: usize,
    /// Smallest `margin - threshold` over competing clusters, per node.
    pub slack: Vec<f64>,
    /// Local 1-bad fraction per party; only filled for [`Condition::Local`].
    pub epsilon: Vec<f64>,
}

/// A vertically split matrix with its global targets and per-party local
/// targets.
#[derive(Debug, Clone)]
pub struct Instance {
    slices: Vec<FeatureMatrix>,
    x: FeatureMatrix,
    global: Targets,
    local: Vec<Targets>,
    global_norm: f64,
    /// `||X - Ĉ||` with `Ĉ` the concatenated local center matrices.
    collaborative_norm: f64,
    local_norms: Vec<f64>,
}

impl Instance {
    /// `local_labels` defaults to the global labels at every party.
    pub fn new(slices: Vec<FeatureMatrix>, labels: &[usize], local_labels: Option<Vec<Vec<usize>>>) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::InvalidArgument("no parties".into()));
        }
        let plain: Vec<FeatureMatrix> = slices
            .iter()
            .map(|s| FeatureMatrix::new(s.rows(), s.cols(), s.data().to_vec()))
            .collect::<Result<_>>()?;
        let x = FeatureMatrix::hconcat(&plain)?;
        let local_labels = local_labels.unwrap_or_else(|| vec![labels.to_vec(); slices.len()]);
        if local_labels.len() != slices.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} local labelings for {} parties",
                local_labels.len(),
                slices.len()
            )));
        }
        let global = Targets::new(&x, labels)?;
        let local: Vec<Targets> = slices
            .iter()
            .zip(&local_labels)
            .map(|(s, l)| Targets::new(s, l))
            .collect::<Result<_>>()?;
        let c_hat = FeatureMatrix::hconcat(&local.iter().map(Targets::center_matrix).collect::<Vec<_>>())?;
        let diff = x.data().iter().zip(c_hat.data()).map(|(a, b)| a - b).collect();
        let collaborative_norm = spectral_norm(&FeatureMatrix::new(x.rows(), x.cols(), diff)?);
        let local_norms = slices
            .iter()
            .zip(&local)
            .map(|(s, t)| t.residual_norm(s))
            .collect::<Result<_>>()?;
        Ok(Self {
            global_norm: global.residual_norm(&x)?,
            slices,
            x,
            global,
            local,
            collaborative_norm,
            local_norms,
        })
    }

    pub fn parties(&self) -> usize {
        self.slices.len()
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn global_targets(&self) -> &Targets {
        &self.global
    }

    pub fn local_targets(&self) -> &[Targets] {
        &self.local
    }

    /// `sqrt(|T_q| / min_l |T_q^l|)`, where `T_q^l` is the local cluster at
    /// party `l` holding the most members of `T_q` (lowest index on ties).
    pub fn m0(&self, q: usize) -> f64 {
        let members: Vec<usize> = (0..self.n()).filter(|i| self.global.labels[*i] == q).collect();
        let smallest = self
            .local
            .iter()
            .map(|t| {
                let mut counts = vec![0usize; t.k()];
                members.iter().for_each(|i| counts[t.labels[*i]] += 1);
                let best = (0..t.k()).max_by_key(|r| (counts[*r], std::cmp::Reverse(*r))).unwrap_or(0);
                t.sizes[best]
            })
            .min()
            .unwrap_or(1);
        (members.len() as f64 / smallest as f64).sqrt()
    }

    /// Margin a node of global cluster `q` needs against cluster `p`.
    pub fn threshold(&self, condition: Condition, p: usize, q: usize, params: &ConditionParams) -> f64 {
        let inv = |n: usize| 1.0 / (n as f64).sqrt();
        let (np, nq) = (self.global.sizes[p], self.global.sizes[q]);
        let base = (inv(np) + inv(nq)) * self.global_norm;
        match condition {
            Condition::Def1 | Condition::Local => base,
            Condition::Def2a => {
                let l = self.parties() as f64;
                base + 2.0 * (1.0 + params.kappa * l.sqrt() * self.m0(q)) * inv(nq) * self.collaborative_norm
            }
            Condition::Def2b => base + 2.0 * inv(nq) * self.collaborative_norm,
        }
    }

    pub fn check(&self, condition: Condition, params: &ConditionParams) -> ConditionCheck {
        if condition == Condition::Local {
            return self.check_local();
        }
        let k = self.global.k();
        let thresholds: Vec<Vec<f64>> = (0..k)
            .map(|q| (0..k).map(|p| if p == q { 0.0 } else { self.threshold(condition, p, q, params) }).collect())
            .collect();
        let slack = parallel::map_range(self.n(), |i| {
            slack_of(&self.x, &self.global, i, |p, q| thresholds[q][p])
        });
        finish(condition, slack, Vec::new())
    }

    fn check_local(&self) -> ConditionCheck {
        let n = self.n();
        let mut slack = vec![f64::INFINITY; n];
        let mut epsilon = Vec::with_capacity(self.parties());
        for ((s, t), norm) in self.slices.iter().zip(&self.local).zip(&self.local_norms) {
            let inv: Vec<f64> = t.sizes.iter().map(|n| 1.0 / (*n as f64).sqrt()).collect();
            let local = parallel::map_range(n, |i| slack_of(s, t, i, |p, q| (inv[p] + inv[q]) * norm));
            epsilon.push(local.iter().filter(|v| **v < 0.0).count() as f64 / n as f64);
            slack.iter_mut().zip(&local).for_each(|(a, b)| *a = a.min(*b));
        }
        finish(Condition::Local, slack, epsilon)
    }

    pub fn report(&self, params: &ConditionParams) -> Result<ProximityReport> {
        let global_delta = delta(&self.global.sizes, self.global_norm)?;
        let global_sep = check_center_separation(&self.global.centers, &global_delta, params.c)?;
        let mut local_delta = Vec::new();
        let mut local_sep = Vec::new();
        for (t, norm) in self.local.iter().zip(&self.local_norms) {
            let d = delta(&t.sizes, *norm)?;
            local_sep.push(check_center_separation(&t.centers, &d, params.c)?);
            local_delta.push(d);
        }
        let checks: Vec<ConditionCheck> = [Condition::Def1, Condition::Local, Condition::Def2a, Condition::Def2b]
            .into_iter()
            .map(|c| self.check(c, params))
            .collect();
        let measured_c = local_sep.iter().map(|s| s.achieved_c).fold(global_sep.achieved_c, f64::min);
        Ok(ProximityReport {
            n: self.n(),
            parties: self.parties(),
            c: params.c,
            kappa: params.kappa,
            global_norm: self.global_norm,
            collaborative_norm: self.collaborative_norm,
            local_norms: self.local_norms.clone(),
            global_delta,
            local_delta,
            m0: (0..self.global.k()).map(|q| self.m0(q)).collect(),
            global_separation: global_sep,
            local_separation: local_sep,
            measured_c,
            epsilon: checks[1].epsilon.clone(),
            counts: checks
                .iter()
                .map(|ch| ConditionCount {
                    condition: ch.condition,
                    good: ch.good.len() - ch.bad_count,
                    bad: ch.bad_count,
                })
                .collect(),
            checks,
        })
    }
}

fn slack_of(x: &FeatureMatrix, t: &Targets, i: usize, threshold: impl Fn(usize, usize) -> f64) -> f64 {
    let q = t.labels[i];
    (0..t.k())
        .filter(|p| *p != q)
        .map(|p| margin(x.row(i), t.centers.row(q), t.centers.row(p)) - threshold(p, q))
        .fold(f64::INFINITY, f64::min)
}

fn finish(condition: Condition, slack: Vec<f64>, epsilon: Vec<f64>) -> ConditionCheck {
    let good: Vec<bool> = slack.iter().map(|s| *s >= 0.0).collect();
    ConditionCheck {
        condition,
        bad_count: good.iter().filter(|g| !**g).count(),
        good,
        slack,
        epsilon,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCount {
    pub condition: Condition,
    pub good: usize,
    pub bad: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityReport {
    pub n: usize,
    pub parties: usize,
    pub c: f64,
    pub kappa: f64,
    /// `||X - C||`.
    pub global_norm: f64,
    /// `||X - Ĉ||`.
    pub collaborative_norm: f64,
    /// `||X^l - Ĉ^l||` per party.
    pub local_norms: Vec<f64>,
    pub global_delta: Vec<f64>,
    pub local_delta: Vec<Vec<f64>>,
    pub m0: Vec<f64>,
    pub global_separation: SeparationReport,
    pub local_separation: Vec<SeparationReport>,
    /// Smallest achieved separation constant, global and local.
    pub measured_c: f64,
    /// Local 1-bad fraction per party.
    pub epsilon: Vec<f64>,
    pub counts: Vec<ConditionCount>,
    pub checks: Vec<ConditionCheck>,
}

impl ProximityReport {
    /// Pretty JSON; non-finite values (an unbounded separation constant)
    /// are written as `null`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn check(&self, condition: Condition) -> &ConditionCheck {
        self.checks
            .iter()
            .find(|c| c.condition == condition)
            .expect("every condition is checked")
    }
}

/// `(L * max ε + κ₂ L c^-4) n`: the misclassification budget of the
/// collaborative recovery guarantee, with `κ₂` standing for its unspecified
/// constant.
pub fn theorem1_budget(epsilon: &[f64], parties: usize, c: f64, n: usize, kappa2: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument("separation constant must be positive".into()));
    }
    let l = parties as f64;
    let eps = epsilon.iter().copied().fold(0.0, f64::max);
    Ok((l * eps + kappa2 * l * c.powi(-4)) * n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{planted_mixture, vertical_split, PlantedConfig, SplitStrategy};
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn svd_norm(m: &DMatrix<f64>) -> f64 {
        m.clone().svd(false, false).singular_values.max()
    }

    #[test]
    fn spectral_norm_examples() {
        let id = FeatureMatrix::from_dmatrix(&DMatrix::identity(3, 3));
        assert!((spectral_norm(&id) - 1.0).abs() < 1e-12);
        assert_eq!(spectral_norm(&FeatureMatrix::zeros(4, 2)), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = DMatrix::from_fn(12, 7, |_, _| rng.gen_range(-1.0..1.0));
        let ours = spectral_norm(&FeatureMatrix::from_dmatrix(&m));
        assert!((ours - svd_norm(&m)).abs() <= 1e-8 * svd_norm(&m));
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta(&[16; 4], 2.0).unwrap(), vec![1.0; 4]);
        assert_eq!(delta(&[3, 5], 0.0).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(delta(&[3, 0], 1.0), Err(Error::EmptyCluster(1))));
    }

    #[test]
    fn planted_deltas_match_recomputation() {
        let d = planted_mixture(&PlantedConfig::new(90, 5, 3, 20.0, 1.0, 2)).unwrap();
        let t = Targets::new(&d.features, &d.labels).unwrap();
        let x = d.features.to_dmatrix();
        // means and residual from scratch
        let mut c = DMatrix::zeros(90, 5);
        for q in 0..3 {
            let rows: Vec<usize> = (0..90).filter(|i| d.labels[*i] == q).collect();
            let mean = rows.iter().map(|i| x.row(*i).into_owned()).fold(nalgebra::RowDVector::zeros(5), |a, r| a + r)
                / rows.len() as f64;
            rows.iter().for_each(|i| c.set_row(*i, &mean));
        }
        let norm = svd_norm(&(&x - &c));
        let ours = delta(&t.sizes, t.residual_norm(&d.features).unwrap()).unwrap();
        for q in 0..3 {
            let expected = 3f64.sqrt() * norm / 30f64.sqrt();
            assert!((ours[q] - expected).abs() < 1e-9 * expected);
        }
    }

    #[test]
    fn separation_examples() {
        let same = FeatureMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let r = check_center_separation(&same, &[0.5, 0.5], 1.0).unwrap();
        assert!(!r.passed && !r.pass[0][1] && r.pass[0][0]);
        let apart = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let r = check_center_separation(&apart, &[0.0, 0.0], 1e12).unwrap();
        assert!(r.passed);
        assert_eq!(r.achieved_c, f64::INFINITY);
        assert!(check_center_separation(&apart, &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn wide_planted_mixture_separates_at_100() {
        // center spacing 10 sigma sqrt(k) * (sqrt(n) + sqrt(m)) comfortably exceeds 100 (Δ_p + Δ_q)
        let (n, m, k) = (300, 4, 3);
        let sep = 10.0 * (k as f64).sqrt() * 2.0 * 100.0 * (1.0 + (m as f64 / n as f64).sqrt()) * (k as f64).sqrt();
        let d = planted_mixture(&PlantedConfig::new(n, m, k, sep, 1.0, 7)).unwrap();
        let t = Targets::new(&d.features, &d.labels).unwrap();
        let deltas = delta(&t.sizes, t.residual_norm(&d.features).unwrap()).unwrap();
        let r = check_center_separation(&t.centers, &deltas, 100.0).unwrap();
        assert!(r.passed, "achieved c = {}", r.achieved_c);
        // independent check of one pair
        let gap = distance(t.centers.row(0), t.centers.row(1));
        assert!(gap >= 100.0 * (deltas[0] + deltas[1]));
    }

    #[test]
    fn margin_examples() {
        let (a, b) = ([0.0, 0.0], [4.0, 0.0]);
        assert_eq!(margin(&a, &a, &b), 4.0);
        assert_eq!(margin(&[2.0, 3.0], &a, &b), 0.0);
        assert_eq!(margin(&[5.0, 0.0], &a, &b), -4.0);
        assert_eq!(margin(&[1.0, 1.0], &a, &a), 0.0);
    }

    fn one_dim_instance() -> (Vec<FeatureMatrix>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let noise = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let x: Vec<f64> = labels
            .iter()
            .map(|q| 100.0 * *q as f64 + rand_distr::Distribution::sample(&noise, &mut rng))
            .collect();
        (vec![FeatureMatrix::new(40, 1, x).unwrap()], labels)
    }

    #[test]
    fn well_separated_line_is_def2b_good() {
        let (slices, labels) = one_dim_instance();
        let inst = Instance::new(slices.clone(), &labels, None).unwrap();
        let check = inst.check(Condition::Def2b, &ConditionParams::new(100.0));
        assert_eq!(check.bad_count, 0);
        // brute force in one dimension: |x - μ_p| - |x - μ_q| against the threshold
        let x = slices[0].data();
        let mu = |q: usize| {
            let v: Vec<f64> = (0..40).filter(|i| labels[*i] == q).map(|i| x[i]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let (m0, m1) = (mu(0), mu(1));
        let resid = x.iter().zip(&labels).map(|(v, q)| (v - if *q == 0 { m0 } else { m1 }).powi(2)).sum::<f64>().sqrt();
        let threshold = 2.0 / 20f64.sqrt() * resid + 2.0 / 20f64.sqrt() * resid;
        for (i, q) in labels.iter().enumerate() {
            let (own, other) = if *q == 0 { (m0, m1) } else { (m1, m0) };
            let brute = (x[i] - other).abs() - (x[i] - own).abs();
            assert!(brute >= threshold);
            assert!((check.slack[i] - (brute - threshold)).abs() < 1e-9);
        }
    }

    #[test]
    fn midpoint_node_is_bad_everywhere() {
        let mut rows = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        rows.push(vec![5.05]);
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let labels = [0, 0, 1, 1, 0];
        let inst = Instance::new(vec![x], &labels, None).unwrap();
        let params = ConditionParams::new(100.0);
        for cond in [Condition::Def1, Condition::Local, Condition::Def2a, Condition::Def2b] {
            assert!(!inst.check(cond, &params).good[4], "{cond:?}");
        }
        assert!(inst.check(Condition::Def1, &params).good[0]);
    }

    #[test]
    fn report_is_consistent() {
        let d = planted_mixture(&PlantedConfig::new(120, 6, 3, 400.0, 1.0, 5)).unwrap();
        let split = vertical_split(&d.features, 3, 0, SplitStrategy::Contiguous).unwrap();
        let inst = Instance::new(split.slices, &d.labels, None).unwrap();
        let params = ConditionParams::new(100.0);
        let r = inst.report(&params).unwrap();
        let local = inst.check(Condition::Local, &params);
        assert_eq!(r.epsilon, local.epsilon);
        assert_eq!(r.epsilon.len(), 3);
        for (l, eps) in r.epsilon.iter().enumerate() {
            let t = &inst.local_targets()[l];
            assert_eq!(t.k(), 3);
            assert!(*eps >= 0.0 && *eps <= 1.0);
        }
        assert_eq!(r.m0, vec![1.0; 3]);
        assert!(r.collaborative_norm <= r.global_norm + 1e-9);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["counts"].as_array().unwrap().len(), 4);
        let budget = theorem1_budget(&r.epsilon, 3, r.measured_c, 120, 1.0).unwrap();
        assert!(budget >= 0.0);
    }

    #[test]
    fn thresholds_are_ordered() {
        let d = planted_mixture(&PlantedConfig::new(60, 4, 3, 6.0, 1.0, 8)).unwrap();
        let split = vertical_split(&d.features, 2, 0, SplitStrategy::Contiguous).unwrap();
        let inst = Instance::new(split.slices, &d.labels, None).unwrap();
        let params = ConditionParams::new(100.0);
        for q in 0..3 {
            for p in (0..3).filter(|p| *p != q) {
                let t1 = inst.threshold(Condition::Def1, p, q, &params);
                let ta = inst.threshold(Condition::Def2a, p, q, &params);
                let tb = inst.threshold(Condition::Def2b, p, q, &params);
                assert!(ta >= tb && tb >= t1 && t1 >= 0.0);
            }
        }
    }

    #[test]
    fn m0_uses_smallest_matching_local_cluster() {
        let x = FeatureMatrix::zeros(6, 2);
        let slices = vec![x.column_slice(0..1).unwrap(), x.column_slice(1..2).unwrap()];
        // global cluster 0 = {0,1,2,3}; party 1 keeps only {0,1} together
        let labels = [0, 0, 0, 0, 1, 1];
        let local = vec![labels.to_vec(), vec![0, 0, 2, 2, 1, 1]];
        let inst = Instance::new(slices, &labels, Some(local)).unwrap();
        assert!((inst.m0(0) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(inst.m0(1), 1.0);
    }

    #[test]
    fn budget_arithmetic() {
        let b = theorem1_budget(&[0.01, 0.005], 2, 100.0, 1000, 1.0).unwrap();
        assert!((b - 20.0).abs() < 1e-3);
        assert_eq!(theorem1_budget(&[0.0, 0.0], 2, 1e6, 1000, 0.0).unwrap(), 0.0);
        assert!(theorem1_budget(&[0.0], 1, 0.0, 10, 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn margins_ignore_rotation_and_translation(seed: u64, shift in -50.0f64..50.0) {
            let d = planted_mixture(&PlantedConfig::new(30, 3, 3, 8.0, 1.0, seed)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let q = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
            let moved = d.features.to_dmatrix() * q.transpose();
            let moved = FeatureMatrix::from_dmatrix(&moved.map(|v| v + shift));
            let params = ConditionParams::new(100.0);
            let a = Instance::new(vec![d.features.clone()], &d.labels, None).unwrap();
            let b = Instance::new(vec![moved], &d.labels, None).unwrap();
            for cond in [Condition::Def1, Condition::Def2a, Condition::Def2b] {
                let (sa, sb) = (a.check(cond, &params).slack, b.check(cond, &params).slack);
                for (x, y) in sa.iter().zip(&sb) {
                    prop_assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
                }
            }
        }
    }
}
