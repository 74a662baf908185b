//! Collaborative clustering across participants that each own a block of
//! feature columns for the same nodes.
//!
//! * [`Federation::run_basic`] clusters all nodes jointly; every distance is a
//!   secure sum of per-participant partial distances.
//! * [`Federation::run_optimized`] clusters locally first, intersects the
//!   local partitions and clusters one weighted virtual node per nonempty
//!   cell, so the number of secure sums no longer grows with the node count.
//! * [`Federation::run_tree`] applies the optimized protocol pairwise up a
//!   binary tree of participants.
//! * [`Federation::predict`] places a new node with `k` secure sums.
//!
//! Participant `L-1` coordinates: it relays keys, receives masked inputs and
//! broadcasts assignments. Participants only exchange bytes through the
//! [`Network`]; assignments travel in the clear because they are the output.

mod engine;
mod intersections;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::kmeans::{squared_distances, DEFAULT_MAX_ROUNDS, DEFAULT_RESTARTS};
use crate::secagg::{AggregationSession, GroupParams, DEFAULT_MODULUS, DEFAULT_SCALE};
use crate::transport::{Network, NetworkProfile, TrafficLedger};
use crate::{Error, FeatureMatrix, Result};

pub use intersections::{build_intersections, cluster_lists, Cell, IntersectionTable};

/// How partial distances are summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    /// Pairwise-masked fixed-point sums.
    Encrypted,
    /// Plain `f64` sums in participant order; bitwise comparable with the
    /// centralized computation. For testing only.
    Plaintext,
}

#[derive(Debug, Clone)]
pub struct FederationConfig {
    /// Final cluster count `k`.
    pub clusters: usize,
    /// Local cluster count `k̂` of the optimized and tree protocols.
    pub local_clusters: usize,
    pub max_rounds: usize,
    pub seed: u64,
    pub restarts: usize,
    pub mode: AggregationMode,
    pub modulus: u64,
    pub scale: u64,
    pub group: Arc<GroupParams>,
}

impl FederationConfig {
    /// Encrypted aggregation over the 2048-bit group with default `N`, `F`.
    pub fn new(clusters: usize, local_clusters: usize, seed: u64) -> Self {
        Self {
            clusters,
            local_clusters,
            max_rounds: DEFAULT_MAX_ROUNDS,
            seed,
            restarts: DEFAULT_RESTARTS,
            mode: AggregationMode::Encrypted,
            modulus: DEFAULT_MODULUS,
            scale: DEFAULT_SCALE,
            group: GroupParams::modp2048(),
        }
    }

    pub fn with_max_rounds(mut self, rounds: usize) -> Self {
        self.max_rounds = rounds;
        self
    }

    pub fn with_mode(mut self, mode: AggregationMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_group(mut self, group: Arc<GroupParams>) -> Self {
        self.group = group;
        self
    }
}

/// Secure-sum usage of one collaborative clustering phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseAudit {
    pub participants: Vec<usize>,
    /// Rows clustered: nodes for the basic protocol, cells otherwise.
    pub points: usize,
    pub clusters: usize,
    /// Lloyd rounds executed, including the final unchanged one.
    pub rounds: usize,
    pub calls: u64,
}

impl PhaseAudit {
    /// `(rounds + 1) * clusters * points`: one proximity pass plus each round.
    pub fn expected_calls(&self) -> u64 {
        ((self.rounds + 1) * self.clusters * self.points) as u64
    }
}

/// Result of a collaborative run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalClustering {
    pub k: usize,
    pub ids: Vec<u64>,
    /// Final cluster of every node, aligned with `ids`.
    pub assignment: Vec<usize>,
    /// Each participant's columns of the `k` centers.
    pub center_shares: Vec<FeatureMatrix>,
    /// Lloyd rounds of the final phase.
    pub rounds: usize,
    pub converged: bool,
    /// Number of intersection cells at the root, for cell-based protocols.
    pub cells: Option<usize>,
    pub audits: Vec<PhaseAudit>,
    pub ledger: TrafficLedger,
}

impl GlobalClustering {
    pub fn aggregation_calls(&self) -> u64 {
        self.audits.iter().map(|a| a.calls).sum()
    }

    /// Squared distances from every node to the final centers: the securely
    /// summed totals the coordinator learns (`n x k`), and `participant`'s
    /// own partial distances that went into them (`n x k`).
    pub fn distance_samples(
        &self,
        slices: &[FeatureMatrix],
        participant: usize,
    ) -> Result<(FeatureMatrix, FeatureMatrix)> {
        if slices.len() != self.center_shares.len() || participant >= slices.len() {
            return Err(Error::InvalidArgument(format!(
                "participant {participant} of {} slices for {} center shares",
                slices.len(),
                self.center_shares.len()
            )));
        }
        let n = slices[0].rows();
        let partials: Vec<Vec<f64>> = slices
            .iter()
            .zip(&self.center_shares)
            .map(|(x, c)| {
                if x.cols() != c.cols() || x.rows() != n {
                    return Err(Error::DimensionMismatch("slice does not match its center share".into()));
                }
                Ok(squared_distances(x, c, &[0..x.cols()]))
            })
            .collect::<Result<_>>()?;
        let mut total = vec![0.0; n * self.k];
        for p in &partials {
            total.iter_mut().zip(p).for_each(|(t, v)| *t += v);
        }
        Ok((
            FeatureMatrix::new(n, self.k, total)?,
            FeatureMatrix::new(n, self.k, partials[participant].clone())?,
        ))
    }
}

/// Participants, their network and their aggregation keys.
pub struct Federation {
    slices: Vec<FeatureMatrix>,
    cfg: FederationConfig,
    net: Network,
    sessions: BTreeMap<Vec<usize>, Vec<AggregationSession>>,
}

impl std::fmt::Debug for Federation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Federation")
            .field("participants", &self.slices.len())
            .field("cfg", &self.cfg)
            .field("net", &self.net)
            .finish_non_exhaustive()
    }
}

impl Federation {
    /// `slices[l]` is participant `l`'s (already filtered) feature block.
    pub fn new(slices: Vec<FeatureMatrix>, cfg: FederationConfig, net: Network) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidArgument("no participants".into()))?;
        if slices.len() < 2 {
            return Err(Error::InvalidArgument(
                "collaborative clustering needs at least 2 participants".into(),
            ));
        }
        if let Some((l, _)) = slices
            .iter()
            .enumerate()
            .find(|(_, s)| s.rows() != first.rows() || s.ids() != first.ids())
        {
            return Err(Error::InvalidArgument(format!(
                "participant {l} holds a different node set"
            )));
        }
        if slices.iter().any(|s| s.weights().is_some()) {
            return Err(Error::InvalidArgument("participant data must be unweighted".into()));
        }
        if net.endpoints() != slices.len() {
            return Err(Error::InvalidArgument(format!(
                "network has {} endpoints for {} participants",
                net.endpoints(),
                slices.len()
            )));
        }
        if cfg.clusters == 0 || cfg.local_clusters == 0 {
            return Err(Error::InvalidArgument("cluster counts must be positive".into()));
        }
        Ok(Self {
            slices,
            cfg,
            net,
            sessions: BTreeMap::new(),
        })
    }

    /// Simulated LAN network sized for `slices`.
    pub fn simulated(slices: Vec<FeatureMatrix>, cfg: FederationConfig) -> Result<Self> {
        let net = Network::simulated(slices.len(), NetworkProfile::lan());
        Self::new(slices, cfg, net)
    }

    pub fn participants(&self) -> usize {
        self.slices.len()
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn ids(&self) -> &[u64] {
        self.slices[0].ids()
    }
}

/// Basic protocol over a simulated LAN.
pub fn run_basic(participants: &[FeatureMatrix], cfg: &FederationConfig) -> Result<GlobalClustering> {
    Federation::simulated(participants.to_vec(), cfg.clone())?.run_basic()
}

/// Optimized protocol over a simulated LAN.
pub fn run_optimized(participants: &[FeatureMatrix], cfg: &FederationConfig) -> Result<GlobalClustering> {
    Federation::simulated(participants.to_vec(), cfg.clone())?.run_optimized()
}

/// Tree composition over a simulated LAN.
pub fn run_tree(participants: &[FeatureMatrix], cfg: &FederationConfig) -> Result<GlobalClustering> {
    Federation::simulated(participants.to_vec(), cfg.clone())?.run_tree()
}
