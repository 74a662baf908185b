//! Message-level implementation of the collaborative protocols.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{
    build_intersections, cluster_lists, AggregationMode, Federation, GlobalClustering,
    IntersectionTable, PhaseAudit,
};
use crate::kmeans::{
    cluster_protocol1_with, nearest, partial_distance, proximity_choice, seed_block,
    squared_distances, update_centers, Protocol1Config, UNASSIGNED,
};
use crate::secagg::{
    public_key_to_bytes, AggregationParams, AggregationSession, MaskedVector, ParticipantKeys,
};
use crate::wire;
use crate::{Error, FeatureMatrix, Result};

/// Outcome of clustering one set of (possibly virtual) rows.
struct Joint {
    assignment: Vec<usize>,
    centers: Vec<FeatureMatrix>,
    rounds: usize,
    converged: bool,
    calls: u64,
}

/// A clustering of all nodes held by a subset of participants.
struct Subtree {
    members: Vec<usize>,
    k: usize,
    /// Cluster of each node row.
    assignment: Vec<usize>,
    /// Center columns per member participant.
    shares: BTreeMap<usize, FeatureMatrix>,
    cells: Option<usize>,
    rounds: usize,
    converged: bool,
}

impl Subtree {
    fn coordinator(&self) -> usize {
        *self.members.last().expect("nonempty subtree")
    }
}

impl Federation {
    pub fn run_basic(&mut self) -> Result<GlobalClustering> {
        self.net.reset_ledger();
        let members: Vec<usize> = (0..self.participants()).collect();
        let data = self.slices.clone();
        let joint = self.joint_kmeans(&members, data, self.cfg.clusters)?;
        let audit = PhaseAudit {
            participants: members,
            points: self.slices[0].rows(),
            clusters: self.cfg.clusters,
            rounds: joint.rounds,
            calls: joint.calls,
        };
        Ok(GlobalClustering {
            k: self.cfg.clusters,
            ids: self.ids().to_vec(),
            assignment: joint.assignment,
            center_shares: joint.centers,
            rounds: joint.rounds,
            converged: joint.converged,
            cells: None,
            audits: vec![audit],
            ledger: self.net.ledger_report(),
        })
    }

    pub fn run_optimized(&mut self) -> Result<GlobalClustering> {
        self.net.reset_ledger();
        self.warn_small_local_k();
        let leaves = (0..self.participants())
            .map(|p| self.leaf(p))
            .collect::<Result<Vec<_>>>()?;
        let mut audits = Vec::new();
        let root = self.combine(leaves, self.cfg.clusters, &mut audits)?;
        Ok(self.finish(root, audits))
    }

    pub fn run_tree(&mut self) -> Result<GlobalClustering> {
        self.net.reset_ledger();
        self.warn_small_local_k();
        let mut level = (0..self.participants())
            .map(|p| self.leaf(p))
            .collect::<Result<Vec<_>>>()?;
        let mut audits = Vec::new();
        while level.len() > 1 {
            let k_out = if level.len() == 2 {
                self.cfg.clusters
            } else {
                self.cfg.local_clusters
            };
            let mut next = Vec::with_capacity(level.len().div_ceil(2));
            let mut it = level.into_iter();
            while let Some(left) = it.next() {
                match it.next() {
                    Some(right) => next.push(self.combine(vec![left, right], k_out, &mut audits)?),
                    None => next.push(left),
                }
            }
            level = next;
        }
        let root = level.pop().expect("one root");
        Ok(self.finish(root, audits))
    }

    /// Assigns a new node, given each participant's feature block of it, to
    /// the nearest center of `clustering` using `k` secure sums.
    pub fn predict(&mut self, node: &[Vec<f64>], clustering: &GlobalClustering) -> Result<usize> {
        let l = self.participants();
        if node.len() != l {
            return Err(Error::InvalidArgument(format!(
                "{} feature blocks for {l} participants",
                node.len()
            )));
        }
        for (p, (block, share)) in node.iter().zip(&clustering.center_shares).enumerate() {
            if block.len() != share.cols() {
                return Err(Error::DimensionMismatch(format!(
                    "participant {p} supplied {} features, expected {}",
                    block.len(),
                    share.cols()
                )));
            }
        }
        self.net.set_phase("predict");
        let members: Vec<usize> = (0..l).collect();
        let partials = node
            .iter()
            .zip(&clustering.center_shares)
            .map(|(block, share)| {
                (0..share.rows())
                    .map(|r| partial_distance(block, share.row(r), 0..block.len()))
                    .collect()
            })
            .collect();
        let d = self.secure_sum(&members, partials)?;
        Ok(nearest(&d))
    }

    fn warn_small_local_k(&self) {
        if self.cfg.local_clusters < self.cfg.clusters {
            log::warn!(
                "local cluster count {} is below the final cluster count {}",
                self.cfg.local_clusters,
                self.cfg.clusters
            );
        }
    }

    fn finish(&self, root: Subtree, audits: Vec<PhaseAudit>) -> GlobalClustering {
        GlobalClustering {
            k: root.k,
            ids: self.ids().to_vec(),
            assignment: root.assignment,
            center_shares: root.shares.into_values().collect(),
            rounds: root.rounds,
            converged: root.converged,
            cells: root.cells,
            audits,
            ledger: self.net.ledger_report(),
        }
    }

    fn protocol1_config(&self, clusters: usize) -> Protocol1Config {
        let mut c = Protocol1Config::new(clusters, self.cfg.max_rounds, self.cfg.seed);
        c.restarts = self.cfg.restarts;
        c
    }

    /// A participant clustering its own block into `k̂` clusters.
    fn leaf(&mut self, p: usize) -> Result<Subtree> {
        self.net.set_phase("local");
        let part = cluster_protocol1_with(&self.slices[p], &self.protocol1_config(self.cfg.local_clusters))?;
        Ok(Subtree {
            members: vec![p],
            k: part.k,
            assignment: part.assignment,
            shares: BTreeMap::from([(p, part.centers)]),
            cells: None,
            rounds: part.rounds,
            converged: part.converged,
        })
    }

    /// Intersects the children's partitions and clusters the resulting
    /// weighted virtual nodes into `k_out` clusters.
    fn combine(&mut self, children: Vec<Subtree>, k_out: usize, audits: &mut Vec<PhaseAudit>) -> Result<Subtree> {
        let mut members: Vec<usize> = children.iter().flat_map(|c| c.members.clone()).collect();
        members.sort_unstable();
        let coordinator = *members.last().expect("children are nonempty");
        let ids = self.ids().to_vec();

        // Child coordinators report their clusters' member ids.
        self.net.set_phase("intersection");
        let mut lists = Vec::with_capacity(children.len());
        for child in &children {
            let mine = cluster_lists(&child.assignment, &ids, child.k);
            if child.coordinator() == coordinator {
                lists.push(mine);
            } else {
                self.net.send(child.coordinator(), coordinator, wire::encode_clusters(&mine))?;
                let bytes = self.net.recv(coordinator, child.coordinator())?;
                lists.push(wire::decode_clusters(&bytes)?);
            }
        }
        let table = build_intersections(&lists)?;
        let encoded = wire::encode_cells(&table);
        let mut received: BTreeMap<usize, IntersectionTable> = BTreeMap::new();
        for &m in &members {
            if m == coordinator {
                received.insert(m, table.clone());
            } else {
                self.net.send(coordinator, m, encoded.clone())?;
                received.insert(m, wire::decode_cells(&self.net.recv(m, coordinator)?)?);
            }
        }
        if table.len() < k_out {
            return Err(Error::Protocol(format!(
                "{} nonempty cells cannot form {k_out} clusters",
                table.len()
            )));
        }

        // Each member turns its own child's centers into virtual nodes.
        let mut source_of = BTreeMap::new();
        for (s, child) in children.iter().enumerate() {
            for &m in &child.members {
                source_of.insert(m, s);
            }
        }
        let mut data = Vec::with_capacity(members.len());
        for &m in &members {
            let s = source_of[&m];
            let view = &received[&m];
            let share = &children[s].shares[&m];
            let mut rows = Vec::with_capacity(view.len() * share.cols());
            for cell in view.cells() {
                rows.extend_from_slice(share.row(cell.local_clusters[s]));
            }
            let y = FeatureMatrix::new(view.len(), share.cols(), rows)?.with_weights(view.weights())?;
            data.push(y);
        }
        let joint = self.joint_kmeans(&members, data, k_out)?;
        audits.push(PhaseAudit {
            participants: members.clone(),
            points: table.len(),
            clusters: k_out,
            rounds: joint.rounds,
            calls: joint.calls,
        });

        let cell_of = table.cell_of();
        let assignment = ids.iter().map(|id| joint.assignment[cell_of[id]]).collect();
        Ok(Subtree {
            shares: members.iter().copied().zip(joint.centers).collect(),
            members,
            k: k_out,
            assignment,
            cells: Some(table.len()),
            rounds: joint.rounds,
            converged: joint.converged,
        })
    }

    /// Seeding, one proximity pass and Lloyd rounds over rows whose columns
    /// are split among `members`; `data[i]` belongs to `members[i]`.
    fn joint_kmeans(&mut self, members: &[usize], data: Vec<FeatureMatrix>, k: usize) -> Result<Joint> {
        let rows = data[0].rows();
        if k > rows {
            return Err(Error::InvalidArgument(format!("cannot form {k} clusters from {rows} rows")));
        }
        let pcfg = self.protocol1_config(k);

        self.net.set_phase("init");
        let mut projected = Vec::with_capacity(members.len());
        let mut centers = Vec::with_capacity(members.len());
        for x in &data {
            let (p, c) = seed_block(x, k, &pcfg)?;
            projected.push(p);
            centers.push(c);
        }

        self.net.set_phase("proximity");
        let partials = projected
            .iter()
            .zip(&centers)
            .map(|(p, c)| squared_distances(p, c, &[0..p.cols()]))
            .collect();
        let d = self.secure_sum(members, partials)?;
        let first: Vec<usize> = d
            .chunks(k)
            .map(|row| proximity_choice(row).unwrap_or(UNASSIGNED))
            .collect();
        let mut views = self.broadcast_assignment(members, &first)?;
        for ((x, c), view) in data.iter().zip(centers.iter_mut()).zip(&views) {
            *c = update_centers(x, view, c).0;
        }
        let mut calls = (rows * k) as u64;

        self.net.set_phase("lloyd");
        let mut rounds = 0;
        let mut converged = false;
        while rounds < self.cfg.max_rounds.max(1) {
            rounds += 1;
            let partials = data
                .iter()
                .zip(&centers)
                .map(|(x, c)| squared_distances(x, c, &[0..x.cols()]))
                .collect();
            let d = self.secure_sum(members, partials)?;
            calls += (rows * k) as u64;
            let next: Vec<usize> = d.chunks(k).map(nearest).collect();
            let unchanged = next == *views.last().expect("coordinator view");
            let fresh = self.broadcast_assignment(members, &next)?;
            for ((x, c), view) in data.iter().zip(centers.iter_mut()).zip(&fresh) {
                *c = update_centers(x, view, c).0;
            }
            views = fresh;
            if unchanged {
                converged = true;
                break;
            }
        }
        Ok(Joint {
            assignment: views.pop().expect("coordinator view"),
            centers,
            rounds,
            converged,
            calls,
        })
    }

    /// The coordinator sends `assignment` to every member; returns each
    /// member's decoded copy, in member order.
    fn broadcast_assignment(&mut self, members: &[usize], assignment: &[usize]) -> Result<Vec<Vec<usize>>> {
        let coordinator = *members.last().expect("nonempty group");
        let bytes = wire::encode_assignment(assignment);
        members
            .iter()
            .map(|&m| {
                if m == coordinator {
                    Ok(assignment.to_vec())
                } else {
                    self.net.send(coordinator, m, bytes.clone())?;
                    wire::decode_assignment(&self.net.recv(m, coordinator)?)
                }
            })
            .collect()
    }

    /// Entrywise sum of the members' vectors, revealed to the coordinator
    /// only. Each entry counts as one secure aggregation.
    fn secure_sum(&mut self, members: &[usize], partials: Vec<Vec<f64>>) -> Result<Vec<f64>> {
        let coordinator = *members.last().expect("nonempty group");
        let len = partials[0].len();
        let sum = match self.cfg.mode {
            AggregationMode::Plaintext => {
                let mut sum = vec![0.0; len];
                for (&m, v) in members.iter().zip(&partials) {
                    let received = if m == coordinator {
                        v.clone()
                    } else {
                        self.net.send(m, coordinator, wire::encode_f64s(v))?;
                        wire::decode_f64s(&self.net.recv(coordinator, m)?)?
                    };
                    for (s, x) in sum.iter_mut().zip(&received) {
                        *s += x;
                    }
                }
                sum
            }
            AggregationMode::Encrypted => {
                self.ensure_sessions(members)?;
                let sessions = self.sessions.get_mut(members).expect("sessions exist");
                let mut masked = Vec::with_capacity(members.len() - 1);
                for (i, &m) in members.iter().enumerate() {
                    if m != coordinator {
                        let mv = sessions[i].mask_next(&partials[i])?;
                        self.net.send(m, coordinator, mv.to_bytes())?;
                    }
                }
                for &m in members {
                    if m != coordinator {
                        masked.push(MaskedVector::from_bytes(&self.net.recv(coordinator, m)?)?);
                    }
                }
                let last = members.len() - 1;
                sessions[last].aggregate_next(&masked, &partials[last])?
            }
        };
        self.net.record_aggregations(len as u64);
        Ok(sum)
    }

    /// Key agreement for `members`, relayed through their coordinator.
    fn ensure_sessions(&mut self, members: &[usize]) -> Result<()> {
        if self.sessions.contains_key(members) {
            return Ok(());
        }
        let phase = self.net.ledger().current_phase().to_string();
        self.net.set_phase("setup");
        let params = AggregationParams::new(
            self.cfg.group.clone(),
            self.cfg.modulus,
            self.cfg.scale,
            members.len(),
        )?;
        let group = params.group().clone();
        let coordinator = *members.last().expect("nonempty group");
        let mut keys: Vec<ParticipantKeys> = members
            .iter()
            .enumerate()
            .map(|(i, &m)| ParticipantKeys::generate(i, &group, self.key_seed(members, m)))
            .collect();
        let last = members.len() - 1;
        let mut table = Vec::with_capacity(members.len());
        for (i, &m) in members.iter().enumerate() {
            if m == coordinator {
                table.push((i, keys[i].public().clone()));
            } else {
                self.net.send(m, coordinator, public_key_to_bytes(keys[i].public()))?;
                let bytes = self.net.recv(coordinator, m)?;
                let public = crate::secagg::public_key_from_bytes(&bytes)?;
                keys[last].add_peer(i, &public, &group)?;
                table.push((i, public));
            }
        }
        let relay = wire::encode_key_table(&table);
        for (i, &m) in members.iter().enumerate() {
            if m == coordinator {
                continue;
            }
            self.net.send(coordinator, m, relay.clone())?;
            for (j, public) in wire::decode_key_table(&self.net.recv(m, coordinator)?)? {
                if j != i {
                    keys[i].add_peer(j, &public, &group)?;
                }
            }
        }
        let sessions = keys
            .into_iter()
            .map(|k| AggregationSession::new(params.clone(), k))
            .collect();
        self.sessions.insert(members.to_vec(), sessions);
        self.net.set_phase(&phase);
        Ok(())
    }

    fn key_seed(&self, members: &[usize], participant: usize) -> u64 {
        let mut h = Sha256::new();
        h.update(b"dh-secret");
        h.update(self.cfg.seed.to_le_bytes());
        for m in members {
            h.update((*m as u64).to_le_bytes());
        }
        h.update((participant as u64).to_le_bytes());
        u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
    }
}
