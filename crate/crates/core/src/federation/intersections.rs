//! Intersections of local partitions.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Nodes sharing the same local cluster at every source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    /// Member node ids, increasing.
    pub members: Vec<u64>,
    /// Local cluster index at each source, in source order.
    pub local_clusters: Vec<usize>,
}

impl Cell {
    pub fn weight(&self) -> usize {
        self.members.len()
    }
}

/// Nonempty cells ordered lexicographically by their local cluster tuple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntersectionTable {
    sources: usize,
    cells: Vec<Cell>,
}

impl IntersectionTable {
    pub fn from_cells(sources: usize, cells: Vec<Cell>) -> Self {
        Self { sources, cells }
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.weight() as f64).collect()
    }

    /// Cell index of every member id.
    pub fn cell_of(&self) -> HashMap<u64, usize> {
        self.cells
            .iter()
            .enumerate()
            .flat_map(|(c, cell)| cell.members.iter().map(move |id| (*id, c)))
            .collect()
    }
}

/// Intersects partitions given as per-source lists of cluster members.
///
/// Every source must cover the same id set exactly once.
pub fn build_intersections(partitions: &[Vec<Vec<u64>>]) -> Result<IntersectionTable> {
    let first = partitions
        .first()
        .ok_or_else(|| Error::InvalidArgument("no partitions to intersect".into()))?;
    let mut labels: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (r, members) in first.iter().enumerate() {
        for id in members {
            if labels.insert(*id, vec![r]).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "node {id} appears twice in partition 0"
                )));
            }
        }
    }
    for (s, part) in partitions.iter().enumerate().skip(1) {
        let mut seen = 0usize;
        for (r, members) in part.iter().enumerate() {
            for id in members {
                let l = labels.get_mut(id).ok_or_else(|| {
                    Error::InvalidArgument(format!("node {id} is unknown to partition 0"))
                })?;
                if l.len() != s {
                    return Err(Error::InvalidArgument(format!(
                        "node {id} appears twice in partition {s}"
                    )));
                }
                l.push(r);
                seen += 1;
            }
        }
        if seen != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "partition {s} covers {seen} of {} nodes",
                labels.len()
            )));
        }
    }
    let mut cells: BTreeMap<Vec<usize>, Vec<u64>> = BTreeMap::new();
    for (id, key) in labels {
        cells.entry(key).or_default().push(id);
    }
    Ok(IntersectionTable {
        sources: partitions.len(),
        cells: cells
            .into_iter()
            .map(|(local_clusters, members)| Cell {
                members,
                local_clusters,
            })
            .collect(),
    })
}

/// Member ids per cluster from a row assignment.
pub fn cluster_lists(assignment: &[usize], ids: &[u64], k: usize) -> Vec<Vec<u64>> {
    let mut out = vec![Vec::new(); k];
    for (a, id) in assignment.iter().zip(ids) {
        out[*a].push(*id);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_source_keeps_nonempty_clusters() {
        let t = build_intersections(&[vec![vec![2, 0], vec![], vec![1]]]).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.cells()[0].members, vec![0, 2]);
        assert_eq!(t.cells()[1].local_clusters, vec![2]);
    }

    #[test]
    fn identical_partitions_give_one_cell_per_cluster() {
        let p = vec![vec![0, 1], vec![2], vec![3, 4, 5]];
        assert_eq!(build_intersections(&[p.clone(), p]).unwrap().len(), 3);
    }

    #[test]
    fn mismatched_ids_are_rejected() {
        assert!(build_intersections(&[vec![vec![0, 1]], vec![vec![0]]]).is_err());
        assert!(build_intersections(&[vec![vec![0, 1]], vec![vec![0, 2]]]).is_err());
        assert!(build_intersections(&[vec![vec![0, 0]]]).is_err());
        assert!(build_intersections(&[vec![vec![0]], vec![vec![0], vec![0]]]).is_err());
    }

    #[test]
    fn three_way_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100u64;
        let labels: Vec<Vec<usize>> = (0..3).map(|_| (0..n).map(|_| rng.gen_range(0..4)).collect()).collect();
        let parts: Vec<Vec<Vec<u64>>> = labels
            .iter()
            .map(|l| {
                let mut c = vec![Vec::new(); 4];
                for (id, r) in l.iter().enumerate() {
                    c[*r].push(id as u64);
                }
                c
            })
            .collect();
        let t = build_intersections(&parts).unwrap();
        let mut expected = Vec::new();
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    let members: Vec<u64> = (0..n)
                        .filter(|&i| {
                            let i = i as usize;
                            labels[0][i] == a && labels[1][i] == b && labels[2][i] == c
                        })
                        .collect();
                    if !members.is_empty() {
                        expected.push(Cell { members, local_clusters: vec![a, b, c] });
                    }
                }
            }
        }
        assert_eq!(t.cells(), expected.as_slice());
        assert_eq!(t.weights().iter().sum::<f64>(), 100.0);
    }
}
