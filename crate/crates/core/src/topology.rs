//! Harary communication graphs and connectivity queries.
//!
//! Vertices are positions `0..k` on a circle; callers map positions to user
//! ids. A `(k, m)` Harary graph joins every vertex to its `m/2` nearest
//! neighbours on each side, which makes it `m`-connected with the fewest
//! possible edges.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("cluster of size {0} is too small for a Harary graph (need at least 3)")]
    ClusterTooSmall(usize),
    #[error("invalid degree {degree} for {n_vertices} vertices (must be even and below the vertex count)")]
    InvalidDegree { n_vertices: usize, degree: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HararyGraph {
    n_vertices: usize,
    degree: usize,
    adjacency: BTreeMap<usize, Vec<usize>>,
}

/// Smallest even integer `≥ ln k`, at least 2.
pub fn choose_degree(k: usize) -> Result<usize, TopologyError> {
    if k < 3 {
        return Err(TopologyError::ClusterTooSmall(k));
    }
    let m = (k as f64).ln().ceil() as usize;
    Ok((m + m % 2).max(2))
}

pub fn build_harary(k: usize, m: usize) -> Result<HararyGraph, TopologyError> {
    if m < 2 || m % 2 == 1 || m >= k {
        return Err(TopologyError::InvalidDegree { n_vertices: k, degree: m });
    }
    let half = m / 2;
    let adjacency = (0..k)
        .map(|v| {
            let mut nbrs: Vec<usize> = (1..=half).flat_map(|i| [(v + i) % k, (v + k - i) % k]).collect();
            nbrs.sort_unstable();
            nbrs.dedup();
            (v, nbrs)
        })
        .collect();
    Ok(HararyGraph { n_vertices: k, degree: m, adjacency })
}

/// The graph a cluster of `k` members communicates over: the Harary graph
/// with [`choose_degree`] for `k ≥ 3`, and the complete graph on one or two
/// vertices otherwise.
pub fn communication_graph(k: usize) -> HararyGraph {
    match choose_degree(k) {
        Ok(m) => build_harary(k, m).expect("chosen degree is valid"),
        Err(_) => {
            let adjacency = (0..k).map(|v| (v, (0..k).filter(|&u| u != v).collect())).collect();
            HararyGraph { n_vertices: k, degree: k.saturating_sub(1), adjacency }
        }
    }
}

impl HararyGraph {
    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        self.adjacency.get(&v).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Edges as `(a, b)` with `a < b`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency.iter().flat_map(|(&v, n)| n.iter().filter(move |&&u| u > v).map(move |&u| (v, u)))
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Connected components of the subgraph induced on `keep`, each sorted,
    /// ordered by smallest vertex.
    pub fn components_within(&self, keep: &BTreeSet<usize>) -> Vec<Vec<usize>> {
        let mut seen = BTreeSet::new();
        let mut blocks = Vec::new();
        for &start in keep {
            if !seen.insert(start) {
                continue;
            }
            let mut block = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &u in self.neighbors(v) {
                    if keep.contains(&u) && seen.insert(u) {
                        block.push(u);
                        queue.push_back(u);
                    }
                }
            }
            block.sort_unstable();
            blocks.push(block);
        }
        blocks
    }
}

/// Whether the graph minus `removed` is connected. Empty and single-vertex
/// remainders count as connected.
pub fn connected_after_removal(g: &HararyGraph, removed: &BTreeSet<usize>) -> bool {
    let keep: BTreeSet<usize> = (0..g.n_vertices).filter(|v| !removed.contains(v)).collect();
    g.components_within(&keep).len() <= 1
}

/// Connected components of the honest alive vertices. Adversarial vertices do
/// not bridge honest ones: a colluding server learns the partial sum of each
/// block separately.
pub fn honest_alive_partition(
    g: &HararyGraph,
    adversarial: &BTreeSet<usize>,
    dropped: &BTreeSet<usize>,
    unlearned: &BTreeSet<usize>,
) -> Vec<Vec<usize>> {
    let keep: BTreeSet<usize> = (0..g.n_vertices)
        .filter(|v| !adversarial.contains(v) && !dropped.contains(v) && !unlearned.contains(v))
        .collect();
    g.components_within(&keep)
}
