//! Random clustering, role sampling and the four requirement predicates.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use thiserror::Error;

use crate::topology::{communication_graph, honest_alive_partition, HararyGraph};
use crate::{ClusterId, UserId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CohortError {
    #[error("infeasible clustering: {0}")]
    InfeasibleParameters(String),
}

/// A partition of users `0..N` into clusters.
///
/// Each cluster's member list is in ring order: position `i` of the list is
/// vertex `i` of the cluster's communication graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    cluster_of: Vec<ClusterId>,
    members: Vec<Vec<UserId>>,
}

impl ClusterAssignment {
    /// Builds an assignment from explicit member lists, checking that they
    /// partition `0..N`.
    pub fn from_members(members: Vec<Vec<UserId>>) -> Result<Self, CohortError> {
        let n: usize = members.iter().map(Vec::len).sum();
        let mut cluster_of = vec![usize::MAX; n];
        for (c, users) in members.iter().enumerate() {
            for &u in users {
                match cluster_of.get_mut(u) {
                    Some(slot) if *slot == usize::MAX => *slot = c,
                    _ => {
                        return Err(CohortError::InfeasibleParameters(format!(
                            "user {u} is duplicated or outside 0..{n}"
                        )))
                    }
                }
            }
        }
        Ok(ClusterAssignment { cluster_of, members })
    }

    pub fn n_users(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn cluster_of(&self, user: UserId) -> Option<ClusterId> {
        self.cluster_of.get(user).copied()
    }

    pub fn members(&self, cluster: ClusterId) -> &[UserId] {
        self.members.get(cluster).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn clusters(&self) -> impl Iterator<Item = (ClusterId, &[UserId])> + '_ {
        self.members.iter().enumerate().map(|(c, m)| (c, m.as_slice()))
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    /// Member sets keyed by cluster id.
    pub fn member_sets(&self) -> BTreeMap<ClusterId, BTreeSet<UserId>> {
        self.clusters().map(|(c, m)| (c, m.iter().copied().collect())).collect()
    }
}

/// Uniform random clustering of `N` users into `s` clusters of size `k`,
/// with the `N − sk` leftover users dealt one per cluster in a random cluster
/// order.
pub fn assign_clusters<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    s: usize,
    rng: &mut R,
) -> Result<ClusterAssignment, CohortError> {
    if k == 0 || k > n {
        return Err(CohortError::InfeasibleParameters(format!("cluster size {k} not in [1, N = {n}]")));
    }
    if s == 0 || s * k > n {
        return Err(CohortError::InfeasibleParameters(format!("{s} clusters of size {k} do not fit into N = {n}")));
    }
    let mut perm: Vec<UserId> = (0..n).collect();
    perm.shuffle(rng);
    let mut members: Vec<Vec<UserId>> = perm[..s * k].chunks(k).map(<[UserId]>::to_vec).collect();
    let mut order: Vec<ClusterId> = (0..s).collect();
    order.shuffle(rng);
    for (i, &u) in perm[s * k..].iter().enumerate() {
        members[order[i % s]].push(u);
    }
    ClusterAssignment::from_members(members)
}

/// Realized roles: adversarial `A`, dropped `D` and unlearned `Q`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Population {
    pub n_users: usize,
    pub adversarial: BTreeSet<UserId>,
    pub dropped: BTreeSet<UserId>,
    pub unlearned: BTreeSet<UserId>,
}

/// `⌊frac · n⌋`, tolerant of products such as `0.1 * 30 = 2.9999999999999996`.
pub fn role_count(n: usize, frac: f64) -> usize {
    (frac * n as f64 + 1e-9).floor().max(0.0) as usize
}

/// Draws exactly `⌊γN⌋` adversarial and `⌊δN⌋` dropped users, each set
/// uniformly without replacement and independently of the other, so the two
/// may overlap. No user starts out unlearned.
pub fn sample_population<R: Rng + ?Sized>(n: usize, gamma: f64, delta: f64, rng: &mut R) -> Population {
    let pick =
        |count: usize, rng: &mut R| -> BTreeSet<UserId> { index::sample(rng, n, count.min(n)).into_iter().collect() };
    let adversarial = pick(role_count(n, gamma), rng);
    let dropped = pick(role_count(n, delta), rng);
    Population { n_users: n, adversarial, dropped, unlearned: BTreeSet::new() }
}

/// Outcome of the four requirement predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Requirements {
    /// Every cluster has fewer than `t` adversaries.
    pub r1: bool,
    /// Every cluster keeps at least `t` users outside `D ∪ Q`.
    pub r2: bool,
    /// Every cluster's honest alive members form a connected subgraph.
    pub r3: bool,
    /// Every cluster has at most `q` unlearned users.
    pub r4: bool,
}

impl Requirements {
    pub fn all(&self) -> bool {
        self.r1 && self.r2 && self.r3 && self.r4
    }
}

/// Vertices of `members` (by ring position) that belong to `set`.
pub fn positions_in(members: &[UserId], set: &BTreeSet<UserId>) -> BTreeSet<usize> {
    members.iter().enumerate().filter(|(_, u)| set.contains(u)).map(|(i, _)| i).collect()
}

/// Whether the honest alive members of one cluster are connected in `graph`.
pub fn cluster_connected(graph: &HararyGraph, members: &[UserId], pop: &Population) -> bool {
    honest_alive_partition(
        graph,
        &positions_in(members, &pop.adversarial),
        &positions_in(members, &pop.dropped),
        &positions_in(members, &pop.unlearned),
    )
    .len()
        <= 1
}

/// Evaluates R1–R4 with each cluster communicating over
/// [`communication_graph`].
pub fn check_requirements(a: &ClusterAssignment, pop: &Population, t: usize, q: usize) -> Requirements {
    check_requirements_with(a, pop, t, q, communication_graph)
}

/// [`check_requirements`] with a caller-chosen graph per cluster size.
pub fn check_requirements_with(
    a: &ClusterAssignment,
    pop: &Population,
    t: usize,
    q: usize,
    graph_for: impl Fn(usize) -> HararyGraph,
) -> Requirements {
    let mut graphs: BTreeMap<usize, HararyGraph> = BTreeMap::new();
    let mut req = Requirements { r1: true, r2: true, r3: true, r4: true };
    for (_, members) in a.clusters() {
        let adv = members.iter().filter(|u| pop.adversarial.contains(u)).count();
        let remaining = members.iter().filter(|u| !pop.dropped.contains(u) && !pop.unlearned.contains(u)).count();
        let unlearned = members.iter().filter(|u| pop.unlearned.contains(u)).count();
        req.r1 &= adv < t;
        req.r2 &= remaining >= t;
        req.r4 &= unlearned <= q;
        if req.r3 {
            let g = graphs.entry(members.len()).or_insert_with(|| graph_for(members.len()));
            req.r3 = cluster_connected(g, members, pop);
        }
    }
    req
}
