//! Sequential and batch unlearning state machines.
//!
//! Removing a user retrains only the cluster it belongs to. The state
//! machine enforces the global request capacity `τ` and the per-cluster
//! budget `q`; a request that would push a cluster past `q` is rejected and
//! logged rather than accepted, so the rejection rate doubles as a validation
//! metric for the capacity bounds. Rejected requests still count against the
//! capacity: `τ` bounds the requests the system receives, not the ones it
//! manages to honour.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::bounds::{BoundsError, ClusterPlan};
use crate::cohort::ClusterAssignment;
use crate::{ClusterId, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnlearnMode {
    Sequential,
    Batch,
}

impl fmt::Display for UnlearnMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnlearnMode::Sequential => "seq",
            UnlearnMode::Batch => "bat",
        })
    }
}

impl FromStr for UnlearnMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "seq" | "sequential" => Ok(UnlearnMode::Sequential),
            "bat" | "batch" => Ok(UnlearnMode::Batch),
            other => Err(format!("unknown unlearning mode {other:?} (expected seq or bat)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UnlearnError {
    #[error("unlearning capacity {capacity} exhausted ({consumed} requests consumed, {requested} more requested)")]
    CapacityExhausted { capacity: u64, consumed: u64, requested: u64 },
    #[error("user {0} is not part of the clustering")]
    UnknownUser(UserId),
    #[error("user {0} has already been unlearned")]
    AlreadyUnlearned(UserId),
    #[error("cluster {cluster} would reach {would_be} removals, above the budget q = {budget}")]
    PerClusterBudgetExceeded { cluster: ClusterId, would_be: u64, budget: u64 },
    #[error("user {0} appears twice in one batch")]
    DuplicateTarget(UserId),
    #[error("operation requires {expected} mode")]
    WrongMode { expected: UnlearnMode },
    #[error(transparent)]
    Capacity(#[from] BoundsError),
}

/// Retraining work for one cluster: the members left after removal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrainJob {
    pub cluster_id: ClusterId,
    pub remaining: Vec<UserId>,
}

impl RetrainJob {
    pub fn users_retrained(&self) -> usize {
        self.remaining.len()
    }
}

/// One line of the retrain log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrainLogEntry {
    pub request_index: u64,
    pub mode: UnlearnMode,
    pub cluster_id: ClusterId,
    pub users_retrained: usize,
    pub q_i_after: u64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnlearnState {
    mode: UnlearnMode,
    capacity: u64,
    budget: u64,
    assignment: ClusterAssignment,
    removed: BTreeSet<UserId>,
    removed_per_cluster: Vec<u64>,
    requests_consumed: u64,
    next_request: u64,
    retrain_log: Vec<RetrainLogEntry>,
}

impl UnlearnState {
    /// State with an explicit capacity `τ` and per-cluster budget `q`.
    pub fn new(mode: UnlearnMode, assignment: ClusterAssignment, capacity: u64, budget: u64) -> Self {
        let s = assignment.n_clusters();
        UnlearnState {
            mode,
            capacity,
            budget,
            assignment,
            removed: BTreeSet::new(),
            removed_per_cluster: vec![0; s],
            requests_consumed: 0,
            next_request: 0,
            retrain_log: Vec::new(),
        }
    }

    /// State using the plan's capacity for `mode`. Fails if that capacity's
    /// guard is violated.
    pub fn from_plan(
        mode: UnlearnMode,
        plan: &ClusterPlan,
        assignment: ClusterAssignment,
    ) -> Result<Self, UnlearnError> {
        let capacity = match mode {
            UnlearnMode::Sequential => plan.capacity_seq,
            UnlearnMode::Batch => plan.capacity_bat,
        }
        .into_result()?;
        Ok(Self::new(mode, assignment, capacity, plan.max_unlearn_per_cluster))
    }

    pub fn mode(&self) -> UnlearnMode {
        self.mode
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn assignment(&self) -> &ClusterAssignment {
        &self.assignment
    }

    pub fn requests_consumed(&self) -> u64 {
        self.requests_consumed
    }

    pub fn removed(&self) -> &BTreeSet<UserId> {
        &self.removed
    }

    /// `q_i` for every cluster.
    pub fn removed_per_cluster(&self) -> &[u64] {
        &self.removed_per_cluster
    }

    pub fn retrain_log(&self) -> &[RetrainLogEntry] {
        &self.retrain_log
    }

    /// Members of `cluster` that have not been unlearned, in ring order.
    pub fn remaining(&self, cluster: ClusterId) -> Vec<UserId> {
        self.assignment.members(cluster).iter().copied().filter(|u| !self.removed.contains(u)).collect()
    }

    fn locate(&self, target: UserId) -> Result<ClusterId, UnlearnError> {
        let c = self.assignment.cluster_of(target).ok_or(UnlearnError::UnknownUser(target))?;
        if self.removed.contains(&target) {
            return Err(UnlearnError::AlreadyUnlearned(target));
        }
        Ok(c)
    }

    fn check_capacity(&self, requested: u64) -> Result<(), UnlearnError> {
        if self.requests_consumed + requested > self.capacity {
            return Err(UnlearnError::CapacityExhausted {
                capacity: self.capacity,
                consumed: self.requests_consumed,
                requested,
            });
        }
        Ok(())
    }

    fn log(&mut self, request_index: u64, cluster_id: ClusterId, users_retrained: usize, accepted: bool) {
        self.retrain_log.push(RetrainLogEntry {
            request_index,
            mode: self.mode,
            cluster_id,
            users_retrained,
            q_i_after: self.removed_per_cluster[cluster_id],
            accepted,
        });
    }

    /// Removes one user and retrains its cluster before anything else may
    /// happen.
    pub fn process_sequential(&mut self, target: UserId) -> Result<RetrainJob, UnlearnError> {
        if self.mode != UnlearnMode::Sequential {
            return Err(UnlearnError::WrongMode { expected: UnlearnMode::Sequential });
        }
        self.check_capacity(1)?;
        let c = self.locate(target)?;
        let index = self.next_request;
        self.next_request += 1;
        let would_be = self.removed_per_cluster[c] + 1;
        if would_be > self.budget {
            self.requests_consumed += 1;
            self.log(index, c, 0, false);
            return Err(UnlearnError::PerClusterBudgetExceeded { cluster: c, would_be, budget: self.budget });
        }
        self.removed.insert(target);
        self.removed_per_cluster[c] = would_be;
        self.requests_consumed += 1;
        let job = RetrainJob { cluster_id: c, remaining: self.remaining(c) };
        self.log(index, c, job.users_retrained(), true);
        Ok(job)
    }

    /// Removes a set of users at once; each impacted cluster retrains once.
    /// The batch is all-or-nothing.
    pub fn process_batch(&mut self, targets: &[UserId]) -> Result<Vec<RetrainJob>, UnlearnError> {
        if self.mode != UnlearnMode::Batch {
            return Err(UnlearnError::WrongMode { expected: UnlearnMode::Batch });
        }
        if targets.is_empty() {
            return Ok(Vec::new());
        }
        let mut seen = BTreeSet::new();
        let mut per_cluster: BTreeMap<ClusterId, u64> = BTreeMap::new();
        for &u in targets {
            if !seen.insert(u) {
                return Err(UnlearnError::DuplicateTarget(u));
            }
            *per_cluster.entry(self.locate(u)?).or_default() += 1;
        }
        self.check_capacity(targets.len() as u64)?;
        let index = self.next_request;
        self.next_request += 1;
        let over: Vec<(ClusterId, u64)> = per_cluster
            .iter()
            .map(|(&c, &n)| (c, self.removed_per_cluster[c] + n))
            .filter(|&(_, would_be)| would_be > self.budget)
            .collect();
        if let Some(&(cluster, would_be)) = over.first() {
            self.requests_consumed += targets.len() as u64;
            for &(c, _) in &over {
                self.log(index, c, 0, false);
            }
            return Err(UnlearnError::PerClusterBudgetExceeded { cluster, would_be, budget: self.budget });
        }
        self.removed.extend(targets);
        for (&c, &n) in &per_cluster {
            self.removed_per_cluster[c] += n;
        }
        self.requests_consumed += targets.len() as u64;
        let jobs: Vec<RetrainJob> =
            per_cluster.keys().map(|&c| RetrainJob { cluster_id: c, remaining: self.remaining(c) }).collect();
        for j in &jobs {
            self.log(index, j.cluster_id, j.users_retrained(), true);
        }
        Ok(jobs)
    }

    pub fn retrained_statistics(&self) -> RetrainStats {
        let mut q_histogram = BTreeMap::new();
        for &q in &self.removed_per_cluster {
            *q_histogram.entry(q).or_insert(0) += 1;
        }
        RetrainStats {
            total_retrained: self.retrain_log.iter().filter(|e| e.accepted).map(|e| e.users_retrained).sum(),
            q_histogram,
            max_q: self.removed_per_cluster.iter().copied().max().unwrap_or(0),
            rejected: self.retrain_log.iter().filter(|e| !e.accepted).count(),
        }
    }

    /// Writes the retrain log as CSV.
    pub fn write_log_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "request_index,mode,cluster_id,users_retrained,q_i_after,accepted")?;
        for e in &self.retrain_log {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.request_index, e.mode, e.cluster_id, e.users_retrained, e.q_i_after, e.accepted
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrainStats {
    /// Sum of `users_retrained` over accepted log entries.
    pub total_retrained: usize,
    /// `q_i` value → number of clusters with that many removals.
    pub q_histogram: BTreeMap<u64, usize>,
    pub max_q: u64,
    /// Log entries for rejected requests.
    pub rejected: usize,
}

/// Draws an unlearning target: a cluster uniformly at random, then a member
/// of it uniformly among those not yet removed and not in `excluded`.
/// Clusters without an eligible member are redrawn; `None` if no cluster has
/// one.
pub fn sample_target<R: Rng + ?Sized>(
    assignment: &ClusterAssignment,
    removed: &BTreeSet<UserId>,
    excluded: &BTreeSet<UserId>,
    rng: &mut R,
) -> Option<UserId> {
    let eligible = |c: ClusterId| -> Vec<UserId> {
        assignment.members(c).iter().copied().filter(|u| !removed.contains(u) && !excluded.contains(u)).collect()
    };
    let mut open: Vec<ClusterId> = (0..assignment.n_clusters()).collect();
    while !open.is_empty() {
        let i = rng.random_range(0..open.len());
        let users = eligible(open[i]);
        if users.is_empty() {
            open.swap_remove(i);
            continue;
        }
        return Some(users[rng.random_range(0..users.len())]);
    }
    None
}

/// `count` distinct targets drawn with [`sample_target`], stopping early if
/// the eligible users run out.
pub fn sample_batch<R: Rng + ?Sized>(
    assignment: &ClusterAssignment,
    removed: &BTreeSet<UserId>,
    excluded: &BTreeSet<UserId>,
    count: usize,
    rng: &mut R,
) -> Vec<UserId> {
    let mut taken = removed.clone();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        match sample_target(assignment, &taken, excluded, rng) {
            Some(u) => {
                taken.insert(u);
                out.push(u);
            }
            None => break,
        }
    }
    out
}
