//! One secure-aggregation round inside a cluster.
//!
//! The round follows the single-mask protocol: every edge of the cluster's
//! communication graph agrees a pairwise seed, each user Shamir-shares its
//! seeds with every participating cluster member at threshold `t`, alive
//! users upload masked inputs, and the server cancels the masks of dropped
//! users by reconstructing their seeds from the alive members' shares.
//!
//! Recovery reveals a dropped user's pairwise seeds to the server. That is
//! acceptable for semi-honest participants and is the price of omitting the
//! self-mask of the original two-phase protocol.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::cohort::positions_in;
use crate::crypto::{
    agree_seed, expand_mask, mask_input, shamir_reconstruct, shamir_share, CryptoError, FieldElement, Seed,
    ShamirShare, MODULUS, SEED_LIMBS,
};
use crate::rng::derive_crypto_rng;
use crate::topology::{honest_alive_partition, HararyGraph};
use crate::{ClusterId, UserId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SecaggError {
    #[error("only {alive} users alive, threshold is {t}: seeds of dropped users cannot be recovered")]
    ReconstructionFailure { alive: usize, t: usize },
    #[error("graph has {graph} vertices but the cluster has {members} members")]
    GraphMismatch { graph: usize, members: usize },
    #[error("user {0} is not a member of the cluster")]
    NotAMember(UserId),
    #[error("no input for alive user {0}")]
    MissingInput(UserId),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Per-round settings that are not part of the cluster itself.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RoundConfig {
    pub cluster_id: ClusterId,
    /// Shamir threshold.
    pub t: usize,
    pub nonce: u128,
    /// Members already removed by unlearning. They keep their position on the
    /// ring but take no part in the round, leaving holes in the graph.
    pub unlearned: BTreeSet<UserId>,
}

/// Shares one holder keeps for one of an owner's pairwise seeds, one share
/// per seed limb.
pub type LimbShares = [ShamirShare<MODULUS>; SEED_LIMBS];

#[derive(Debug, Clone, PartialEq)]
pub enum PrivacyFinding {
    /// The honest alive users in `users` form a separate block of the
    /// graph, so a server colluding with the adversaries learns their
    /// partial sum.
    /// `users` is sorted; findings are ordered by smallest ring position.
    PartialSumExposed { cluster_id: ClusterId, users: Vec<UserId> },
    /// At least `t` adversarial members can pool their shares and recover
    /// any seed.
    ShamirBreach { cluster_id: ClusterId, colluders: usize, threshold: usize },
}

impl fmt::Display for PrivacyFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrivacyFinding::PartialSumExposed { users, .. } => {
                write!(f, "partial-sum-exposed users={}", join(users))
            }
            PrivacyFinding::ShamirBreach { colluders, threshold, .. } => {
                write!(f, "shamir-breach colluders={colluders} threshold={threshold}")
            }
        }
    }
}

fn join(v: &[UserId]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Everything exchanged in one round, plus the plaintext inputs kept solely
/// as a test oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTranscript {
    pub cluster_id: ClusterId,
    /// Ring order; position `i` is vertex `i` of `graph`.
    pub members: Vec<UserId>,
    pub graph: HararyGraph,
    pub t: usize,
    pub dim: usize,
    pub unlearned: BTreeSet<UserId>,
    pub dropouts: BTreeSet<UserId>,
    /// Plaintext `x_i`. Never consulted by the server-side computations.
    pub inputs: BTreeMap<UserId, Vec<FieldElement>>,
    /// Uploaded `y_i`, one per alive user.
    pub masked: BTreeMap<UserId, Vec<FieldElement>>,
    /// `(owner, peer, holder)` → shares of `s_{owner,peer}` held by `holder`.
    pub seed_shares: BTreeMap<(UserId, UserId, UserId), LimbShares>,
    /// `(dropped, alive peer)` → reconstructed seed.
    pub recovered_seeds: BTreeMap<(UserId, UserId), Seed>,
    /// `z`, present iff the round succeeded.
    pub aggregate: Option<Vec<FieldElement>>,
    pub privacy_findings: Vec<PrivacyFinding>,
}

impl RoundTranscript {
    /// Members that uploaded.
    pub fn alive(&self) -> impl Iterator<Item = UserId> + '_ {
        self.participants().filter(move |u| !self.dropouts.contains(u))
    }

    /// Members that took part in setup (everyone except unlearned users).
    pub fn participants(&self) -> impl Iterator<Item = UserId> + '_ {
        self.members.iter().copied().filter(move |u| !self.unlearned.contains(u))
    }

    pub fn bytes(&self) -> ByteCounts {
        ByteCounts::for_round(self.dim, self.graph.degree(), self.participants().count())
    }

    /// Structured-text summary of the round.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let alive = self.alive().count();
        writeln!(out, "[round]").unwrap();
        writeln!(out, "cluster_id = {}", self.cluster_id).unwrap();
        writeln!(out, "alive = {alive}").unwrap();
        writeln!(out, "dropouts = {}", self.dropouts.len()).unwrap();
        writeln!(out, "success = {}", self.aggregate.is_some()).unwrap();
        writeln!(out, "findings = {}", self.privacy_findings.len()).unwrap();
        for f in &self.privacy_findings {
            writeln!(out, "finding = {f}").unwrap();
        }
        out
    }
}

/// Analytic traffic of one user in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteCounts {
    /// `dim × 8` bytes of masked input.
    pub masked_upload: usize,
    /// Shares of every pairwise seed sent to the other participants, 16 bytes
    /// per share and one share per seed limb.
    pub share_upload: usize,
}

impl ByteCounts {
    pub fn for_round(dim: usize, degree: usize, participants: usize) -> Self {
        ByteCounts { masked_upload: dim * 8, share_upload: degree * SEED_LIMBS * participants.saturating_sub(1) * 16 }
    }

    pub fn total(&self) -> usize {
        self.masked_upload + self.share_upload
    }
}

fn nonce_rng(cfg: &RoundConfig, owner: UserId) -> rand_chacha::ChaCha20Rng {
    let n = cfg.nonce;
    derive_crypto_rng("secagg/shamir", n as u64, &[(n >> 64) as u64, cfg.cluster_id as u64, owner as u64])
}

/// Mask term that alive `peer` added for its neighbour `dropped`; the server
/// subtracts it once the seed is recovered.
fn outstanding(peer: UserId, dropped: UserId, seed: &Seed, dim: usize) -> Vec<FieldElement> {
    let m = expand_mask(seed, dim);
    if dropped > peer {
        m
    } else {
        m.into_iter().map(|e| -e).collect()
    }
}

/// Runs one aggregation round. Dropped users fail after sharing their seeds
/// and before uploading.
pub fn run_round(
    members: &[UserId],
    graph: &HararyGraph,
    inputs: &BTreeMap<UserId, Vec<FieldElement>>,
    dropouts: &BTreeSet<UserId>,
    cfg: &RoundConfig,
) -> Result<RoundTranscript, SecaggError> {
    if graph.n_vertices() != members.len() {
        return Err(SecaggError::GraphMismatch { graph: graph.n_vertices(), members: members.len() });
    }
    let member_set: BTreeSet<UserId> = members.iter().copied().collect();
    if let Some(&u) = dropouts.iter().chain(&cfg.unlearned).find(|u| !member_set.contains(u)) {
        return Err(SecaggError::NotAMember(u));
    }
    let participates = |u: &UserId| !cfg.unlearned.contains(u);
    let participants: Vec<UserId> = members.iter().copied().filter(participates).collect();
    let alive: Vec<UserId> = participants.iter().copied().filter(|u| !dropouts.contains(u)).collect();
    if alive.len() < cfg.t {
        return Err(SecaggError::ReconstructionFailure { alive: alive.len(), t: cfg.t });
    }
    let dim = match alive.first() {
        Some(u) => inputs.get(u).ok_or(SecaggError::MissingInput(*u))?.len(),
        None => 0,
    };

    // Seed agreement over the graph edges that are still present.
    let mut seeds: BTreeMap<UserId, BTreeMap<UserId, Seed>> = BTreeMap::new();
    for (a, b) in graph.edges() {
        let (ua, ub) = (members[a], members[b]);
        if participates(&ua) && participates(&ub) {
            let s = agree_seed(ua, ub, cfg.nonce)?;
            seeds.entry(ua).or_default().insert(ub, s);
            seeds.entry(ub).or_default().insert(ua, s);
        }
    }

    // Each participant shares each of its seeds with every participant.
    let k = participants.len();
    let mut seed_shares = BTreeMap::new();
    for &owner in &participants {
        let mut rng = nonce_rng(cfg, owner);
        for (&peer, seed) in seeds.get(&owner).into_iter().flatten() {
            let limbs = seed.to_limbs();
            let per_limb: Vec<Vec<ShamirShare<MODULUS>>> =
                limbs.iter().map(|&l| shamir_share(l, cfg.t, k, &mut rng)).collect::<Result<_, _>>()?;
            for (h, &holder) in participants.iter().enumerate() {
                let shares: LimbShares = std::array::from_fn(|l| per_limb[l][h]);
                seed_shares.insert((owner, peer, holder), shares);
            }
        }
    }

    // Masked upload.
    let empty = BTreeMap::new();
    let mut masked = BTreeMap::new();
    for &u in &alive {
        let x = inputs.get(&u).ok_or(SecaggError::MissingInput(u))?;
        if x.len() != dim {
            return Err(CryptoError::DimensionMismatch { expected: dim, got: x.len() }.into());
        }
        masked.insert(u, mask_input(x, u, seeds.get(&u).unwrap_or(&empty))?);
    }

    // Recovery of dropped users' seeds from the first t alive holders.
    let mut recovered_seeds = BTreeMap::new();
    for &d in participants.iter().filter(|u| dropouts.contains(u)) {
        for &peer in seeds.get(&d).into_iter().flat_map(BTreeMap::keys) {
            if dropouts.contains(&peer) {
                continue;
            }
            let held: Vec<&LimbShares> = alive.iter().take(cfg.t).map(|&h| &seed_shares[&(d, peer, h)]).collect();
            let mut limbs = [FieldElement::ZERO; SEED_LIMBS];
            for (l, limb) in limbs.iter_mut().enumerate() {
                let shares: Vec<ShamirShare<MODULUS>> = held.iter().map(|s| s[l]).collect();
                *limb = shamir_reconstruct(&shares, cfg.t)?;
            }
            recovered_seeds.insert((d, peer), Seed::from_limbs(&limbs));
        }
    }

    let mut tr = RoundTranscript {
        cluster_id: cfg.cluster_id,
        members: members.to_vec(),
        graph: graph.clone(),
        t: cfg.t,
        dim,
        unlearned: cfg.unlearned.clone(),
        dropouts: dropouts.clone(),
        inputs: inputs.iter().filter(|(u, _)| member_set.contains(u)).map(|(u, x)| (*u, x.clone())).collect(),
        masked,
        seed_shares,
        recovered_seeds,
        aggregate: None,
        privacy_findings: Vec::new(),
    };
    tr.aggregate = Some(server_aggregate(&tr));
    Ok(tr)
}

/// What the server computes from the uploads and the recovered seeds:
/// `z = Σ y_i − Σ outstanding masks of dropped users`.
pub fn server_aggregate(tr: &RoundTranscript) -> Vec<FieldElement> {
    let mut z = vec![FieldElement::ZERO; tr.dim];
    for y in tr.masked.values() {
        z.iter_mut().zip(y).for_each(|(a, b)| *a += *b);
    }
    for (&(d, peer), seed) in &tr.recovered_seeds {
        let m = outstanding(peer, d, seed, tr.dim);
        z.iter_mut().zip(&m).for_each(|(a, b)| *a -= *b);
    }
    z
}

/// Privacy findings for a server colluding with `adversarial`.
pub fn audit_privacy(tr: &RoundTranscript, adversarial: &BTreeSet<UserId>) -> Vec<PrivacyFinding> {
    let mut findings = Vec::new();
    let blocks = honest_alive_partition(
        &tr.graph,
        &positions_in(&tr.members, adversarial),
        &positions_in(&tr.members, &tr.dropouts),
        &positions_in(&tr.members, &tr.unlearned),
    );
    if blocks.len() > 1 {
        for b in blocks {
            findings.push(PrivacyFinding::PartialSumExposed {
                cluster_id: tr.cluster_id,
                users: {
                    let mut users: Vec<UserId> = b.into_iter().map(|v| tr.members[v]).collect();
                    users.sort_unstable();
                    users
                },
            });
        }
    }
    let colluders = tr.members.iter().filter(|u| adversarial.contains(u)).count();
    if colluders >= tr.t {
        findings.push(PrivacyFinding::ShamirBreach { cluster_id: tr.cluster_id, colluders, threshold: tr.t });
    }
    findings
}

/// Oracle check: the recorded aggregate, the server's recomputation from the
/// uploads, and the plaintext sum of the alive inputs all agree.
pub fn verify_transcript(tr: &RoundTranscript) -> bool {
    let Some(z) = &tr.aggregate else { return false };
    let mut plain = vec![FieldElement::ZERO; tr.dim];
    for u in tr.alive() {
        match tr.inputs.get(&u) {
            Some(x) if x.len() == tr.dim => plain.iter_mut().zip(x).for_each(|(a, b)| *a += *b),
            _ => return false,
        }
    }
    *z == plain && server_aggregate(tr) == plain
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_harary, communication_graph};

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    fn scalar_inputs(members: &[UserId]) -> BTreeMap<UserId, Vec<FieldElement>> {
        members.iter().map(|&u| (u, vec![FieldElement::new(u as u64 + 1)])).collect()
    }

    #[test]
    fn triangle_without_dropouts() {
        let members = [0, 1, 2];
        let tr = run_round(
            &members,
            &communication_graph(3),
            &scalar_inputs(&members),
            &BTreeSet::new(),
            &RoundConfig { t: 2, ..Default::default() },
        )
        .unwrap();
        assert_eq!(tr.aggregate, Some(vec![FieldElement::new(6)]));
        assert!(verify_transcript(&tr));
        assert!(audit_privacy(&tr, &BTreeSet::new()).is_empty());
    }

    #[test]
    fn ring_with_two_dropouts() {
        let members: Vec<UserId> = (10..18).collect();
        let g = build_harary(8, 2).unwrap();
        let tr = run_round(
            &members,
            &g,
            &scalar_inputs(&members),
            &set(&[12, 15]),
            &RoundConfig { t: 5, nonce: 77, ..Default::default() },
        )
        .unwrap();
        let expected: u64 = members.iter().filter(|u| ![12, 15].contains(*u)).map(|&u| u as u64 + 1).sum();
        assert_eq!(tr.aggregate, Some(vec![FieldElement::new(expected)]));
        assert_eq!(tr.recovered_seeds.len(), 4);
        assert!(verify_transcript(&tr));
    }

    #[test]
    fn too_few_alive() {
        let members: Vec<UserId> = (0..8).collect();
        let err = run_round(
            &members,
            &communication_graph(8),
            &scalar_inputs(&members),
            &set(&[0, 1, 2]),
            &RoundConfig { t: 6, ..Default::default() },
        )
        .unwrap_err();
        assert_eq!(err, SecaggError::ReconstructionFailure { alive: 5, t: 6 });
    }

    #[test]
    fn perturbed_upload_fails_verification() {
        let members = [0, 1, 2, 3];
        let mut tr = run_round(
            &members,
            &communication_graph(4),
            &scalar_inputs(&members),
            &BTreeSet::new(),
            &RoundConfig { t: 3, ..Default::default() },
        )
        .unwrap();
        tr.masked.get_mut(&2).unwrap()[0] += FieldElement::ONE;
        assert!(!verify_transcript(&tr));
    }

    #[test]
    fn audit_ring_example() {
        let members: Vec<UserId> = (0..8).collect();
        let cfg = RoundConfig { t: 3, unlearned: set(&[7]), ..Default::default() };
        let tr =
            run_round(&members, &build_harary(8, 2).unwrap(), &scalar_inputs(&members), &set(&[3, 5]), &cfg).unwrap();
        assert!(verify_transcript(&tr));
        let exposed: Vec<Vec<UserId>> = audit_privacy(&tr, &set(&[1]))
            .into_iter()
            .map(|f| match f {
                PrivacyFinding::PartialSumExposed { users, .. } => users,
                other => panic!("unexpected {other:?}"),
            })
            .collect();
        assert_eq!(exposed, vec![vec![0], vec![2], vec![4], vec![6]]);
    }

    #[test]
    fn shamir_breach() {
        let members = [0, 1, 2, 3, 4];
        let tr = run_round(
            &members,
            &communication_graph(5),
            &scalar_inputs(&members),
            &BTreeSet::new(),
            &RoundConfig { t: 3, ..Default::default() },
        )
        .unwrap();
        let f = audit_privacy(&tr, &set(&[0, 1, 2]));
        assert!(f.contains(&PrivacyFinding::ShamirBreach { cluster_id: 0, colluders: 3, threshold: 3 }));
    }

    #[test]
    fn report_lists_findings() {
        let members: Vec<UserId> = (0..8).collect();
        let mut tr = run_round(
            &members,
            &build_harary(8, 2).unwrap(),
            &scalar_inputs(&members),
            &set(&[1, 5]),
            &RoundConfig { t: 3, cluster_id: 4, ..Default::default() },
        )
        .unwrap();
        tr.privacy_findings = audit_privacy(&tr, &BTreeSet::new());
        let r = tr.report();
        assert!(r.contains("cluster_id = 4\nalive = 6\ndropouts = 2\nsuccess = true\nfindings = 2\n"), "{r}");
        assert!(
            r.contains("finding = partial-sum-exposed users=0,6,7\nfinding = partial-sum-exposed users=2,3,4\n"),
            "{r}"
        );
    }

    #[test]
    fn byte_counts() {
        let b = ByteCounts::for_round(64, 4, 10);
        assert_eq!(b.masked_upload, 512);
        assert_eq!(b.share_upload, 4 * 3 * 9 * 16);
    }
}
