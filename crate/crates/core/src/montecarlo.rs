//! Empirical failure rates of the requirements, and parameter sweeps.
//!
//! Each trial draws a fresh clustering and population from a stream derived
//! from `(master seed, requirement, trial index)`, so trials can run in any
//! order and on any number of threads while the failure count stays exact.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, Write};
use std::ops::Range;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bounds::{par_gen, BoundsError, ClusterPlan, SystemParams};
use crate::cohort::{assign_clusters, check_requirements, sample_population, ClusterAssignment, Population};
use crate::rng::derive_rng;
use crate::unlearning::{sample_batch, sample_target, UnlearnError, UnlearnMode, UnlearnState};
use crate::UserId;

/// Schema line written before the header of the estimate CSV.
pub const ESTIMATE_SCHEMA: &str = "# schema secfu-montecarlo v1";
/// Schema line written before the header of the sweep CSV.
pub const SWEEP_SCHEMA: &str = "# schema secfu-sweep v1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonteCarloError {
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("clustering failed: {0}")]
    Cohort(#[from] crate::cohort::CohortError),
    #[error("unexpected unlearning failure: {0}")]
    Unlearn(UnlearnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Requirement {
    R1,
    R2,
    R3,
    R4Seq,
    R4Bat,
    /// `R1 ∧ R3 ∧ R4` with the unlearned set produced by sequential requests.
    Joint,
}

impl Requirement {
    pub const ALL: [Requirement; 6] =
        [Requirement::R1, Requirement::R2, Requirement::R3, Requirement::R4Seq, Requirement::R4Bat, Requirement::Joint];

    fn tag(self) -> u64 {
        self as u64
    }

    /// `2^−η` for the correctness requirement, `2^−σ` otherwise.
    pub fn bound(self, p: &SystemParams) -> f64 {
        let bits = match self {
            Requirement::R2 => p.correctness_bits,
            _ => p.security_bits,
        };
        (-(bits as f64)).exp2()
    }
}

impl fmt::Display for Requirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Requirement::R1 => "R1",
            Requirement::R2 => "R2",
            Requirement::R3 => "R3",
            Requirement::R4Seq => "R4seq",
            Requirement::R4Bat => "R4bat",
            Requirement::Joint => "joint",
        })
    }
}

impl std::str::FromStr for Requirement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Requirement::ALL
            .into_iter()
            .find(|r| r.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown requirement {s:?}"))
    }
}

/// Wilson score interval at 95% confidence.
pub fn wilson_interval(failures: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    const Z: f64 = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = failures as f64 / n;
    let z2 = Z * Z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = Z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // The endpoints are exactly 0 and 1 at the extremes; pin them so rounding
    // does not leave a spurious 1e-18.
    let lo = if failures == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if failures == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub requirement: Requirement,
    pub params: SystemParams,
    pub cluster_size: u64,
    pub n_clusters: u64,
    /// Request count simulated, for the unlearning requirements.
    pub tau: Option<u64>,
    pub trials: u64,
    pub failures: u64,
    pub rate: f64,
    pub ci95: (f64, f64),
    pub bound: f64,
    /// `rate ≤ bound` and `ci95.0 ≤ bound`.
    pub pass: bool,
}

impl EstimateReport {
    pub fn new(
        requirement: Requirement,
        params: &SystemParams,
        plan: &ClusterPlan,
        tau: Option<u64>,
        trials: u64,
        failures: u64,
    ) -> Self {
        let rate = if trials == 0 { 0.0 } else { failures as f64 / trials as f64 };
        let ci95 = wilson_interval(failures, trials);
        let bound = requirement.bound(params);
        EstimateReport {
            requirement,
            params: *params,
            cluster_size: plan.cluster_size,
            n_clusters: plan.n_clusters,
            tau,
            trials,
            failures,
            rate,
            ci95,
            bound,
            pass: rate <= bound && ci95.0 <= bound,
        }
    }
}

/// Picks exactly `q` non-adversarial members of every cluster as unlearned,
/// the worst case the per-cluster budget admits.
fn worst_case_unlearned<R: Rng + ?Sized>(
    a: &ClusterAssignment,
    adversarial: &BTreeSet<UserId>,
    q: usize,
    rng: &mut R,
) -> BTreeSet<UserId> {
    let mut out = BTreeSet::new();
    for (_, members) in a.clusters() {
        let honest: Vec<UserId> = members.iter().copied().filter(|u| !adversarial.contains(u)).collect();
        let take = q.min(honest.len());
        out.extend(index::sample(rng, honest.len(), take).into_iter().map(|i| honest[i]));
    }
    out
}

/// Feeds `tau` sequential requests for honest users; returns the removed set
/// and whether any request exceeded a cluster's budget.
fn run_sequential<R: Rng + ?Sized>(
    a: ClusterAssignment,
    pop: &Population,
    tau: u64,
    q: u64,
    rng: &mut R,
) -> Result<(BTreeSet<UserId>, bool), MonteCarloError> {
    let mut st = UnlearnState::new(UnlearnMode::Sequential, a, tau, q);
    for _ in 0..tau {
        let Some(u) = sample_target(st.assignment(), st.removed(), &pop.adversarial, rng) else { break };
        match st.process_sequential(u) {
            Ok(_) => {}
            Err(UnlearnError::PerClusterBudgetExceeded { .. }) => return Ok((st.removed().clone(), true)),
            Err(e) => return Err(MonteCarloError::Unlearn(e)),
        }
    }
    Ok((st.removed().clone(), false))
}

struct TrialSetup {
    req: Requirement,
    params: SystemParams,
    k: usize,
    s: usize,
    t: usize,
    q: usize,
    tau: Option<u64>,
}

impl TrialSetup {
    fn new(req: Requirement, p: &SystemParams, plan: &ClusterPlan) -> Result<Self, MonteCarloError> {
        let tau = match req {
            Requirement::R4Seq | Requirement::Joint => Some(plan.capacity_seq.into_result()?),
            Requirement::R4Bat => Some(plan.capacity_bat.into_result()?),
            _ => None,
        };
        Ok(TrialSetup {
            req,
            params: *p,
            k: plan.cluster_size as usize,
            s: plan.n_clusters as usize,
            t: plan.shamir_threshold as usize,
            q: plan.max_unlearn_per_cluster as usize,
            tau,
        })
    }

    /// Whether the requirement fails in trial `i`.
    fn fails(&self, seed: u64, i: u64) -> Result<bool, MonteCarloError> {
        let mut rng = derive_rng("montecarlo/trial", seed, &[self.req.tag(), i]);
        let p = &self.params;
        let n = p.n_users as usize;
        let a = assign_clusters(n, self.k, self.s, &mut rng)?;
        let mut pop = sample_population(n, p.frac_adversarial, p.frac_dropout, &mut rng);
        let (t, q) = (self.t, self.q);
        Ok(match self.req {
            Requirement::R1 => !check_requirements(&a, &pop, t, q).r1,
            Requirement::R2 | Requirement::R3 => {
                pop.unlearned = worst_case_unlearned(&a, &pop.adversarial, q, &mut rng);
                let r = check_requirements(&a, &pop, t, q);
                if self.req == Requirement::R2 {
                    !r.r2
                } else {
                    !r.r3
                }
            }
            Requirement::R4Seq => run_sequential(a, &pop, self.tau.unwrap_or(0), q as u64, &mut rng)?.1,
            Requirement::R4Bat => {
                let tau = self.tau.unwrap_or(0);
                let targets = sample_batch(&a, &BTreeSet::new(), &pop.adversarial, tau as usize, &mut rng);
                let mut st = UnlearnState::new(UnlearnMode::Batch, a, tau, q as u64);
                match st.process_batch(&targets) {
                    Ok(_) => false,
                    Err(UnlearnError::PerClusterBudgetExceeded { .. }) => true,
                    Err(e) => return Err(MonteCarloError::Unlearn(e)),
                }
            }
            Requirement::Joint => {
                let (removed, exceeded) = run_sequential(a.clone(), &pop, self.tau.unwrap_or(0), q as u64, &mut rng)?;
                pop.unlearned = removed;
                let r = check_requirements(&a, &pop, t, q);
                exceeded || !r.r1 || !r.r3
            }
        })
    }
}

/// Failure rate of `req` over trials `0..trials`.
pub fn estimate_failure(
    req: Requirement,
    p: &SystemParams,
    plan: &ClusterPlan,
    trials: u64,
    master_seed: u64,
) -> Result<EstimateReport, MonteCarloError> {
    estimate_failure_over(req, p, plan, 0..trials, master_seed)
}

/// Failure rate of `req` over an explicit range of trial indices. Disjoint
/// ranges give independent estimates.
pub fn estimate_failure_over(
    req: Requirement,
    p: &SystemParams,
    plan: &ClusterPlan,
    trials: Range<u64>,
    master_seed: u64,
) -> Result<EstimateReport, MonteCarloError> {
    p.validate()?;
    let setup = TrialSetup::new(req, p, plan)?;
    let n = trials.end.saturating_sub(trials.start);
    let failures = trials
        .into_par_iter()
        .map(|i| setup.fails(master_seed, i).map(u64::from))
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(EstimateReport::new(req, p, plan, setup.tau, n, failures))
}

pub fn write_estimates_csv<W: Write>(reports: &[EstimateReport], w: &mut W) -> io::Result<()> {
    writeln!(w, "{ESTIMATE_SCHEMA}")?;
    writeln!(w, "requirement,N,gamma,delta,zeta,xi,sigma,eta,k,s,tau,trials,failures,rate,ci_low,ci_high,bound,pass")?;
    for r in reports {
        let p = &r.params;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{}",
            r.requirement,
            p.n_users,
            p.frac_adversarial,
            p.frac_dropout,
            p.frac_unlearn_per_cluster,
            p.shamir_rate,
            p.security_bits,
            p.correctness_bits,
            r.cluster_size,
            r.n_clusters,
            r.tau.map(|t| t.to_string()).unwrap_or_default(),
            r.trials,
            r.failures,
            r.rate,
            r.ci95.0,
            r.ci95.1,
            r.bound,
            r.pass
        )?;
    }
    Ok(())
}

/// Cartesian grid of planning parameters. Every list must be nonempty.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub n_users: Vec<u64>,
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
    pub zeta: Vec<f64>,
    pub xi: Vec<f64>,
    pub sigma: Vec<u32>,
    pub eta: Vec<u32>,
    /// Evaluate capacities at this cluster size instead of the ParGen one.
    pub fixed_k: Option<u64>,
}

impl SweepGrid {
    /// A one-point grid at `p`.
    pub fn around(p: &SystemParams) -> Self {
        SweepGrid {
            n_users: vec![p.n_users],
            gamma: vec![p.frac_adversarial],
            delta: vec![p.frac_dropout],
            zeta: vec![p.frac_unlearn_per_cluster],
            xi: vec![p.shamir_rate],
            sigma: vec![p.security_bits],
            eta: vec![p.correctness_bits],
            fixed_k: None,
        }
    }

    /// Points in row-major order (`N` outermost, `η` innermost).
    pub fn points(&self) -> Vec<SystemParams> {
        let mut out = Vec::new();
        for &n_users in &self.n_users {
            for &g in &self.gamma {
                for &d in &self.delta {
                    for &z in &self.zeta {
                        for &xi in &self.xi {
                            for &sigma in &self.sigma {
                                for &eta in &self.eta {
                                    out.push(SystemParams {
                                        n_users,
                                        frac_adversarial: g,
                                        frac_dropout: d,
                                        frac_unlearn_per_cluster: z,
                                        shamir_rate: xi,
                                        security_bits: sigma,
                                        correctness_bits: eta,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub params: SystemParams,
    /// The plan, or why none exists.
    pub plan: Result<ClusterPlan, BoundsError>,
}

impl SweepRow {
    pub fn feasible(&self) -> bool {
        self.plan.is_ok()
    }

    pub fn k(&self) -> Option<u64> {
        self.plan.as_ref().ok().map(|p| p.cluster_size)
    }

    pub fn tau_seq(&self) -> Option<u64> {
        self.plan.as_ref().ok().and_then(|p| p.capacity_seq.value())
    }

    pub fn tau_bat(&self) -> Option<u64> {
        self.plan.as_ref().ok().and_then(|p| p.capacity_bat.value())
    }
}

pub fn sweep(grid: &SweepGrid) -> Vec<SweepRow> {
    grid.points()
        .into_iter()
        .map(|params| {
            let plan = match grid.fixed_k {
                Some(k) => ClusterPlan::for_cluster_size(&params, k),
                None => par_gen(&params),
            };
            SweepRow { params, plan }
        })
        .collect()
}

/// Whether the present values never decrease. `None` entries are skipped.
pub fn is_nondecreasing(values: &[Option<u64>]) -> bool {
    let v: Vec<u64> = values.iter().flatten().copied().collect();
    v.windows(2).all(|w| w[0] <= w[1])
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: &mut W) -> io::Result<()> {
    writeln!(w, "{SWEEP_SCHEMA}")?;
    writeln!(w, "N,gamma,delta,zeta,xi,sigma,eta,k1,k2,k3,k,s,tau_seq,tau_bat,feasible")?;
    for r in rows {
        let p = &r.params;
        write!(
            w,
            "{},{},{},{},{},{},{},",
            p.n_users,
            p.frac_adversarial,
            p.frac_dropout,
            p.frac_unlearn_per_cluster,
            p.shamir_rate,
            p.security_bits,
            p.correctness_bits
        )?;
        match &r.plan {
            Ok(plan) => {
                let z = plan.sizes;
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},true",
                    z.k1, z.k2, z.k3, plan.cluster_size, plan.n_clusters, plan.capacity_seq, plan.capacity_bat
                )?;
            }
            Err(_) => writeln!(w, ",,,,,,,false")?,
        }
    }
    Ok(())
}
