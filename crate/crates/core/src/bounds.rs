//! Security and correctness inequalities, exceedance probabilities and
//! parameter generation.
//!
//! The three cluster-size inequalities are evaluated exactly as they are
//! stated (including their known algebraic quirks) so that sweeps reproduce
//! the expected planning behaviour. Where a brute-force truth exists, the
//! test suites compare against it and record the divergences rather than
//! correcting the formulas here.

use std::f64::consts::LN_2;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

/// Slack used when rounding `ξ·k` and `ζ·k`, so that products such as
/// `0.7 * 10 = 7.000000000000001` round to the intended integer.
const ROUNDING_SLACK: f64 = 1e-9;

/// The planning inequality a failure refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Inequality {
    /// Fewer than `t` adversaries per cluster.
    ShamirSecurity,
    /// At least `t` users survive dropout and unlearning per cluster.
    ShamirCorrectness,
    /// The honest alive users of each cluster stay connected.
    Connectivity,
}

impl fmt::Display for Inequality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Inequality::ShamirSecurity => "shamir-security",
            Inequality::ShamirCorrectness => "shamir-correctness",
            Inequality::Connectivity => "connectivity",
        })
    }
}

/// Capacity guard that was violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapacityGuard {
    /// `ζ < sqrt(N²σ ln2 / (2k⁴))`.
    Sequential,
    /// `N²/k² − 2σ ln2 + 2 ln(N/k) > 0`.
    Batch,
}

impl fmt::Display for CapacityGuard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CapacityGuard::Sequential => "sequential",
            CapacityGuard::Batch => "batch",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("infeasible parameters for {inequality}: {reason}")]
    InfeasibleParameters { inequality: Inequality, reason: String },
    #[error("infeasible plan: {0}")]
    InfeasiblePlan(String),
    #[error("{guard} capacity guard violated (guard value {value})")]
    GuardViolation { guard: CapacityGuard, value: f64 },
}

/// The seven planning inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    /// Number of users `N`.
    pub n_users: u64,
    /// Maximum fraction of adversarial users `γ`.
    pub frac_adversarial: f64,
    /// Maximum fraction of dropout users `δ`.
    pub frac_dropout: f64,
    /// Maximum fraction of unlearned users within a cluster `ζ`.
    pub frac_unlearn_per_cluster: f64,
    /// Shamir threshold rate `ξ = t/k`.
    pub shamir_rate: f64,
    /// Statistical security parameter `σ`.
    pub security_bits: u32,
    /// Correctness parameter `η`.
    pub correctness_bits: u32,
}

impl SystemParams {
    /// The worked configuration used throughout the docs:
    /// `N=200, γ=δ=ζ=0.1, ξ=0.7, σ=η=40`.
    pub fn reference() -> Self {
        SystemParams {
            n_users: 200,
            frac_adversarial: 0.1,
            frac_dropout: 0.1,
            frac_unlearn_per_cluster: 0.1,
            shamir_rate: 0.7,
            security_bits: 40,
            correctness_bits: 40,
        }
    }

    /// Range checks on individual fields plus `γ + δ < 1`.
    ///
    /// The orderings `ξ > γ`, `ξ > δ`, `ξ > ζ` are not checked here; they are
    /// reported by the inequality that needs them as
    /// [`BoundsError::InfeasibleParameters`].
    pub fn validate(&self) -> Result<(), BoundsError> {
        let bad = |m: &str| Err(BoundsError::InvalidParameter(m.to_string()));
        if self.n_users == 0 {
            return bad("n_users must be positive");
        }
        for (name, v) in
            [("gamma", self.frac_adversarial), ("delta", self.frac_dropout), ("zeta", self.frac_unlearn_per_cluster)]
        {
            if !(0.0..1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.shamir_rate > 0.0 && self.shamir_rate < 1.0) {
            return bad(&format!("xi must lie in (0, 1), got {}", self.shamir_rate));
        }
        if self.security_bits == 0 || self.correctness_bits == 0 {
            return bad("sigma and eta must be positive");
        }
        if self.frac_adversarial + self.frac_dropout >= 1.0 {
            return bad("gamma + delta must be below 1");
        }
        Ok(())
    }
}

/// Shamir security inequality:
/// `f1(k) = 2(γ² + ξ² − 2ξγ)k + (ln k − ln N − σ ln2)`.
pub fn eval_f1(k: u64, p: &SystemParams) -> Result<f64, BoundsError> {
    let (g, xi) = (p.frac_adversarial, p.shamir_rate);
    if xi <= g {
        return Err(BoundsError::InfeasibleParameters {
            inequality: Inequality::ShamirSecurity,
            reason: format!("xi ({xi}) must exceed gamma ({g})"),
        });
    }
    let k = k as f64;
    let n = p.n_users as f64;
    Ok(2.0 * (g * g + xi * xi - 2.0 * xi * g) * k + (k.ln() - n.ln() - p.security_bits as f64 * LN_2))
}

/// Shamir correctness inequality:
/// `f2(k) = 2((1−δ)² + ξ² − 2(ξ+ζ)δ + 2ξ + 2ζ)k + (ln k − ln N − η ln2)`.
pub fn eval_f2(k: u64, p: &SystemParams) -> Result<f64, BoundsError> {
    let (d, xi, z) = (p.frac_dropout, p.shamir_rate, p.frac_unlearn_per_cluster);
    if xi <= d || xi <= z {
        return Err(BoundsError::InfeasibleParameters {
            inequality: Inequality::ShamirCorrectness,
            reason: format!("xi ({xi}) must exceed both delta ({d}) and zeta ({z})"),
        });
    }
    let k = k as f64;
    let n = p.n_users as f64;
    let coeff = (1.0 - d).powi(2) + xi * xi - 2.0 * (xi + z) * d + 2.0 * xi + 2.0 * z;
    Ok(2.0 * coeff * k + (k.ln() - n.ln() - p.correctness_bits as f64 * LN_2))
}

/// Connectivity inequality: `f3(k) = −ln k · ln(k(γ+δ+ζ)) + 2σ ln2`.
///
/// When `γ+δ+ζ = 0` the product term is `ln k · (−∞)`; for `k = 1` that is
/// taken as zero, otherwise `f3` is `+∞`.
pub fn eval_f3(k: u64, p: &SystemParams) -> f64 {
    let kf = k as f64;
    let frac = p.frac_adversarial + p.frac_dropout + p.frac_unlearn_per_cluster;
    let two_sigma = 2.0 * p.security_bits as f64 * LN_2;
    if k == 1 {
        return two_sigma;
    }
    -kf.ln() * (kf * frac).ln() + two_sigma
}

/// Minimal cluster sizes satisfying each inequality, and their combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterSizes {
    pub k1: u64,
    pub k2: u64,
    pub k3: u64,
    /// `max(k1, k2, k3)`.
    pub k: u64,
    /// `⌊N/k⌋`.
    pub s: u64,
}

fn first_nonnegative(
    n: u64,
    inequality: Inequality,
    mut f: impl FnMut(u64) -> Result<f64, BoundsError>,
) -> Result<u64, BoundsError> {
    for k in 1..=n {
        if f(k)? >= 0.0 {
            return Ok(k);
        }
    }
    Err(BoundsError::InfeasibleParameters {
        inequality,
        reason: format!("no cluster size k <= N = {n} satisfies the inequality"),
    })
}

/// Ascending scan over `k ∈ [1, N]` for the smallest size satisfying each
/// of the three inequalities.
pub fn min_cluster_size(p: &SystemParams) -> Result<ClusterSizes, BoundsError> {
    p.validate()?;
    let n = p.n_users;
    let k1 = first_nonnegative(n, Inequality::ShamirSecurity, |k| eval_f1(k, p))?;
    let k2 = first_nonnegative(n, Inequality::ShamirCorrectness, |k| eval_f2(k, p))?;
    let k3 = first_nonnegative(n, Inequality::Connectivity, |k| Ok(eval_f3(k, p)))?;
    let k = k1.max(k2).max(k3);
    Ok(ClusterSizes { k1, k2, k3, k, s: n / k })
}

/// Shamir threshold `t = ⌈ξk⌉`.
pub fn shamir_threshold(k: u64, xi: f64) -> u64 {
    (xi * k as f64 - ROUNDING_SLACK).ceil().max(0.0) as u64
}

/// Per-cluster unlearning budget `q = ⌊ζk⌋`.
pub fn unlearn_budget(k: u64, zeta: f64) -> u64 {
    (zeta * k as f64 + ROUNDING_SLACK).floor().max(0.0) as u64
}

/// Upper limit on `ζ` under which the sequential capacity applies:
/// `sqrt(N²σ ln2 / (2k⁴))`.
pub fn sequential_guard(n: u64, k: u64, sigma: u32) -> f64 {
    let (n, k) = (n as f64, k as f64);
    (n * n * sigma as f64 * LN_2 / (2.0 * k.powi(4))).sqrt()
}

/// Sequential unlearning capacity `⌊sqrt(N³σ ln2 / (2k³))⌋`.
///
/// This is the bare formula; [`checked_capacity_sequential`] also enforces
/// the guard on `ζ`.
pub fn capacity_sequential(n: u64, k: u64, sigma: u32) -> u64 {
    let (n, k) = (n as f64, k as f64);
    (n.powi(3) * sigma as f64 * LN_2 / (2.0 * k.powi(3))).sqrt().floor() as u64
}

pub fn checked_capacity_sequential(n: u64, k: u64, sigma: u32, zeta: f64) -> Result<u64, BoundsError> {
    let guard = sequential_guard(n, k, sigma);
    if zeta < guard {
        Ok(capacity_sequential(n, k, sigma))
    } else {
        Err(BoundsError::GuardViolation { guard: CapacityGuard::Sequential, value: guard })
    }
}

/// Denominator of the batch capacity, `N²/k² − 2σ ln2 + 2 ln(N/k)`, which
/// doubles as its guard.
pub fn batch_guard(n: u64, k: u64, sigma: u32) -> f64 {
    let (n, k) = (n as f64, k as f64);
    n * n / (k * k) - 2.0 * sigma as f64 * LN_2 + 2.0 * (n / k).ln()
}

/// Batch unlearning capacity `⌊N²ζ² / (N²/k² − 2σ ln2 + 2 ln(N/k))⌋`.
pub fn capacity_batch(n: u64, k: u64, zeta: f64, sigma: u32) -> Result<u64, BoundsError> {
    let denom = batch_guard(n, k, sigma);
    if denom <= 0.0 {
        return Err(BoundsError::GuardViolation { guard: CapacityGuard::Batch, value: denom });
    }
    let n = n as f64;
    Ok((n * n * zeta * zeta / denom).floor() as u64)
}

/// Probability that some cluster receives more than `q` of `τ` sequential
/// requests, as the product over clusters of binomial CDFs:
/// `1 − ∏_{i=1..s} Σ_{x=0..q} C(τ,x)(1/s)^x(1−1/s)^{τ−x}`.
///
/// Evaluated in log space and clamped to `[0, 1]`.
pub fn prob_exceed_sequential(s: u64, tau: u64, q: u64) -> f64 {
    assert!(s >= 1, "at least one cluster is required");
    if q >= tau {
        return 0.0;
    }
    if s == 1 {
        // All requests land in the single cluster.
        return 1.0;
    }
    let p = 1.0 / s as f64;
    let (ln_p, ln_1p) = (p.ln(), (-p).ln_1p());
    // ln C(τ, x) built incrementally.
    let mut ln_binom = 0.0;
    let mut terms = Vec::with_capacity(q as usize + 1);
    for x in 0..=q {
        if x > 0 {
            ln_binom += ((tau - x + 1) as f64).ln() - (x as f64).ln();
        }
        terms.push(ln_binom + x as f64 * ln_p + (tau - x) as f64 * ln_1p);
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ln_cdf = (max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()).min(0.0);
    (-(s as f64 * ln_cdf).exp_m1()).clamp(0.0, 1.0)
}

/// Binomial coefficient over big integers; zero outside `0 ≤ k ≤ n`.
pub fn binomial(n: i64, k: i64) -> BigInt {
    if k < 0 || n < 0 || k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// The batch exceedance expression as an exact, unclamped rational:
/// `[C(τ+s−1, s−1) − Σ_{i=1..s−q} C(τ+s−1−i, s−1−i)] / s^τ`.
///
/// When `s − q < 1` the sum is empty.
pub fn prob_exceed_batch_exact(s: u64, tau: u64, q: u64) -> BigRational {
    assert!(s >= 1, "at least one cluster is required");
    let (s_i, t_i) = (s as i64, tau as i64);
    let mut num = binomial(t_i + s_i - 1, s_i - 1);
    let upper = s_i - q as i64;
    for i in 1..=upper {
        num -= binomial(t_i + s_i - 1 - i, s_i - 1 - i);
    }
    let den = num_traits::pow(BigInt::from(s), tau as usize);
    BigRational::new(num, den)
}

/// [`prob_exceed_batch_exact`] converted to `f64` and clamped to `[0, 1]`.
pub fn prob_exceed_batch(s: u64, tau: u64, q: u64) -> f64 {
    prob_exceed_batch_exact(s, tau, q).to_f64().unwrap_or(f64::NAN).clamp(0.0, 1.0)
}

/// A hypergeometric tail query `X ~ HG(N, pN, rN)` with deviation `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailQuery {
    pub population: u64,
    pub feature_fraction: f64,
    pub draw_fraction: f64,
    pub deviation: f64,
}

/// Upper bound `e^{−2w²rN}` on `Pr[X ≥ (p+w)rN]` (and on the symmetric lower
/// tail).
pub fn hypergeom_tail_bound(query: &TailQuery) -> f64 {
    let w = query.deviation;
    (-2.0 * w * w * query.draw_fraction * query.population as f64).exp()
}

/// An unlearning capacity, or the guard value that prevented computing it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Capacity {
    Bounded(u64),
    GuardViolated { guard: CapacityGuard, value: f64 },
}

impl Capacity {
    fn from_result(r: Result<u64, BoundsError>) -> Self {
        match r {
            Ok(v) => Capacity::Bounded(v),
            Err(BoundsError::GuardViolation { guard, value }) => Capacity::GuardViolated { guard, value },
            Err(e) => unreachable!("capacity formulas only fail on guards: {e}"),
        }
    }

    pub fn value(&self) -> Option<u64> {
        match self {
            Capacity::Bounded(v) => Some(*v),
            Capacity::GuardViolated { .. } => None,
        }
    }

    pub fn into_result(self) -> Result<u64, BoundsError> {
        match self {
            Capacity::Bounded(v) => Ok(v),
            Capacity::GuardViolated { guard, value } => Err(BoundsError::GuardViolation { guard, value }),
        }
    }
}

impl fmt::Display for Capacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Capacity::Bounded(v) => write!(f, "{v}"),
            Capacity::GuardViolated { .. } => f.write_str("guard-violated"),
        }
    }
}

/// Output of [`par_gen`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterPlan {
    pub sizes: ClusterSizes,
    /// `k`.
    pub cluster_size: u64,
    /// `s = ⌊N/k⌋`.
    pub n_clusters: u64,
    /// `t = ⌈ξk⌉`.
    pub shamir_threshold: u64,
    /// `q = ⌊ζk⌋`.
    pub max_unlearn_per_cluster: u64,
    /// `τ_seq`.
    pub capacity_seq: Capacity,
    /// `τ_bat`.
    pub capacity_bat: Capacity,
}

impl ClusterPlan {
    /// Builds a plan for an explicit cluster size, bypassing the inequality
    /// scan. Used for experiments at fixed `k`.
    pub fn for_cluster_size(p: &SystemParams, k: u64) -> Result<Self, BoundsError> {
        p.validate()?;
        if k == 0 || k > p.n_users {
            return Err(BoundsError::InfeasiblePlan(format!("cluster size {k} outside [1, N = {}]", p.n_users)));
        }
        let sizes = ClusterSizes { k1: k, k2: k, k3: k, k, s: p.n_users / k };
        Self::assemble(p, sizes)
    }

    fn assemble(p: &SystemParams, sizes: ClusterSizes) -> Result<Self, BoundsError> {
        let k = sizes.k;
        let t = shamir_threshold(k, p.shamir_rate);
        let q = unlearn_budget(k, p.frac_unlearn_per_cluster);
        if t >= k {
            return Err(BoundsError::InfeasiblePlan(format!("threshold t = {t} must be below cluster size k = {k}")));
        }
        if q >= t {
            return Err(BoundsError::InfeasiblePlan(format!(
                "unlearning budget q = {q} must be below threshold t = {t}"
            )));
        }
        let n = p.n_users;
        Ok(ClusterPlan {
            sizes,
            cluster_size: k,
            n_clusters: sizes.s,
            shamir_threshold: t,
            max_unlearn_per_cluster: q,
            capacity_seq: Capacity::from_result(checked_capacity_sequential(
                n,
                k,
                p.security_bits,
                p.frac_unlearn_per_cluster,
            )),
            capacity_bat: Capacity::from_result(capacity_batch(n, k, p.frac_unlearn_per_cluster, p.security_bits)),
        })
    }
}

/// Parameter generation: minimal cluster size from the three inequalities,
/// then threshold, per-cluster budget and both unlearning capacities.
///
/// Capacity guard violations are carried inside the plan rather than failing
/// the whole call, since the cluster size stays meaningful without them.
pub fn par_gen(p: &SystemParams) -> Result<ClusterPlan, BoundsError> {
    let sizes = min_cluster_size(p)?;
    ClusterPlan::assemble(p, sizes)
}
